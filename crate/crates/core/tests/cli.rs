use std::path::Path;
use std::process::{Command, Output};

fn crowdface(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdface"))
        .current_dir(dir)
        .env_remove("CROWDFACE_OUT")
        .env_remove("CROWDFACE_RATINGS")
        .env_remove("CROWDFACE_IMAGES")
        .env_remove("CROWDFACE_CHECKPOINT")
        .env_remove("CROWDFACE_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = crowdface(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["ingest", "stats", "split", "train", "search", "eval", "explain", "stream", "synth"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
    assert!(crowdface(dir.path(), &["--version"]).status.success());
}

#[test]
fn usage_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = crowdface(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=usage message="));
}

#[test]
fn runtime_errors_carry_their_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = crowdface(dir.path(), &["ingest", "--ratings", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=io message="), "{}", stderr(&o));

    std::fs::write(dir.path().join("bad.csv"), "image_id,rater_id,trait,raw_score\na,r1,warm,9\n").unwrap();
    let o = crowdface(dir.path(), &["ingest", "--ratings", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=rejected_record"), "{}", stderr(&o));

    let o = crowdface(dir.path(), &["split", "--n", "5"]);
    assert!(stderr(&o).starts_with("error kind=insufficient_data"), "{}", stderr(&o));
}

#[test]
fn ingest_then_stats_with_env_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("image_id,rater_id,trait,raw_score\n");
    for i in 0..40 {
        for r in 0..6 {
            csv.push_str(&format!("img{i},r{r},warm,{}\n", 1 + (i + r) % 7));
        }
    }
    std::fs::write(dir.path().join("ratings.csv"), csv).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_crowdface"))
        .current_dir(dir.path())
        .env("CROWDFACE_RATINGS", "ratings.csv")
        .env("CROWDFACE_OUT", "results")
        .arg("ingest")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let consensus = dir.path().join("results/consensus/consensus.csv");
    assert_eq!(std::fs::read_to_string(&consensus).unwrap().lines().count(), 41);
    let m = manifest(&dir.path().join("results/consensus/manifest.json"));
    assert_eq!(m["command"], "ingest");

    let o = crowdface(dir.path(), &["stats", "--ratings", "ratings.csv", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: serde_json::Value = manifest(&dir.path().join("out/stats/stats.json"));
    assert_eq!(rows[0]["trait"], "warm");
    assert_eq!(rows[0]["n_images"], 40);
    assert_eq!(rows[0]["mean_num_of_ratings"], 6.0);
    assert!(rows[0]["reliability"]["r_squared"].is_number());
}

#[test]
fn split_is_reproducible_from_the_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(crowdface(dir.path(), &["split", "--n", "6300", "--seed", "17", "--out", "a"]).status.success());
    assert!(crowdface(dir.path(), &["split", "--n", "6300", "--seed", "17", "--out", "b"]).status.success());
    let a = std::fs::read_to_string(dir.path().join("a/split/split.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/split/split.json")).unwrap();
    assert_eq!(a, b);
    let s: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(s["train_ids"].as_array().unwrap().len(), 5040);
    assert_eq!(s["val_ids"].as_array().unwrap().len(), 630);
    assert_eq!(s["test_ids"].as_array().unwrap().len(), 630);
    assert_eq!(manifest(&dir.path().join("a/split/manifest.json"))["seed"], 17);
}

#[test]
fn small_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let o = crowdface(d, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    ok(&["synth", "--n", "120", "--side", "16", "--seed", "2"]);
    assert!(d.join("out/synth/images/synth_00000.png").exists() || std::fs::read_dir(d.join("out/synth/images")).unwrap().count() == 120);
    let data = ["--ratings", "out/synth/consensus.csv", "--images", "out/synth/images"];
    let mut train = vec!["train"];
    train.extend(data);
    train.extend(["--preset", "basic6", "--shrink", "16", "--segments", "2", "--epochs", "2", "--patience", "0"]);
    ok(&train);
    for f in ["model.ckpt", "history.csv", "split.json", "manifest.json"] {
        assert!(d.join("out/train").join(f).exists(), "{f}");
    }
    let mut eval = vec!["eval", "--checkpoint", "out/train/model.ckpt", "--split", "out/train/split.json"];
    eval.extend(data);
    ok(&eval);
    let report = manifest(&d.join("out/eval/report.json"));
    assert_eq!(report["split"], "test");
    assert_eq!(report["n_images"], 12);

    ok(&["explain", "--checkpoint", "out/train/model.ckpt", "--images", "out/synth/images", "--limit", "3"]);
    for f in ["heatmap.csv", "overlay.png", "average_face.png", "filters/filters.png"] {
        assert!(d.join("out/explain").join(f).exists(), "{f}");
    }
    let o = crowdface(d, &["explain", "--checkpoint", "out/train/model.ckpt", "--images", "out/synth/images", "--layer", "999"]);
    assert!(stderr(&o).starts_with("error kind=invalid_layer"), "{}", stderr(&o));

    ok(&["stream", "--checkpoint", "out/train/model.ckpt", "--images", "out/synth/images", "--fps", "25"]);
    let lines = std::fs::read_to_string(d.join("out/stream/scores.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 120);
    for f in ["series.csv", "histogram.csv", "series.png", "histogram.png"] {
        assert!(d.join("out/stream").join(f).exists(), "{f}");
    }

    let mut search = vec!["search"];
    search.extend(data);
    std::fs::write(
        d.join("space.toml"),
        "image_side = 16\nfilter_choices = [2, 4]\nsegments = { lo = 1, hi = 2 }\nfc_width = { lo = 4, hi = 8 }\n",
    )
    .unwrap();
    search.extend(["--config", "space.toml", "--budget", "3", "--strategy", "random", "--epochs", "1", "--refine-epochs", "2", "--refine-variants", "1"]);
    ok(&search);
    assert_eq!(std::fs::read_to_string(d.join("out/search/trials.jsonl")).unwrap().lines().count(), 3);
    assert!(d.join("out/search/best.ckpt").exists());
}
