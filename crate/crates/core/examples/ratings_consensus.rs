//! Simulate a crowd rating a set of faces on a 1-7 scale, aggregate the
//! judgements into consensus scores and measure split-half reliability.
//!
//! ```bash
//! cargo run -p crowdface --example ratings_consensus -- [images] [raters] [noise]
//! ```

use crowdface::ratings::{aggregate, split_half_reliability, trait_stats, RatingRecord};
use crowdface::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn main() -> crowdface::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n_images = args.first().copied().unwrap_or(500.0) as usize;
    let n_raters = args.get(1).copied().unwrap_or(30.0) as usize;
    let noise = args.get(2).copied().unwrap_or(1.2);

    let mut rng = seed::rng(seed::derive(11, "example-ratings"));
    let truth: Vec<f64> = (0..n_images).map(|_| rng.random_range(2.0..6.0)).collect();
    let jitter = Normal::new(0.0, noise).expect("finite sigma");
    let mut records = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for r in 0..n_raters {
            // Each rater sees about a third of the images.
            if rng.random_bool(1.0 / 3.0) {
                let raw = (t + jitter.sample(&mut rng)).round().clamp(1.0, 7.0) as i64;
                records.push(RatingRecord::new(&format!("face_{i:04}"), &format!("rater_{r:02}"), "trustworthy", raw));
            }
        }
    }

    let scores = aggregate(&records)?;
    let st = trait_stats(&scores, "trustworthy")?;
    println!("{} judgements over {} images", records.len(), scores.len());
    println!("mean {:.3}  std {:.3}  mean within-image std {:.3}  mean raters/image {:.2}",
        st.mean_of_ratings, st.std_of_ratings, st.mean_std_of_ratings, st.mean_num_of_ratings);
    for s in 0..3 {
        let rel = split_half_reliability(&records, "trustworthy", s)?;
        println!("split-half R^2 (seed {s}): {:.3} over {} images, halves {}/{}",
            rel.r_squared, rel.n_images, rel.n_raters_half_a, rel.n_raters_half_b);
    }
    Ok(())
}
