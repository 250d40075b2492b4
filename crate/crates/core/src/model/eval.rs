use serde::{Deserialize, Serialize};

use super::TrainedModel;
use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::stats;

/// R^2 of one model on one split. R^2 here is the squared Pearson
/// correlation of predictions and consensus scores, i.e. the fit of a
/// simple linear regression between them; it ignores sign and affine
/// miscalibration of the predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub split: String,
    pub r_squared: f64,
    pub n_images: usize,
}

pub fn evaluate_predictions(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::NoData("evaluation set is empty".into()));
    }
    stats::r_squared(predicted, observed)
}

pub fn evaluate(model: &TrainedModel, eval_set: &[LabeledImage], split: &str) -> Result<EvalReport> {
    if eval_set.is_empty() {
        return Err(Error::NoData(format!("{split} split is empty")));
    }
    let images: Vec<_> = eval_set.iter().map(|l| l.image.clone()).collect();
    let predicted = model.predict_batch(&images)?;
    let observed: Vec<f64> = eval_set.iter().map(|l| l.target).collect();
    Ok(EvalReport {
        trait_name: model.trait_name.clone(),
        split: split.to_string(),
        r_squared: evaluate_predictions(&predicted, &observed)?,
        n_images: eval_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_inverted_fits() {
        let y = [0.1, 0.4, 0.35, 0.9];
        assert!((evaluate_predictions(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        assert!((evaluate_predictions(&inv, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_pearson() {
        // y = (0, .5, 1), yhat = (.1, .4, .9): deviations (-.5, 0, .5) and
        // (-11/30, -2/30, 13/30); sxy = 24/60, sxx = 1/2, syy = 294/900
        // r^2 = (24/60)^2 / (1/2 * 294/900) = 48/49
        let r2 = evaluate_predictions(&[0.1, 0.4, 0.9], &[0.0, 0.5, 1.0]).unwrap();
        assert!((r2 - 48.0 / 49.0).abs() < 1e-12, "{r2}");
    }

    #[test]
    fn constant_inputs_are_undefined() {
        assert!(matches!(
            evaluate_predictions(&[0.2, 0.2, 0.2], &[0.0, 0.5, 1.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            evaluate_predictions(&[0.2, 0.3, 0.4], &[0.5, 0.5, 0.5]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    proptest! {
        #[test]
        fn invariant_under_affine_maps(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..40),
            slope in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            shift in -3.0f64..3.0,
        ) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(base) = evaluate_predictions(&p, &y) {
                let moved: Vec<f64> = p.iter().map(|v| slope * v + shift).collect();
                let after = evaluate_predictions(&moved, &y).unwrap();
                prop_assert!((base - after).abs() < 1e-9);
            }
        }
    }
}
