//! Regression metrics: coefficient of determination, RMSE and MAE.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction length {pred} does not match {truth} reference values")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no values to evaluate")]
    Empty,
    /// The reference values have zero variance. RMSE and MAE are still
    /// reported.
    #[error("R² undefined: reference values have zero variance (rmse {rmse}, mae {mae})")]
    UndefinedR2 { rmse: f64, mae: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `1 - SS_res / SS_tot`; may be negative.
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let sse: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    (sse / y_true.len() as f64).sqrt()
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let sae: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    sae / y_true.len() as f64
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = y_true.len() as f64;
    let rmse = rmse(y_true, y_pred);
    let mae = mae(y_true, y_pred);
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::UndefinedR2 { rmse, mae });
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(Metrics {
        r2: 1.0 - ss_res / ss_tot,
        rmse,
        mae,
        n: y_true.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction() {
        let m = evaluate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.r2, m.rmse, m.mae, m.n), (1.0, 0.0, 0.0, 3));
    }

    #[test]
    fn constant_prediction_hand_example() {
        // SS_res = 1 + 0 + 1 + 4 = 6, SS_tot = 2.25 + 0.25 + 0.25 + 2.25 = 5
        let m = evaluate(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap();
        assert_abs_diff_eq!(m.r2, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(m.rmse, 1.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.mae, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_variance_reference() {
        match evaluate(&[0.0; 3], &[1.0; 3]) {
            Err(MetricsError::UndefinedR2 { rmse, mae }) => {
                assert_eq!(rmse, 1.0);
                assert_eq!(mae, 1.0);
            }
            other => panic!("expected UndefinedR2, got {other:?}"),
        }
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(evaluate(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(
            evaluate(&[1.0, 2.0], &[1.0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let y = [1.0, 2.0, 4.0, 8.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        assert_eq!(evaluate(&y, &[mean; 4]).unwrap().r2, 0.0);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..50)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(rmse(&t, &p) >= mae(&t, &p) * (1.0 - 1e-12));
        }

        #[test]
        fn r2_is_affine_invariant(
            pairs in prop::collection::vec((-1e2..1e2f64, -1e2..1e2f64), 3..30),
            scale in 0.1..10.0f64,
            shift in -50.0..50.0f64,
        ) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let Ok(base) = evaluate(&t, &p) else { return Ok(()); };
            let t2: Vec<f64> = t.iter().map(|v| scale * v + shift).collect();
            let p2: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
            let moved = evaluate(&t2, &p2).unwrap();
            prop_assert!((base.r2 - moved.r2).abs() <= 1e-8 * base.r2.abs().max(1.0));
        }
    }
}
