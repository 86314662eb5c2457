use serde::{Deserialize, Serialize};

/// Per-feature standardization fitted on training rows.
///
/// Uses the sample standard deviation; constant features get a scale of 1 so
/// they map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let p = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = if rows.len() > 1 {
                    (s / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform_into(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; row.len()];
        self.transform_into(row, &mut out);
        out
    }
}

/// Standardization of the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = if y.len() > 1 {
            (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let std = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        Self { mean, std }
    }

    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn transform(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizes_columns() {
        let rows: Vec<&[f64]> = vec![&[1.0, 5.0], &[3.0, 5.0]];
        let s = FeatureScaler::fit(&rows);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std[1], 1.0);
        let t = s.transform(&[3.0, 5.0]);
        assert!((t[0] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
    }

    #[test]
    fn target_round_trip() {
        let s = TargetScaler::fit(&[1.0, 2.0, 6.0]);
        assert!((s.inverse(s.transform(4.2)) - 4.2).abs() < 1e-12);
        let flat = TargetScaler::fit(&[7.0, 7.0]);
        assert_eq!(
            flat,
            TargetScaler {
                mean: 7.0,
                std: 1.0
            }
        );
    }
}
