//! The three regressors behind one fit / predict contract: extremely
//! randomized trees, epsilon-SVR with a radial kernel, and a one-hidden-layer
//! network with weight decay.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::LabeledSample;

pub mod ann;
pub mod forest;
pub mod scaler;
pub mod svr;

pub use ann::{AnnModel, AnnParams};
pub use forest::{Forest, RfParams};
pub use scaler::{FeatureScaler, TargetScaler};
pub use svr::{SvrModel, SvrParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("expected {expected} features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("solver stopped after {iterations} iterations with KKT violation {violation:.3e}")]
    Convergence { iterations: usize, violation: f64 },
    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Svr,
    Ann,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rf, ModelKind::Svr, ModelKind::Ann];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Svr => "svr",
            ModelKind::Ann => "ann",
        }
    }

    /// Label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Rf => "RF",
            ModelKind::Svr => "SVM",
            ModelKind::Ann => "ANN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf" => Some(ModelKind::Rf),
            "svr" | "svm" => Some(ModelKind::Svr),
            "ann" | "nnet" => Some(ModelKind::Ann),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One fully specified hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Rf(RfParams),
    Svr(SvrParams),
    Ann(AnnParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Rf(_) => ModelKind::Rf,
            ModelParams::Svr(_) => ModelKind::Svr,
            ModelParams::Ann(_) => ModelKind::Ann,
        }
    }

    /// Compact `name=value` rendering of the tuned axes.
    pub fn describe(&self) -> String {
        match self {
            ModelParams::Rf(p) => format!("mtry={};min_node_size={}", p.mtry, p.min_node_size),
            ModelParams::Svr(p) => format!("gamma={};cost={}", p.gamma, p.cost),
            ModelParams::Ann(p) => format!("size={};decay={}", p.size, p.decay),
        }
    }
}

/// A fitted regressor. Prediction is pure and the value is immutable after
/// fitting, so it can be shared across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Rf(Forest),
    Svr(SvrModel),
    Ann(AnnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Rf(_) => ModelKind::Rf,
            TrainedModel::Svr(_) => ModelKind::Svr,
            TrainedModel::Ann(_) => ModelKind::Ann,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Rf(m) => m.n_features(),
            TrainedModel::Svr(m) => m.n_features(),
            TrainedModel::Ann(m) => m.n_features(),
        }
    }

    /// Estimated chlorophyll-a concentration in µg/L.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features() {
            return Err(ModelError::FeatureMismatch {
                expected: self.n_features(),
                got: features.len(),
            });
        }
        Ok(match self {
            TrainedModel::Rf(m) => m.predict_unchecked(features),
            TrainedModel::Svr(m) => m.predict_unchecked(features),
            TrainedModel::Ann(m) => m.predict_unchecked(features),
        })
    }

    pub fn predict_many<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
        rows.into_iter().map(|r| self.predict(r)).collect()
    }
}

/// Fits the model described by `params` on row-major features.
pub fn fit_rows(rows: &[&[f64]], targets: &[f64], params: &ModelParams) -> Result<TrainedModel> {
    check_training_set(rows, targets)?;
    Ok(match params {
        ModelParams::Rf(p) => TrainedModel::Rf(Forest::fit(rows, targets, p)?),
        ModelParams::Svr(p) => TrainedModel::Svr(SvrModel::fit(rows, targets, p)?),
        ModelParams::Ann(p) => TrainedModel::Ann(AnnModel::fit(rows, targets, p)?),
    })
}

pub fn fit(train: &[LabeledSample], params: &ModelParams) -> Result<TrainedModel> {
    let (rows, targets) = unzip_samples(train);
    fit_rows(&rows, &targets, params)
}

pub fn fit_rf(train: &[LabeledSample], p: &RfParams) -> Result<TrainedModel> {
    fit(train, &ModelParams::Rf(p.clone()))
}

pub fn fit_svr(train: &[LabeledSample], p: &SvrParams) -> Result<TrainedModel> {
    fit(train, &ModelParams::Svr(p.clone()))
}

pub fn fit_ann(train: &[LabeledSample], p: &AnnParams) -> Result<TrainedModel> {
    fit(train, &ModelParams::Ann(p.clone()))
}

pub(crate) fn unzip_samples(samples: &[LabeledSample]) -> (Vec<&[f64]>, Vec<f64>) {
    samples
        .iter()
        .map(|s| (s.features.as_slice(), s.chl_a))
        .unzip()
}

fn check_training_set(rows: &[&[f64]], targets: &[f64]) -> Result<()> {
    if rows.is_empty() {
        return Err(ModelError::Contract("training set is empty".into()));
    }
    if rows.len() != targets.len() {
        return Err(ModelError::Contract(format!(
            "{} feature rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let p = rows[0].len();
    if p == 0 {
        return Err(ModelError::Contract("samples have no features".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != p) {
        return Err(ModelError::FeatureMismatch {
            expected: p,
            got: r.len(),
        });
    }
    if rows.iter().flat_map(|r| r.iter()).any(|v| !v.is_finite())
        || targets.iter().any(|v| !v.is_finite())
    {
        return Err(ModelError::Contract(
            "training data contains non-finite values".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing() {
        assert_eq!(ModelKind::parse("SVM"), Some(ModelKind::Svr));
        assert_eq!(ModelKind::parse("rf"), Some(ModelKind::Rf));
        assert_eq!(ModelKind::parse("tree"), None);
    }

    #[test]
    fn rejects_inconsistent_training_sets() {
        let a = [1.0, 2.0];
        let b = [1.0];
        let p = ModelParams::Rf(RfParams::new(1, 1, 2, 0));
        assert!(matches!(
            fit_rows(&[&a, &b], &[1.0, 2.0], &p),
            Err(ModelError::FeatureMismatch { .. })
        ));
        assert!(fit_rows(&[], &[], &p).is_err());
        assert!(fit_rows(&[&a], &[f64::NAN], &p).is_err());
    }

    #[test]
    fn predict_checks_feature_count() {
        let rows: Vec<&[f64]> = vec![&[1.0, 2.0], &[2.0, 1.0]];
        let m = fit_rows(
            &rows,
            &[1.0, 2.0],
            &ModelParams::Rf(RfParams::new(1, 1, 3, 0)),
        )
        .unwrap();
        assert_eq!(
            m.predict(&[1.0]),
            Err(ModelError::FeatureMismatch {
                expected: 2,
                got: 1
            })
        );
    }
}
