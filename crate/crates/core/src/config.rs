//! Experiment configuration: a TOML file whose every key is optional.
//!
//! ```toml
//! seed = 1
//! models = ["rf", "svr", "ann"]
//!
//! [simulate]
//! n = 422
//! noise_sd = 0.2
//!
//! [preprocess]
//! resolutions = [4, 8, 12, 20]
//! variants = ["raw", "der"]
//!
//! [split]
//! ratio = 0.5
//!
//! [cv]
//! k = 5
//! repetitions = 5
//!
//! [grids.rf]
//! min_node_size = [1, 5]
//! ```
//!
//! `seed` drives every random step; `[split].seed`, `[cv].seed` and the
//! per-model `seed` keys override it individually.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::ModelKind;
use crate::pipeline::PreprocessConfig;
use crate::spectra::Variant;
use crate::synthgen::{BioOpticalModel, CampaignConfig, ConcentrationProfile};
use crate::tuning::{CvPlan, HyperGrid};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub water_bodies: usize,
    pub noise_sd: f64,
    pub burst_len: usize,
    pub visit_len: usize,
    pub profile: ConcentrationProfile,
    pub model: BioOpticalModel,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let c = CampaignConfig::default();
        Self {
            n: c.n,
            water_bodies: c.water_bodies,
            noise_sd: c.noise_sd,
            burst_len: c.burst_len,
            visit_len: c.visit_len,
            profile: c.profile,
            model: c.model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub window_nm: [f64; 2],
    pub outlier_k: f64,
    pub max_gap_s: i64,
    pub resolutions: Vec<f64>,
    pub variants: Vec<String>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        Self {
            window_nm: [p.window_nm.0, p.window_nm.1],
            outlier_k: p.outlier_k,
            max_gap_s: p.max_gap_s,
            resolutions: p.resolutions,
            variants: p.variants.iter().map(|v| v.tag().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub k: Option<usize>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfGridOverride {
    pub mtry: Option<Vec<usize>>,
    pub min_node_size: Option<Vec<usize>>,
    pub n_trees: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrGridOverride {
    pub gamma: Option<Vec<f64>>,
    pub cost: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnGridOverride {
    pub size: Option<Vec<usize>>,
    pub decay: Option<Vec<f64>>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverrides {
    pub rf: RfGridOverride,
    pub svr: SvrGridOverride,
    pub ann: AnnGridOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub models: Vec<String>,
    pub simulate: SimulateSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
    pub cv: CvSection,
    pub grids: GridOverrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            models: ModelKind::ALL.iter().map(|k| k.tag().to_string()).collect(),
            simulate: SimulateSection::default(),
            preprocess: PreprocessSection::default(),
            split: SplitSection::default(),
            cv: CvSection::default(),
            grids: GridOverrides::default(),
        }
    }
}

pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_kinds()?;
        self.preprocess_config()?;
        self.cv_plan()?;
        let r = self.split_ratio();
        if !(r > 0.0 && r < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "split ratio must lie in (0, 1), got {r}"
            )));
        }
        if !(self.simulate.noise_sd >= 0.0) {
            return Err(ConfigError::Invalid("noise_sd must be nonnegative".into()));
        }
        self.simulate
            .profile
            .validate()
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn model_kinds(&self) -> Result<Vec<ModelKind>, ConfigError> {
        let mut kinds = Vec::new();
        for m in &self.models {
            let k = ModelKind::parse(m)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown model '{m}'")))?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if kinds.is_empty() {
            return Err(ConfigError::Invalid("no models selected".into()));
        }
        Ok(kinds)
    }

    pub fn campaign(&self) -> CampaignConfig {
        let s = &self.simulate;
        CampaignConfig {
            n: s.n,
            profile: s.profile.clone(),
            water_bodies: s.water_bodies,
            noise_sd: s.noise_sd,
            burst_len: s.burst_len,
            visit_len: s.visit_len,
            seed: self.seed,
            model: s.model.clone(),
        }
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig, ConfigError> {
        let p = &self.preprocess;
        let variants = p
            .variants
            .iter()
            .map(|v| {
                Variant::parse(v)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown variant '{v}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if variants.is_empty() || p.resolutions.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one resolution and one variant are required".into(),
            ));
        }
        if p.resolutions.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ConfigError::Invalid("resolutions must be positive".into()));
        }
        if !(p.window_nm[0] < p.window_nm[1]) {
            return Err(ConfigError::Invalid(
                "wavelength window must be increasing".into(),
            ));
        }
        if !(p.outlier_k > 0.0) || p.max_gap_s < 0 {
            return Err(ConfigError::Invalid(
                "outlier_k must be positive and max_gap_s nonnegative".into(),
            ));
        }
        Ok(PreprocessConfig {
            window_nm: (p.window_nm[0], p.window_nm[1]),
            outlier_k: p.outlier_k,
            max_gap_s: p.max_gap_s,
            resolutions: p.resolutions.clone(),
            variants,
        })
    }

    pub fn split_ratio(&self) -> f64 {
        self.split.ratio.unwrap_or(DEFAULT_SPLIT_RATIO)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn cv_plan(&self) -> Result<CvPlan, ConfigError> {
        let d = CvPlan::default();
        CvPlan::new(
            self.cv.k.unwrap_or(d.k),
            self.cv.repetitions.unwrap_or(d.repetitions),
            self.cv.seed.unwrap_or(self.seed),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Default grid for `kind` at `n_features` inputs with overrides applied.
    pub fn grid(&self, kind: ModelKind, n_features: usize) -> HyperGrid {
        let mut grid = HyperGrid::default_for(kind, n_features, self.seed);
        match &mut grid {
            HyperGrid::Rf {
                mtry,
                min_node_size,
                n_trees,
                seed,
            } => {
                let o = &self.grids.rf;
                if let Some(v) = &o.mtry {
                    *mtry = v.clone();
                }
                if let Some(v) = &o.min_node_size {
                    *min_node_size = v.clone();
                }
                if let Some(v) = o.n_trees {
                    *n_trees = v;
                }
                if let Some(v) = o.seed {
                    *seed = v;
                }
            }
            HyperGrid::Svr {
                gamma,
                cost,
                epsilon,
                tolerance,
            } => {
                let o = &self.grids.svr;
                if let Some(v) = &o.gamma {
                    *gamma = v.clone();
                }
                if let Some(v) = &o.cost {
                    *cost = v.clone();
                }
                if let Some(v) = o.epsilon {
                    *epsilon = v;
                }
                if let Some(v) = o.tolerance {
                    *tolerance = v;
                }
            }
            HyperGrid::Ann {
                size,
                decay,
                max_iters,
                seed,
            } => {
                let o = &self.grids.ann;
                if let Some(v) = &o.size {
                    *size = v.clone();
                }
                if let Some(v) = &o.decay {
                    *decay = v.clone();
                }
                if let Some(v) = o.max_iters {
                    *max_iters = v;
                }
                if let Some(v) = o.seed {
                    *seed = v;
                }
            }
        }
        grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("", "inline").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(
            cfg.preprocess_config().unwrap(),
            PreprocessConfig::default()
        );
        assert_eq!(cfg.cv_plan().unwrap(), CvPlan::default());
        assert_eq!(cfg.split_ratio(), 0.5);
        assert_eq!(cfg.model_kinds().unwrap(), ModelKind::ALL.to_vec());
        assert_eq!(cfg.simulate.n, 422);
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(
            ExperimentConfig::from_toml(&cfg.to_toml(), "x").unwrap(),
            cfg
        );
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 9\n[cv]\nk = 3\n[grids.ann]\nsize = [2]\n[split]\nseed = 4\n",
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.cv_plan().unwrap(), CvPlan::new(3, 5, 9).unwrap());
        assert_eq!(cfg.split_seed(), 4);
        match cfg.grid(ModelKind::Ann, 10) {
            HyperGrid::Ann {
                size, decay, seed, ..
            } => {
                assert_eq!(size, vec![2]);
                assert_eq!(decay.len(), 4);
                assert_eq!(seed, 9);
            }
            g => panic!("unexpected grid {g:?}"),
        }
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("models = [\"knn\"]", "x").is_err());
        assert!(ExperimentConfig::from_toml("[split]\nratio = 1.0", "x").is_err());
        assert!(ExperimentConfig::from_toml("[cv]\nk = 1", "x").is_err());
        assert!(ExperimentConfig::from_toml("unknown = 3", "x").is_err());
    }
}
