//! Grid search with repeated k-fold cross-validation.
//!
//! Every grid point is fitted on each of the `k × repetitions` training folds
//! and scored by RMSE on the held-out fold. The point with the lowest mean
//! RMSE over all folds wins (ties: earliest in enumeration order) and is refit
//! on the full training set.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics;
use crate::models::{
    self, AnnParams, ModelError, ModelKind, ModelParams, RfParams, SvrParams, TrainedModel,
};
use crate::preprocess::LabeledSample;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("fit failed at grid point {point}: {source}")]
    Fit {
        point: String,
        #[source]
        source: ModelError,
    },
}

pub type Result<T> = std::result::Result<T, TuneError>;

/// Folds and repetitions of the cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(k: usize, repetitions: usize, seed: u64) -> Result<Self> {
        let plan = Self {
            k,
            repetitions,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(TuneError::Contract(format!(
                "need k >= 2 folds, got {}",
                self.k
            )));
        }
        if self.repetitions == 0 {
            return Err(TuneError::Contract("need at least one repetition".into()));
        }
        Ok(())
    }

    pub fn n_folds_total(&self) -> usize {
        self.k * self.repetitions
    }
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            k: 5,
            repetitions: 5,
            seed: 1,
        }
    }
}

/// `folds[rep][fold]` holds the validation indices of that fold, ascending.
pub type FoldPlan = Vec<Vec<Vec<usize>>>;

/// Per repetition, a seeded permutation of `0..n` cut into `k` folds whose
/// sizes differ by at most one (the first `n % k` folds are larger).
/// Repetition `r` shuffles with ChaCha stream `r` of the plan seed.
pub fn make_folds(n: usize, plan: &CvPlan) -> Result<FoldPlan> {
    plan.validate()?;
    if n < plan.k {
        return Err(TuneError::Contract(format!(
            "{n} samples cannot fill {} folds",
            plan.k
        )));
    }
    Ok((0..plan.repetitions)
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(rep as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let base = n / plan.k;
            let extra = n % plan.k;
            let mut start = 0;
            (0..plan.k)
                .map(|f| {
                    let len = base + usize::from(f < extra);
                    let mut fold = order[start..start + len].to_vec();
                    start += len;
                    fold.sort_unstable();
                    fold
                })
                .collect()
        })
        .collect())
}

/// Candidate values per tuned axis, plus the fixed settings of the untuned
/// ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HyperGrid {
    Rf {
        mtry: Vec<usize>,
        min_node_size: Vec<usize>,
        n_trees: usize,
        seed: u64,
    },
    Svr {
        gamma: Vec<f64>,
        cost: Vec<f64>,
        epsilon: f64,
        tolerance: f64,
    },
    Ann {
        size: Vec<usize>,
        decay: Vec<f64>,
        max_iters: usize,
        seed: u64,
    },
}

impl HyperGrid {
    /// Default grid for `n_features` inputs.
    pub fn default_for(kind: ModelKind, n_features: usize, seed: u64) -> Self {
        let p = n_features.max(1);
        let pf = p as f64;
        match kind {
            ModelKind::Rf => {
                let mut mtry = Vec::new();
                for m in [pf.sqrt().ceil() as usize, p.div_ceil(3), p.div_ceil(2), p] {
                    let m = m.clamp(1, p);
                    if !mtry.contains(&m) {
                        mtry.push(m);
                    }
                }
                HyperGrid::Rf {
                    mtry,
                    min_node_size: vec![1, 5, 10],
                    n_trees: models::forest::DEFAULT_N_TREES,
                    seed,
                }
            }
            ModelKind::Svr => HyperGrid::Svr {
                gamma: vec![0.5 / pf, 1.0 / pf, 2.0 / pf, 10.0 / pf],
                cost: vec![0.1, 1.0, 10.0, 100.0],
                epsilon: models::svr::DEFAULT_EPSILON,
                tolerance: models::svr::DEFAULT_TOLERANCE,
            },
            ModelKind::Ann => HyperGrid::Ann {
                size: vec![3, 5, 10, 15],
                decay: vec![0.0, 0.001, 0.01, 0.1],
                max_iters: models::ann::DEFAULT_MAX_ITERS,
                seed,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            HyperGrid::Rf { .. } => ModelKind::Rf,
            HyperGrid::Svr { .. } => ModelKind::Svr,
            HyperGrid::Ann { .. } => ModelKind::Ann,
        }
    }

    fn validate(&self) -> Result<()> {
        let empty = match self {
            HyperGrid::Rf {
                mtry,
                min_node_size,
                ..
            } => mtry.is_empty() || min_node_size.is_empty(),
            HyperGrid::Svr { gamma, cost, .. } => gamma.is_empty() || cost.is_empty(),
            HyperGrid::Ann { size, decay, .. } => size.is_empty() || decay.is_empty(),
        };
        if empty {
            Err(TuneError::Contract(
                "every grid axis needs at least one value".into(),
            ))
        } else {
            Ok(())
        }
    }

    pub fn len(&self) -> usize {
        match self {
            HyperGrid::Rf {
                mtry,
                min_node_size,
                ..
            } => mtry.len() * min_node_size.len(),
            HyperGrid::Svr { gamma, cost, .. } => gamma.len() * cost.len(),
            HyperGrid::Ann { size, decay, .. } => size.len() * decay.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points, first axis outermost.
    pub fn points(&self) -> Vec<ModelParams> {
        match self {
            HyperGrid::Rf {
                mtry,
                min_node_size,
                n_trees,
                seed,
            } => mtry
                .iter()
                .flat_map(|&m| {
                    min_node_size
                        .iter()
                        .map(move |&s| ModelParams::Rf(RfParams::new(m, s, *n_trees, *seed)))
                })
                .collect(),
            HyperGrid::Svr {
                gamma,
                cost,
                epsilon,
                tolerance,
            } => gamma
                .iter()
                .flat_map(|&g| {
                    cost.iter().map(move |&c| {
                        ModelParams::Svr(SvrParams {
                            gamma: g,
                            cost: c,
                            epsilon: *epsilon,
                            tolerance: *tolerance,
                        })
                    })
                })
                .collect(),
            HyperGrid::Ann {
                size,
                decay,
                max_iters,
                seed,
            } => size
                .iter()
                .flat_map(|&s| {
                    decay
                        .iter()
                        .map(move |&d| ModelParams::Ann(AnnParams::new(s, d, *max_iters, *seed)))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub point: usize,
    pub repetition: usize,
    pub fold: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub points: Vec<ModelParams>,
    pub best: usize,
    pub best_params: ModelParams,
    /// Mean validation RMSE of every grid point, in enumeration order.
    pub mean_rmse_per_point: Vec<f64>,
    /// One record per (point, repetition, fold), in that nesting order.
    pub fold_rmse: Vec<FoldScore>,
    /// Number of cross-validation fits performed (the final refit excluded).
    pub cv_fits: usize,
}

impl TuneResult {
    /// Writes `point_index,point,repetition,fold,rmse` rows.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "point_index,point,repetition,fold,rmse")?;
        for s in &self.fold_rmse {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.point,
                self.points[s.point].describe(),
                s.repetition,
                s.fold,
                s.rmse
            )?;
        }
        Ok(())
    }
}

/// Signature of the per-fold fitting routine.
pub type FitFn<'a> =
    dyn Fn(&ModelParams, &[&[f64]], &[f64]) -> models::Result<TrainedModel> + Sync + 'a;

/// Runs the grid search and refits the winner on all of `train`.
pub fn grid_search(
    train: &[LabeledSample],
    grid: &HyperGrid,
    plan: &CvPlan,
) -> Result<(TuneResult, TrainedModel)> {
    grid_search_with(train, grid, plan, &|p, rows, y| {
        models::fit_rows(rows, y, p)
    })
}

/// [`grid_search`] with a caller-supplied fitting routine.
pub fn grid_search_with(
    train: &[LabeledSample],
    grid: &HyperGrid,
    plan: &CvPlan,
    fit: &FitFn<'_>,
) -> Result<(TuneResult, TrainedModel)> {
    grid.validate()?;
    let folds = make_folds(train.len(), plan)?;
    let rows: Vec<&[f64]> = train.iter().map(|s| s.features.as_slice()).collect();
    let targets: Vec<f64> = train.iter().map(|s| s.chl_a).collect();
    let points = grid.points();

    let tasks: Vec<(usize, usize, usize)> = (0..points.len())
        .flat_map(|p| (0..plan.repetitions).flat_map(move |r| (0..plan.k).map(move |f| (p, r, f))))
        .collect();
    let fits = AtomicUsize::new(0);

    let scores: Vec<Result<FoldScore>> = tasks
        .par_iter()
        .map(|&(point, repetition, fold)| {
            let validation = &folds[repetition][fold];
            let mut held_out = vec![false; train.len()];
            validation.iter().for_each(|&i| held_out[i] = true);
            let (fit_rows, fit_targets): (Vec<&[f64]>, Vec<f64>) = (0..train.len())
                .filter(|&i| !held_out[i])
                .map(|i| (rows[i], targets[i]))
                .unzip();
            fits.fetch_add(1, Ordering::Relaxed);
            let model =
                fit(&points[point], &fit_rows, &fit_targets).map_err(|source| TuneError::Fit {
                    point: points[point].describe(),
                    source,
                })?;
            let truth: Vec<f64> = validation.iter().map(|&i| targets[i]).collect();
            let pred = validation
                .iter()
                .map(|&i| model.predict(rows[i]))
                .collect::<models::Result<Vec<f64>>>()
                .map_err(|source| TuneError::Fit {
                    point: points[point].describe(),
                    source,
                })?;
            Ok(FoldScore {
                point,
                repetition,
                fold,
                rmse: metrics::rmse(&truth, &pred),
            })
        })
        .collect();
    let fold_rmse = scores.into_iter().collect::<Result<Vec<_>>>()?;

    let per_point = plan.n_folds_total();
    let mean_rmse_per_point: Vec<f64> = fold_rmse
        .chunks(per_point)
        .map(|c| c.iter().map(|s| s.rmse).sum::<f64>() / per_point as f64)
        .collect();
    let mut best = 0;
    for (i, m) in mean_rmse_per_point.iter().enumerate() {
        let current = mean_rmse_per_point[best];
        if m < &current || (current.is_nan() && !m.is_nan()) {
            best = i;
        }
    }
    let best_params = points[best].clone();
    let model = fit(&best_params, &rows, &targets).map_err(|source| TuneError::Fit {
        point: best_params.describe(),
        source,
    })?;
    Ok((
        TuneResult {
            points,
            best,
            best_params,
            mean_rmse_per_point,
            fold_rmse,
            cv_fits: fits.into_inner(),
        },
        model,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn even_folds() {
        let folds = make_folds(20, &CvPlan::new(5, 1, 0).unwrap()).unwrap();
        assert!(folds[0].iter().all(|f| f.len() == 4));
    }

    #[test]
    fn fold_sizes_for_211() {
        let folds = make_folds(211, &CvPlan::new(5, 5, 3).unwrap()).unwrap();
        for rep in &folds {
            let sizes: Vec<usize> = rep.iter().map(|f| f.len()).collect();
            assert_eq!(sizes, vec![43, 42, 42, 42, 42]);
        }
    }

    #[test]
    fn folds_partition_and_vary_by_repetition() {
        let folds = make_folds(37, &CvPlan::new(4, 3, 9).unwrap()).unwrap();
        for rep in &folds {
            let all: Vec<usize> = rep.iter().flatten().copied().collect();
            assert_eq!(all.len(), 37);
            assert_eq!(all.iter().copied().collect::<HashSet<_>>().len(), 37);
        }
        assert_ne!(folds[0], folds[1]);
        assert_eq!(
            folds,
            make_folds(37, &CvPlan::new(4, 3, 9).unwrap()).unwrap()
        );
    }

    #[test]
    fn too_few_samples() {
        assert!(make_folds(4, &CvPlan::new(5, 1, 0).unwrap()).is_err());
        assert!(CvPlan::new(1, 1, 0).is_err());
        assert!(CvPlan::new(2, 0, 0).is_err());
    }

    #[test]
    fn default_grids() {
        let g = HyperGrid::default_for(ModelKind::Rf, 125, 1);
        match &g {
            HyperGrid::Rf { mtry, .. } => assert_eq!(mtry, &vec![12, 42, 63, 125]),
            _ => unreachable!(),
        }
        assert_eq!(g.len(), 12);
        assert_eq!(HyperGrid::default_for(ModelKind::Svr, 10, 1).len(), 16);
        assert_eq!(HyperGrid::default_for(ModelKind::Ann, 10, 1).len(), 16);
        // duplicate mtry candidates collapse for tiny feature counts
        match HyperGrid::default_for(ModelKind::Rf, 2, 1) {
            HyperGrid::Rf { mtry, .. } => assert_eq!(mtry, vec![2, 1]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn enumeration_order() {
        let g = HyperGrid::Ann {
            size: vec![1, 2],
            decay: vec![0.0, 0.5],
            max_iters: 10,
            seed: 0,
        };
        let d: Vec<String> = g.points().iter().map(|p| p.describe()).collect();
        assert_eq!(
            d,
            vec![
                "size=1;decay=0",
                "size=1;decay=0.5",
                "size=2;decay=0",
                "size=2;decay=0.5"
            ]
        );
    }
}
