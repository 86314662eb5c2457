//! Extremely randomized trees for regression.
//!
//! Every tree sees the whole training set (no bootstrap). At each node `mtry`
//! features are drawn without replacement, each gets one uniformly random cut
//! within its range over the node, and the cut with the smallest summed child
//! squared error wins. Tree `t` draws from ChaCha stream `t` of the forest
//! seed, so trees are independent of build order and thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Default forest size.
pub const DEFAULT_N_TREES: usize = 500;

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    /// Candidate features per node.
    pub mtry: usize,
    /// Minimum number of datapoints in a node.
    pub min_node_size: usize,
    pub n_trees: usize,
    pub seed: u64,
}

impl RfParams {
    pub fn new(mtry: usize, min_node_size: usize, n_trees: usize, seed: u64) -> Self {
        Self {
            mtry,
            min_node_size,
            n_trees,
            seed,
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.mtry == 0 || self.mtry > n_features {
            return Err(ModelError::Contract(format!(
                "mtry must lie in [1, {n_features}], got {}",
                self.mtry
            )));
        }
        if self.min_node_size == 0 {
            return Err(ModelError::Contract(
                "min_node_size must be at least 1".into(),
            ));
        }
        if self.n_trees == 0 {
            return Err(ModelError::Contract("n_trees must be at least 1".into()));
        }
        Ok(())
    }
}

/// Flat node arrays; `feature[i] == u32::MAX` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    feature: Vec<u32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
}

impl Tree {
    fn with_capacity(n: usize) -> Self {
        Self {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
        }
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.feature.iter().filter(|f| **f == LEAF).count()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            let f = self.feature[node];
            if f == LEAF {
                return self.value[node];
            }
            node = if x[f as usize] <= self.threshold[node] {
                self.left[node]
            } else {
                self.right[node]
            } as usize;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    params: RfParams,
    n_features: usize,
    target_min: f64,
    target_max: f64,
    trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(rows: &[&[f64]], targets: &[f64], params: &RfParams) -> Result<Self> {
        let p = rows[0].len();
        params.validate(p)?;
        let columns: Vec<Vec<f64>> = (0..p)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        let builder = TreeBuilder {
            columns: &columns,
            targets,
            mtry: params.mtry,
            min_node_size: params.min_node_size,
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                builder.build(&mut rng)
            })
            .collect();
        let (target_min, target_max) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            });
        Ok(Self {
            params: params.clone(),
            n_features: p,
            target_min,
            target_max,
            trees,
        })
    }

    pub fn params(&self) -> &RfParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        // averaging leaf means cannot leave the target range except by rounding
        (sum / self.trees.len() as f64).clamp(self.target_min, self.target_max)
    }
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    targets: &'a [f64],
    mtry: usize,
    min_node_size: usize,
}

struct Candidate {
    feature: usize,
    cut: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(&self, rng: &mut ChaCha8Rng) -> Tree {
        let n = self.targets.len();
        let p = self.columns.len();
        let mut index: Vec<u32> = (0..n as u32).collect();
        let mut features: Vec<usize> = (0..p).collect();
        let mut tree = Tree::with_capacity(2 * n);
        let mut scratch = Scratch {
            values: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
        };

        // (node id, range start, range end); a node id is reserved on push
        let mut stack = vec![(tree.push_leaf(0.0), 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            let idx = &mut index[lo..hi];
            let (sum, y_min, y_max) =
                idx.iter()
                    .fold((0.0, f64::INFINITY, f64::NEG_INFINITY), |(s, a, b), &i| {
                        let y = self.targets[i as usize];
                        (s + y, a.min(y), b.max(y))
                    });
            let count = idx.len();
            tree.value[node] = sum / count as f64;
            if count < 2 * self.min_node_size || y_min == y_max {
                continue;
            }
            let Some(best) = self.best_split(idx, sum, &mut features, &mut scratch, rng) else {
                continue;
            };
            let column = &self.columns[best.feature];
            let split = partition(idx, |i| column[i as usize] <= best.cut);

            let left = tree.push_leaf(0.0);
            let right = tree.push_leaf(0.0);
            tree.feature[node] = best.feature as u32;
            tree.threshold[node] = best.cut;
            tree.left[node] = left as u32;
            tree.right[node] = right as u32;
            stack.push((right, lo + split, hi));
            stack.push((left, lo, lo + split));
        }
        tree
    }

    fn best_split(
        &self,
        idx: &[u32],
        sum: f64,
        features: &mut [usize],
        scratch: &mut Scratch,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        let n = idx.len();
        let p = features.len();
        scratch.targets.clear();
        scratch
            .targets
            .extend(idx.iter().map(|&i| self.targets[i as usize]));
        let mut best: Option<Candidate> = None;
        for k in 0..self.mtry {
            // partial Fisher-Yates: features[..mtry] becomes a uniform draw
            let j = rng.random_range(k..p);
            features.swap(k, j);
            let feature = features[k];
            let column = &self.columns[feature];

            scratch.values.clear();
            scratch
                .values
                .extend(idx.iter().map(|&i| column[i as usize]));
            let values = &scratch.values;
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let u: f64 = rng.random();
            if lo == hi {
                continue;
            }
            let mut cut = lo + u * (hi - lo);
            if cut >= hi {
                cut = lo;
            }

            let (n_left, sum_left) =
                values
                    .iter()
                    .zip(&scratch.targets)
                    .fold((0usize, 0.0), |(c, s), (&v, &y)| {
                        let left = v <= cut;
                        (c + left as usize, s + if left { y } else { 0.0 })
                    });
            let n_right = n - n_left;
            if n_left < self.min_node_size || n_right < self.min_node_size {
                continue;
            }
            let sum_right = sum - sum_left;
            // SSE_left + SSE_right = const - (S_l^2 / n_l + S_r^2 / n_r)
            let score =
                -(sum_left * sum_left / n_left as f64 + sum_right * sum_right / n_right as f64);
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(Candidate {
                    feature,
                    cut,
                    score,
                });
            }
        }
        best
    }
}

/// Per-tree buffers reused across nodes.
struct Scratch {
    values: Vec<f64>,
    targets: Vec<f64>,
}

/// Stable-order-agnostic in-place partition; returns the number of elements
/// satisfying `pred`, which end up at the front.
fn partition(idx: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut split = 0;
    for k in 0..idx.len() {
        if pred(idx[k]) {
            idx.swap(split, k);
            split += 1;
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fit(rows: &[Vec<f64>], y: &[f64], params: &RfParams) -> Forest {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        Forest::fit(&refs, y, params).unwrap()
    }

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect();
        let y = rows.iter().map(|r| r[0]).collect();
        (rows, y)
    }

    #[test]
    fn constant_targets_give_constant_predictions() {
        let (rows, _) = toy(30, 1);
        let y = vec![42.0; rows.len()];
        let f = fit(&rows, &y, &RfParams::new(2, 1, 20, 3));
        for x in [[0.0, 0.0], [5.0, 100.0], [-3.0, 2.0]] {
            assert_eq!(f.predict_unchecked(&x), 42.0);
        }
        assert!(f.trees().iter().all(|t| t.node_count() == 1));
    }

    #[test]
    fn toy_target_equals_feature_zero() {
        // 20 training points, target = x0; held-out RMSE well below the
        // target spread
        let (rows, y) = toy(20, 11);
        let (test_rows, test_y) = toy(200, 12);
        let f = fit(&rows, &y, &RfParams::new(2, 1, 200, 5));
        let pred: Vec<f64> = test_rows.iter().map(|r| f.predict_unchecked(r)).collect();
        let rmse = crate::metrics::rmse(&test_y, &pred);
        let mean = test_y.iter().sum::<f64>() / test_y.len() as f64;
        let sd =
            (test_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / test_y.len() as f64).sqrt();
        assert!(rmse < 0.2 * sd, "rmse {rmse} vs sd {sd}");
    }

    #[test]
    fn predictions_stay_within_training_range() {
        let (rows, y) = toy(40, 2);
        let f = fit(&rows, &y, &RfParams::new(1, 3, 50, 9));
        let (lo, hi) = y
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let x = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
            let p = f.predict_unchecked(&x);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let (rows, y) = toy(50, 3);
        let a = fit(&rows, &y, &RfParams::new(2, 2, 30, 77));
        let b = fit(&rows, &y, &RfParams::new(2, 2, 30, 77));
        assert_eq!(a, b);
        let c = fit(&rows, &y, &RfParams::new(2, 2, 30, 78));
        assert_ne!(a, c);
    }

    #[test]
    fn training_order_does_not_matter() {
        let (rows, y) = toy(60, 4);
        let a = fit(&rows, &y, &RfParams::new(2, 1, 25, 5));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.reverse();
        let rows2: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let y2: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let b = fit(&rows2, &y2, &RfParams::new(2, 1, 25, 5));
        for r in &rows {
            assert!((a.predict_unchecked(r) - b.predict_unchecked(r)).abs() < 1e-9);
        }
    }

    #[test]
    fn fully_grown_trees_interpolate_training_data() {
        let (rows, y) = toy(30, 6);
        let f = fit(&rows, &y, &RfParams::new(2, 1, 10, 1));
        for (r, t) in rows.iter().zip(&y) {
            assert!((f.predict_unchecked(r) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn leaves_respect_min_node_size() {
        let (rows, y) = toy(100, 7);
        let f = fit(&rows, &y, &RfParams::new(2, 10, 5, 1));
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        for tree in f.trees() {
            let mut counts = vec![0usize; tree.node_count()];
            for r in &refs {
                let mut node = 0;
                while tree.feature[node] != LEAF {
                    node = if r[tree.feature[node] as usize] <= tree.threshold[node] {
                        tree.left[node]
                    } else {
                        tree.right[node]
                    } as usize;
                }
                counts[node] += 1;
            }
            for (i, c) in counts.iter().enumerate() {
                if tree.feature[i] == LEAF {
                    assert!(*c >= 10);
                }
            }
        }
    }

    #[test]
    fn mtry_is_validated() {
        let (rows, y) = toy(10, 8);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(Forest::fit(&refs, &y, &RfParams::new(3, 1, 5, 0)).is_err());
        assert!(Forest::fit(&refs, &y, &RfParams::new(0, 1, 5, 0)).is_err());
        assert!(Forest::fit(&refs, &y, &RfParams::new(1, 0, 5, 0)).is_err());
    }
}
