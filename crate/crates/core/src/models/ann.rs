//! Single-hidden-layer network: logistic hidden units, linear output, trained
//! on standardized features and targets by full-batch gradient descent with a
//! backtracking (Armijo) line search.
//!
//! Loss: `mean((o - y)²) + decay * (‖W1‖² + ‖w2‖²)`, biases unpenalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scaler::{FeatureScaler, TargetScaler};
use super::{ModelError, Result};

pub const DEFAULT_MAX_ITERS: usize = 500;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnParams {
    /// Hidden units.
    pub size: usize,
    /// Weight-decay coefficient.
    pub decay: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl AnnParams {
    pub fn new(size: usize, decay: f64, max_iters: usize, seed: u64) -> Self {
        Self {
            size,
            decay,
            max_iters,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(ModelError::Contract("size must be at least 1".into()));
        }
        if !(self.decay >= 0.0) || !self.decay.is_finite() {
            return Err(ModelError::Contract(format!(
                "decay must be a nonnegative number, got {}",
                self.decay
            )));
        }
        Ok(())
    }
}

/// Network weights. The flat parameter order is `[w1 (row-major, size × p),
/// b1, w2, b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub n_inputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Network {
    pub fn zeros(n_inputs: usize, size: usize) -> Self {
        Self {
            n_inputs,
            w1: vec![0.0; size * n_inputs],
            b1: vec![0.0; size],
            w2: vec![0.0; size],
            b2: 0.0,
        }
    }

    /// Every weight and bias uniform in [-0.5, 0.5].
    pub fn random(n_inputs: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-0.5..=0.5)).collect() };
        let w1 = draw(size * n_inputs);
        let b1 = draw(size);
        let w2 = draw(size);
        let b2 = draw(1)[0];
        Self {
            n_inputs,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn size(&self) -> usize {
        self.b1.len()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + 2 * self.b1.len() + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(n_inputs: usize, size: usize, flat: &[f64]) -> Self {
        let (w1, rest) = flat.split_at(size * n_inputs);
        let (b1, rest) = rest.split_at(size);
        let (w2, rest) = rest.split_at(size);
        Self {
            n_inputs,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        }
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let p = self.n_inputs;
        let mut out = self.b2;
        for (h, (b, v)) in self.b1.iter().zip(&self.w2).enumerate() {
            let row = &self.w1[h * p..(h + 1) * p];
            let z = dot(row, x) + b;
            out += v * logistic(z);
        }
        out
    }

    fn penalty(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    /// Training loss and its gradient (as a network of partial derivatives)
    /// over row-major inputs `x` (`n × p`) and targets `y`.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[f64], decay: f64) -> (f64, Network) {
        let mut pre = vec![0.0; y.len() * self.size()];
        project(&self.w1, &self.b1, x, self.n_inputs, &mut pre);
        self.loss_and_gradient_from_pre(&pre, x, y, decay)
    }

    /// [`Network::loss_and_gradient`] given the hidden pre-activations
    /// `pre` (`n × size`) of this network on `x`.
    fn loss_and_gradient_from_pre(
        &self,
        pre: &[f64],
        x: &[f64],
        y: &[f64],
        decay: f64,
    ) -> (f64, Network) {
        let p = self.n_inputs;
        let size = self.size();
        let n = y.len();
        let mut g = Network::zeros(p, size);
        let mut sse = 0.0;
        let mut hidden = vec![0.0; size];
        for ((xi, zi), &yi) in x.chunks_exact(p).zip(pre.chunks_exact(size)).zip(y) {
            let mut out = self.b2;
            for ((slot, z), v) in hidden.iter_mut().zip(zi).zip(&self.w2) {
                *slot = logistic(*z);
                out += v * *slot;
            }
            let r = out - yi;
            sse += r * r;
            let dr = 2.0 * r / n as f64;
            g.b2 += dr;
            for (h, &a) in hidden.iter().enumerate() {
                g.w2[h] += dr * a;
                let delta = dr * self.w2[h] * a * (1.0 - a);
                g.b1[h] += delta;
                for (gw, v) in g.w1[h * p..(h + 1) * p].iter_mut().zip(xi) {
                    *gw += delta * v;
                }
            }
        }
        for (gw, w) in g.w1.iter_mut().zip(&self.w1) {
            *gw += 2.0 * decay * w;
        }
        for (gw, w) in g.w2.iter_mut().zip(&self.w2) {
            *gw += 2.0 * decay * w;
        }
        (sse / n as f64 + decay * self.penalty(), g)
    }
}

/// Loss history of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent with Armijo backtracking. The first trial step
/// of each iteration is the Barzilai-Borwein step from the previous one.
///
/// Returns the trained network and the loss after every accepted step.
pub fn train(
    mut net: Network,
    x: &[f64],
    y: &[f64],
    decay: f64,
    max_iters: usize,
) -> Result<(Network, TrainingTrace)> {
    let p = net.n_inputs;
    let size = net.size();
    let n = y.len();
    let (mut loss, mut grad) = net.loss_and_gradient(x, y, decay);
    if !loss.is_finite() {
        return Err(ModelError::Divergence { iteration: 0 });
    }
    let mut losses = vec![loss];
    let mut step = 1.0;

    // hidden pre-activations for the current weights and along -grad
    let mut pre = vec![0.0; n * size];
    let mut dir_pre = vec![0.0; n * size];
    let mut trial_pre = vec![0.0; n * size];
    project(&net.w1, &net.b1, x, p, &mut pre);

    for iteration in 1..=max_iters {
        let g_flat = grad.to_flat();
        let g_norm2: f64 = g_flat.iter().map(|v| v * v).sum();
        if g_norm2.sqrt() < GRAD_TOL {
            break;
        }
        project(&grad.w1, &grad.b1, x, p, &mut dir_pre);

        let mut accepted = None;
        let mut t = step;
        for _ in 0..MAX_HALVINGS {
            for ((tp, a), d) in trial_pre.iter_mut().zip(&pre).zip(&dir_pre) {
                *tp = a - t * d;
            }
            let trial_loss = loss_at(&net, &grad, t, &trial_pre, y, decay);
            if !trial_loss.is_finite() && t < 1e-300 {
                return Err(ModelError::Divergence { iteration });
            }
            if trial_loss.is_finite() && trial_loss <= loss - ARMIJO_C * t * g_norm2 {
                accepted = Some((t, trial_loss));
                break;
            }
            t *= 0.5;
        }
        let Some((t, new_loss)) = accepted else {
            // no descent along the gradient at machine precision
            break;
        };

        let old_flat = net.to_flat();
        let new_flat: Vec<f64> = old_flat
            .iter()
            .zip(&g_flat)
            .map(|(w, g)| w - t * g)
            .collect();
        net = Network::from_flat(p, size, &new_flat);
        std::mem::swap(&mut pre, &mut trial_pre);
        let (l, new_grad) = net.loss_and_gradient_from_pre(&pre, x, y, decay);
        if !l.is_finite() {
            return Err(ModelError::Divergence { iteration });
        }
        debug_assert!((l - new_loss).abs() <= 1e-8 * l.abs().max(1.0));

        // Barzilai-Borwein: s = -t g_old, r = g_new - g_old
        let new_g_flat = new_grad.to_flat();
        let (mut ss, mut sr) = (0.0, 0.0);
        for (go, gn) in g_flat.iter().zip(&new_g_flat) {
            let s = -t * go;
            ss += s * s;
            sr += s * (gn - go);
        }
        step = if sr > 0.0 { ss / sr } else { 2.0 * t };

        loss = l;
        grad = new_grad;
        losses.push(loss);
    }
    Ok((net, TrainingTrace { losses }))
}

/// `out[i, h] = w[h] · x_i + b[h]`.
fn project(w: &[f64], b: &[f64], x: &[f64], p: usize, out: &mut [f64]) {
    let size = b.len();
    for (xi, o) in x.chunks_exact(p).zip(out.chunks_exact_mut(size)) {
        for h in 0..size {
            let row = &w[h * p..(h + 1) * p];
            o[h] = dot(row, xi) + b[h];
        }
    }
}

/// Dot product with four independent accumulators, which lets the compiler
/// vectorize the loop.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = a_rest.iter().zip(b_rest).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Loss of `net - t * grad` given its hidden pre-activations.
fn loss_at(net: &Network, grad: &Network, t: f64, pre: &[f64], y: &[f64], decay: f64) -> f64 {
    let size = net.size();
    let w2: Vec<f64> = net
        .w2
        .iter()
        .zip(&grad.w2)
        .map(|(w, g)| w - t * g)
        .collect();
    let b2 = net.b2 - t * grad.b2;
    let mut sse = 0.0;
    for (z, yi) in pre.chunks_exact(size).zip(y) {
        let out: f64 = z
            .iter()
            .zip(&w2)
            .map(|(zh, v)| v * logistic(*zh))
            .sum::<f64>()
            + b2;
        sse += (out - yi) * (out - yi);
    }
    let w1_pen: f64 = net
        .w1
        .iter()
        .zip(&grad.w1)
        .map(|(w, g)| {
            let v = w - t * g;
            v * v
        })
        .sum();
    let w2_pen: f64 = w2.iter().map(|v| v * v).sum();
    sse / y.len() as f64 + decay * (w1_pen + w2_pen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    params: AnnParams,
    feature_scaler: FeatureScaler,
    target_scaler: TargetScaler,
    network: Network,
}

impl AnnModel {
    pub fn fit(rows: &[&[f64]], targets: &[f64], params: &AnnParams) -> Result<Self> {
        Self::fit_traced(rows, targets, params).map(|(m, _)| m)
    }

    pub fn fit_traced(
        rows: &[&[f64]],
        targets: &[f64],
        params: &AnnParams,
    ) -> Result<(Self, TrainingTrace)> {
        params.validate()?;
        let p = rows[0].len();
        let feature_scaler = FeatureScaler::fit(rows);
        let target_scaler = TargetScaler::fit(targets);
        let mut x = vec![0.0; rows.len() * p];
        for (r, out) in rows.iter().zip(x.chunks_exact_mut(p)) {
            feature_scaler.transform_into(r, out);
        }
        let y: Vec<f64> = targets
            .iter()
            .map(|&t| target_scaler.transform(t))
            .collect();
        let init = Network::random(p, params.size, params.seed);
        let (network, trace) = train(init, &x, &y, params.decay, params.max_iters)?;
        Ok((
            Self {
                params: params.clone(),
                feature_scaler,
                target_scaler,
                network,
            },
            trace,
        ))
    }

    /// Assembles a model from explicit parts.
    pub fn from_parts(
        params: AnnParams,
        feature_scaler: FeatureScaler,
        target_scaler: TargetScaler,
        network: Network,
    ) -> Self {
        Self {
            params,
            feature_scaler,
            target_scaler,
            network,
        }
    }

    pub fn params(&self) -> &AnnParams {
        &self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn n_features(&self) -> usize {
        self.network.n_inputs
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.feature_scaler.transform(x);
        self.target_scaler.inverse(self.network.forward(&z))
    }
}
