//! Robust conformal training of a linear-softmax model.
//!
//! Each training batch is split into a calibration half and a prediction
//! half. The pipeline is
//!
//! 1. smoothed HPS: `m_ik = 1 - mean_j softmax(W (x_i + d_ij) + b)_k` over
//!    `n_train` fixed Gaussian draws, `S~_ik = Phi^-1(clamp(m_ik))`;
//! 2. soft threshold `tau` over the calibration half's ground-truth scores,
//!    inflated to `tau_adj = tau + epsilon / sigma`;
//! 3. soft membership `c_ik = logistic((tau_adj - S~_ik) / T_train)` on the
//!    prediction half;
//! 4. loss `mean(1 - c_{i,y_i}) + lambda mean(max(0, sum_k c_ik - kappa))`.
//!
//! Gradients are exact for fixed noise draws and are propagated by hand.
//!
//! The soft threshold solves `sum_i logistic((tau - s_i) / T_q) = level (n + 1)`
//! for `tau`; its gradient follows from the implicit function theorem. This
//! replaces smooth sorting: it is as differentiable, checkable by finite
//! differences, and costs `O(n log(1/tol))`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{bail, Error, Result};
use crate::model::{softmax_in_place, LinearSoftmaxModel};
use crate::ptt::logistic;
use crate::rng::{keyed_rng, TAG_RCT};
use crate::smoothing::{inv_cdf_unchecked, std_normal_pdf};

/// Clamp band for `Phi^-1` during training; keeps `1 / phi` below about 2e5.
pub const TRAIN_CLAMP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RctConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Noise draws per example and step.
    pub n_train: usize,
    pub t_train: f64,
    pub t_q: f64,
    pub lambda: f64,
    pub kappa: f64,
    /// Fraction of each batch used for the soft threshold.
    pub cal_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RctConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epsilon: 0.125,
            sigma: 0.25,
            n_train: 8,
            t_train: 0.1,
            t_q: 0.1,
            lambda: 0.1,
            kappa: 1.0,
            cal_fraction: 0.5,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 200,
            seed: 0,
        }
    }
}

impl RctConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Config, "alpha must lie in (0, 1), got {}", self.alpha);
        }
        if !(self.epsilon >= 0.0 && self.sigma > 0.0) {
            bail!(Config, "need epsilon >= 0 and sigma > 0");
        }
        if self.n_train < 1 {
            bail!(Config, "n_train must be at least 1");
        }
        if !(self.t_train > 0.0 && self.t_q > 0.0) {
            bail!(Config, "temperatures must be positive");
        }
        if !(self.lambda >= 0.0 && self.learning_rate > 0.0) {
            bail!(Config, "need lambda >= 0 and a positive learning rate");
        }
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            bail!(Config, "cal_fraction must lie in (0, 1), got {}", self.cal_fraction);
        }
        if self.batch_size < 2 {
            bail!(Config, "batch_size must be at least 2");
        }
        Ok(())
    }

    /// Sizes of the calibration and prediction halves of an `n`-example batch.
    pub fn split_sizes(&self, n: usize) -> (usize, usize) {
        let cal = libm::floor(n as f64 * self.cal_fraction) as usize;
        (cal, n - cal)
    }
}

/// Soft `level`-quantile of `scores` with the finite-sample correction
/// (target count `level (n + 1)`), and `d tau / d s_i`.
pub fn soft_quantile(scores: &[f64], level: f64, t_q: f64) -> Result<(f64, Vec<f64>)> {
    let n = scores.len();
    if n == 0 {
        bail!(Argument, "soft quantile of an empty score list");
    }
    if !(t_q > 0.0) {
        bail!(Argument, "temperature must be positive, got {t_q}");
    }
    if scores.iter().any(|s| !s.is_finite()) {
        bail!(Data, "scores must be finite");
    }
    let target = level * (n as f64 + 1.0);
    if !(target > 0.0 && target < n as f64) {
        bail!(Config, "target count {target} for level {level} is outside (0, {n}); the batch is too small");
    }
    let count = |tau: f64| scores.iter().map(|&s| logistic((tau - s) / t_q)).sum::<f64>();
    let (lo_s, hi_s) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    // Every term is at most (at least) target/n at the lower (upper) end.
    let shift = t_q * libm::log(target / (n as f64 - target));
    let (mut lo, mut hi) = (lo_s + shift, hi_s + shift);
    while hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);
    let weights = |tau: f64| -> Vec<f64> {
        scores
            .iter()
            .map(|&s| {
                let c = logistic((tau - s) / t_q);
                c * (1.0 - c)
            })
            .collect()
    };
    // One Newton step removes the remaining bisection error.
    let w = weights(tau);
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        let step = (count(tau) - target) * t_q / total;
        if step.abs() <= hi - lo {
            tau -= step;
        }
    }
    let w = weights(tau);
    let total: f64 = w.iter().sum();
    let grad = if total > 0.0 {
        w.iter().map(|wi| wi / total).collect()
    } else {
        // All weights underflowed: tau sits on a single score.
        let nearest = scores
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &s)| if (s - tau).abs() < b.1 { (i, (s - tau).abs()) } else { b })
            .0;
        let mut g = vec![0.0; n];
        g[nearest] = 1.0;
        g
    };
    Ok((tau, grad))
}

/// `logistic((tau_adj - score) / T_train)`.
pub fn soft_prediction(score: f64, tau_adj: f64, t_train: f64) -> f64 {
    logistic((tau_adj - score) / t_train)
}

/// Gaussian draws `d_ij` for one training step, `n x n_train x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct RctNoise {
    n_train: usize,
    dim: usize,
    values: Vec<f64>,
}

impl RctNoise {
    /// Draws keyed by `(seed, epoch, step, example, draw)`.
    pub fn draw(cfg: &RctConfig, epoch: u64, step: u64, n: usize, dim: usize) -> Self {
        let mut values = Vec::with_capacity(n * cfg.n_train * dim);
        for i in 0..n {
            for j in 0..cfg.n_train {
                let mut rng = keyed_rng(cfg.seed, &[TAG_RCT, epoch, step, i as u64, j as u64]);
                for _ in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    values.push(cfg.sigma * z);
                }
            }
        }
        Self { n_train: cfg.n_train, dim, values }
    }

    fn delta(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n_train + j) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// Intermediate quantities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RctForward {
    /// `n x K` clamped smoothed HPS means.
    pub mean: Vec<f64>,
    /// `n x K` values `Phi^-1(mean)`.
    pub tilde: Vec<f64>,
    pub n_cal: usize,
    pub tau_soft: f64,
    /// `d tau_soft / d S~_{i, y_i}` for the calibration examples.
    pub tau_grad: Vec<f64>,
    pub tau_adj: f64,
    /// `n_pred x K` soft memberships.
    pub soft: Vec<f64>,
    pub class_loss: f64,
    pub size_loss: f64,
    pub loss: f64,
}

fn check_batch(batch: &LabeledDataset, model: &LinearSoftmaxModel, cfg: &RctConfig, noise: &RctNoise) -> Result<()> {
    cfg.validate()?;
    model.validate()?;
    if batch.dim() != model.input_dim || batch.num_classes() != model.num_classes {
        bail!(Argument, "batch shape does not match the model");
    }
    if noise.dim != batch.dim()
        || noise.n_train != cfg.n_train
        || noise.values.len() != batch.len() * cfg.n_train * batch.dim()
    {
        bail!(Argument, "noise block does not match the batch");
    }
    let (n_cal, n_pred) = cfg.split_sizes(batch.len());
    if n_cal == 0 || n_pred == 0 {
        bail!(Argument, "batch of {} cannot be split into non-empty halves", batch.len());
    }
    Ok(())
}

/// Smoothed HPS means with the training clamp, plus per-draw probabilities.
fn smoothed_means(batch: &LabeledDataset, model: &LinearSoftmaxModel, noise: &RctNoise) -> (Vec<f64>, Vec<f64>) {
    let (n, k, d) = (batch.len(), model.num_classes, model.input_dim);
    let j_count = noise.n_train;
    let mut probs = vec![0.0; n * j_count * k];
    let mut mean = vec![0.0; n * k];
    let mut x = vec![0.0; d];
    for i in 0..n {
        for j in 0..j_count {
            for ((xv, a), dlt) in x.iter_mut().zip(batch.input(i)).zip(noise.delta(i, j)) {
                *xv = a + dlt;
            }
            let p = &mut probs[(i * j_count + j) * k..(i * j_count + j + 1) * k];
            model.logits_into(&x, p);
            softmax_in_place(p);
            for c in 0..k {
                mean[i * k + c] += (1.0 - p[c]) / j_count as f64;
            }
        }
    }
    (mean, probs)
}

/// Loss and intermediates for `batch` under fixed noise. The first
/// `floor(n * cal_fraction)` examples form the calibration half.
pub fn rct_forward(
    batch: &LabeledDataset,
    model: &LinearSoftmaxModel,
    cfg: &RctConfig,
    noise: &RctNoise,
) -> Result<RctForward> {
    check_batch(batch, model, cfg, noise)?;
    let k = model.num_classes;
    let (n_cal, n_pred) = cfg.split_sizes(batch.len());
    let (raw, _) = smoothed_means(batch, model, noise);
    if raw.iter().any(|m| !m.is_finite()) {
        bail!(Numeric, "non-finite smoothed score; logits overflowed");
    }
    let mean: Vec<f64> = raw.iter().map(|m| m.clamp(TRAIN_CLAMP_EPS, 1.0 - TRAIN_CLAMP_EPS)).collect();
    let tilde: Vec<f64> = mean.iter().map(|&m| inv_cdf_unchecked(m)).collect();
    let cal_scores: Vec<f64> = (0..n_cal).map(|i| tilde[i * k + batch.label(i)]).collect();
    let (tau_soft, tau_grad) = soft_quantile(&cal_scores, 1.0 - cfg.alpha, cfg.t_q)?;
    let tau_adj = tau_soft + cfg.epsilon / cfg.sigma;
    let mut soft = vec![0.0; n_pred * k];
    let (mut class_loss, mut size_loss) = (0.0, 0.0);
    for p in 0..n_pred {
        let i = n_cal + p;
        let row = &mut soft[p * k..(p + 1) * k];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = soft_prediction(tilde[i * k + c], tau_adj, cfg.t_train);
        }
        class_loss += 1.0 - row[batch.label(i)];
        size_loss += (row.iter().sum::<f64>() - cfg.kappa).max(0.0);
    }
    class_loss /= n_pred as f64;
    size_loss /= n_pred as f64;
    let loss = class_loss + cfg.lambda * size_loss;
    if !loss.is_finite() {
        bail!(Numeric, "non-finite loss (class {class_loss}, size {size_loss}, tau {tau_soft})");
    }
    Ok(RctForward { mean, tilde, n_cal, tau_soft, tau_grad, tau_adj, soft, class_loss, size_loss, loss })
}

/// Gradient of the loss with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RctGradient {
    /// `K x d`, same layout as the model weights.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub forward: RctForward,
}

/// Exact gradient of [`rct_forward`]'s loss for the given noise.
pub fn rct_gradient(
    batch: &LabeledDataset,
    model: &LinearSoftmaxModel,
    cfg: &RctConfig,
    noise: &RctNoise,
) -> Result<RctGradient> {
    let fwd = rct_forward(batch, model, cfg, noise)?;
    let (n, k, d) = (batch.len(), model.num_classes, model.input_dim);
    let (n_cal, n_pred) = cfg.split_sizes(n);
    let inv_pred = 1.0 / n_pred as f64;

    // dL/dS~ for every (example, class).
    let mut g_tilde = vec![0.0; n * k];
    let mut g_tau = 0.0;
    for p in 0..n_pred {
        let i = n_cal + p;
        let row = &fwd.soft[p * k..(p + 1) * k];
        let over = row.iter().sum::<f64>() - cfg.kappa > 0.0;
        for c in 0..k {
            let mut g_c = if over { cfg.lambda * inv_pred } else { 0.0 };
            if c == batch.label(i) {
                g_c -= inv_pred;
            }
            let dc_du = row[c] * (1.0 - row[c]) / cfg.t_train;
            g_tau += g_c * dc_du;
            g_tilde[i * k + c] -= g_c * dc_du;
        }
    }
    for i in 0..n_cal {
        g_tilde[i * k + batch.label(i)] += g_tau * fwd.tau_grad[i];
    }

    // dL/dm through the clamp and Phi^-1.
    let (raw, probs) = smoothed_means(batch, model, noise);
    let g_mean: Vec<f64> = (0..n * k)
        .map(|ic| {
            let m = raw[ic];
            if m > TRAIN_CLAMP_EPS && m < 1.0 - TRAIN_CLAMP_EPS {
                g_tilde[ic] / std_normal_pdf(fwd.tilde[ic])
            } else {
                0.0
            }
        })
        .collect();

    let j_count = noise.n_train;
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut g_p = vec![0.0; k];
    let mut x = vec![0.0; d];
    for i in 0..n {
        for j in 0..j_count {
            let p = &probs[(i * j_count + j) * k..(i * j_count + j + 1) * k];
            for c in 0..k {
                g_p[c] = -g_mean[i * k + c] / j_count as f64;
            }
            let dot: f64 = p.iter().zip(&g_p).map(|(a, b)| a * b).sum();
            for ((xv, a), dlt) in x.iter_mut().zip(batch.input(i)).zip(noise.delta(i, j)) {
                *xv = a + dlt;
            }
            for c in 0..k {
                let g_z = p[c] * (g_p[c] - dot);
                gb[c] += g_z;
                for (g, xv) in gw[c * d..(c + 1) * d].iter_mut().zip(&x) {
                    *g += g_z * xv;
                }
            }
        }
    }
    Ok(RctGradient { weights: gw, bias: gb, forward: fwd })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctOutcome {
    pub model: LinearSoftmaxModel,
    /// Mean batch loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Gradient descent on the robust conformal loss, starting from
/// `initial`. Examples are reshuffled every epoch with a seeded permutation;
/// noise is redrawn every step. A trailing batch too small for the soft
/// threshold is skipped.
pub fn train_rct(data: &LabeledDataset, initial: &LinearSoftmaxModel, cfg: &RctConfig) -> Result<RctOutcome> {
    cfg.validate()?;
    initial.validate()?;
    let min_batch = min_batch_size(cfg);
    if data.len() < min_batch {
        bail!(Argument, "{} examples cannot fill one batch; at least {min_batch} are needed", data.len());
    }
    let mut model = initial.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut keyed_rng(cfg.seed, &[TAG_RCT, u64::MAX, epoch as u64]));
        let mut total = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < min_batch {
                continue;
            }
            let batch = data.subset(chunk);
            let noise = RctNoise::draw(cfg, epoch as u64, step as u64, batch.len(), batch.dim());
            let grad = rct_gradient(&batch, &model, cfg, &noise).map_err(|e| match e {
                Error::Numeric(reason) => Error::Divergence { epoch, reason },
                other => other,
            })?;
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
            if model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, reason: "parameters became non-finite".into() });
            }
            total += grad.forward.loss;
            steps += 1;
        }
        history.push(total / steps as f64);
    }
    Ok(RctOutcome { model, loss_history: history })
}

/// Smallest batch whose calibration half admits the soft threshold.
pub fn min_batch_size(cfg: &RctConfig) -> usize {
    (2..)
        .find(|&n| {
            let (c, p) = cfg.split_sizes(n);
            c > 0 && p > 0 && (1.0 - cfg.alpha) * (c as f64 + 1.0) < c as f64
        })
        .expect("some batch size is feasible for alpha in (0, 1)")
}
