//! Linear-softmax classifier and its cross-entropy trainer.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{bail, Error, Result};
use crate::scores::ProbClassifier;

/// `p = softmax(W x + b)` with `W` stored `K x d` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    pub num_classes: usize,
    pub input_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearSoftmaxModel {
    /// All-zero parameters: the uniform classifier.
    pub fn zeros(num_classes: usize, input_dim: usize) -> Self {
        Self { num_classes, input_dim, weights: vec![0.0; num_classes * input_dim], bias: vec![0.0; num_classes] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.num_classes * self.input_dim || self.bias.len() != self.num_classes {
            bail!(Data, "model parameter shapes do not match {}x{}", self.num_classes, self.input_dim);
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            bail!(Data, "model has non-finite parameters");
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate().take(self.num_classes) {
            let w = &self.weights[k * self.input_dim..(k + 1) * self.input_dim];
            *slot = self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes];
        self.predict_proba_into(x, &mut p);
        p
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len()).filter(|&i| argmax(&self.predict_proba(data.input(i))) == data.label(i)).count();
        hits as f64 / data.len() as f64
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best }).0
}

impl ProbClassifier for LinearSoftmaxModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_proba_into(&self, x: &[f64], out: &mut [f64]) {
        self.logits_into(x, out);
        softmax_in_place(&mut out[..self.num_classes]);
    }
}

/// Full-batch gradient descent settings for [`train_blob_classifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, iterations: 500, l2: 0.0 }
    }
}

/// Fits a multinomial logistic model by full-batch gradient descent on the
/// mean cross-entropy, starting from zero weights. Deterministic: the same
/// data always gives the same model.
///
/// On single-class data the fit drives that class's probability towards 1.
pub fn train_blob_classifier(data: &LabeledDataset, cfg: &TrainConfig) -> Result<LinearSoftmaxModel> {
    let (k, d, n) = (data.num_classes(), data.dim(), data.len());
    if n < k {
        bail!(Argument, "need at least as many examples ({n}) as classes ({k})");
    }
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0) {
        bail!(Argument, "learning rate must be positive and l2 non-negative");
    }
    let mut model = LinearSoftmaxModel::zeros(k, d);
    let mut p = vec![0.0; k];
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    for iter in 0..cfg.iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let x = data.input(i);
            let y = data.label(i);
            model.predict_proba_into(x, &mut p);
            loss -= libm::log(p[y].max(f64::MIN_POSITIVE));
            for c in 0..k {
                let dz = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += dz;
                for (g, &xv) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += dz * xv;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        loss *= inv_n;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch: iter, reason: alloc::format!("cross-entropy loss {loss}") });
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g * inv_n + cfg.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g * inv_n;
        }
    }
    model.validate().map_err(|e| Error::Divergence { epoch: cfg.iterations, reason: alloc::format!("{e}") })?;
    Ok(model)
}
