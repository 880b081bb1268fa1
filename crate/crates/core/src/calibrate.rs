//! Split conformal calibration and prediction sets.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// A calibrated threshold. `Infinite` is the explicit "include every label"
/// state, used when the quantile rank exceeds the calibration count; it is
/// never stored as a float infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdValue {
    Finite { value: f64 },
    Infinite,
}

impl ThresholdValue {
    pub fn as_f64(self) -> f64 {
        match self {
            ThresholdValue::Finite { value } => value,
            ThresholdValue::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ThresholdValue::Infinite)
    }

    /// `score <= threshold`.
    pub fn admits(self, score: f64) -> bool {
        match self {
            ThresholdValue::Finite { value } => score <= value,
            ThresholdValue::Infinite => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: ThresholdValue,
    /// Miscoverage level the quantile was taken at.
    pub alpha: f64,
    pub n_cal: usize,
}

/// `ceil(x)` that treats values within a few ulps of an integer as that
/// integer, so `(1 - 0.1) * 10` yields rank 9 rather than 10.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = libm::round(x);
    if libm::fabs(x - r) <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        libm::ceil(x)
    }
}

/// One-based rank `ceil((1 - alpha)(n + 1))` of the conformal quantile.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    ceil_tolerant((1.0 - alpha) * (n as f64 + 1.0)).max(1.0) as usize
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest calibration score, or the
/// infinite threshold when that rank exceeds `n`.
pub fn conformal_quantile(cal_scores: &[f64], alpha: f64) -> Result<Threshold> {
    if cal_scores.is_empty() {
        bail!(Argument, "calibration scores are empty");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Argument, "alpha must lie in (0, 1), got {alpha}");
    }
    if let Some(i) = cal_scores.iter().position(|s| !s.is_finite()) {
        bail!(Data, "calibration score {} at position {i} is not finite", cal_scores[i]);
    }
    let n = cal_scores.len();
    let k = quantile_rank(n, alpha);
    let value = if k > n {
        ThresholdValue::Infinite
    } else {
        let mut sorted = cal_scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        ThresholdValue::Finite { value: sorted[k - 1] }
    };
    Ok(Threshold { value, alpha, n_cal: n })
}

/// Labels whose score is at most the threshold, with every label's score
/// kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub included: Vec<usize>,
    pub per_label_score: Vec<f64>,
}

impl PredictionSet {
    pub fn from_predicate(scores: &[f64], include: impl Fn(usize, f64) -> bool) -> Self {
        PredictionSet {
            included: scores.iter().enumerate().filter(|&(k, &s)| include(k, s)).map(|(k, _)| k).collect(),
            per_label_score: scores.to_vec(),
        }
    }

    pub fn contains(&self, label: usize) -> bool {
        self.included.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.included.len()
    }

    pub fn is_empty(&self) -> bool {
        self.included.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.per_label_score.len()
    }

    /// Contains every label.
    pub fn is_full(&self) -> bool {
        self.included.len() == self.per_label_score.len()
    }

    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.included.iter().all(|&k| other.contains(k))
    }
}

pub fn predict_set(score_row: &[f64], tau: ThresholdValue) -> PredictionSet {
    PredictionSet::from_predicate(score_row, |_, s| tau.admits(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub coverage: f64,
    pub avg_size: f64,
}

/// Fraction of examples whose label is in its set, and mean set size.
pub fn evaluate(sets: &[PredictionSet], labels: &[usize]) -> Result<Evaluation> {
    if sets.len() != labels.len() {
        bail!(Argument, "{} prediction sets but {} labels", sets.len(), labels.len());
    }
    if sets.is_empty() {
        return Ok(Evaluation { coverage: 0.0, avg_size: 0.0 });
    }
    let n = sets.len() as f64;
    let covered = sets.iter().zip(labels).filter(|(s, &y)| s.contains(y)).count() as f64;
    let size: usize = sets.iter().map(PredictionSet::len).sum();
    Ok(Evaluation { coverage: covered / n, avg_size: size as f64 / n })
}
