//! Post-training transformation: rank a score against a holdout set, then
//! squash the rank through a steep sigmoid centred at `b`.
//!
//! With exchangeable scores the rank is uniform on `{0, 1/N, ..., 1}`, so the
//! transformed score has a fixed, known distribution whose inverse CDF is
//! steep (slope `1/(4T)`) at level `b`. Choosing `b = 1 - alpha` makes a
//! threshold inflation of `eps/sigma` cost very little coverage.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{keyed_rng, stream_key, TAG_PTT_TIES};
use crate::scores::{ClassScorer, ScoreMatrix, ScoreSamples};

pub const DEFAULT_B: f64 = 0.9;
pub const DEFAULT_TEMPERATURE: f64 = 1.0 / 400.0;
pub const DEFAULT_HOLDOUT_SIZE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PttParams {
    /// Ground-truth-class base scores of the holdout set, ascending.
    holdout: Vec<f64>,
    pub b: f64,
    pub temperature: f64,
    /// Seed of the tie-breaking stream.
    pub seed: u64,
}

impl PttParams {
    pub fn new(mut holdout: Vec<f64>, b: f64, temperature: f64, seed: u64) -> Result<Self> {
        if holdout.iter().any(|h| !h.is_finite()) {
            bail!(Data, "holdout scores must be finite");
        }
        holdout.sort_by(f64::total_cmp);
        let p = Self { holdout, b, temperature, seed };
        p.validate()?;
        Ok(p)
    }

    /// Re-checks invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.holdout.is_empty() {
            bail!(Argument, "holdout set is empty");
        }
        if !self.holdout.windows(2).all(|w| w[0] <= w[1]) {
            bail!(Data, "holdout scores are not sorted");
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            bail!(Argument, "b must lie in (0, 1), got {}", self.b);
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bail!(Argument, "temperature must be positive, got {}", self.temperature);
        }
        Ok(())
    }

    pub fn holdout(&self) -> &[f64] {
        &self.holdout
    }

    /// `(#{h < s}, #{h = s})` over the holdout.
    fn counts(&self, s: f64) -> (usize, usize) {
        let less = self.holdout.partition_point(|&h| h < s);
        let upto = self.holdout.partition_point(|&h| h <= s);
        (less, upto - less)
    }

    /// Rank with an explicit tie draw: `tie(t)` must return a value in `0..=t`.
    pub fn rank_with(&self, s: f64, tie: impl FnOnce(usize) -> usize) -> f64 {
        let (less, ties) = self.counts(s);
        let u = if ties > 0 { tie(ties).min(ties) } else { 0 };
        (less + u) as f64 / self.holdout.len() as f64
    }
}

/// `r/N` with `r = #{h < s} + U`, `U` uniform on `{0, ..., #{h = s}}`. The
/// generator is consulted only when `s` ties with a holdout score.
pub fn rank_transform<R: Rng + ?Sized>(s: f64, params: &PttParams, tie_rng: &mut R) -> f64 {
    params.rank_with(s, |t| tie_rng.random_range(0..=t))
}

/// The logistic function `1 / (1 + e^-z)`, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `logistic((s - b) / T)`.
pub fn sigmoid_transform(s: f64, b: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        bail!(Argument, "temperature must be positive, got {temperature}");
    }
    Ok(logistic((s - b) / temperature))
}

/// Rank transform followed by the sigmoid transform.
pub fn ptt_score<R: Rng + ?Sized>(s: f64, params: &PttParams, tie_rng: &mut R) -> f64 {
    logistic((rank_transform(s, params, tie_rng) - params.b) / params.temperature)
}

/// [`ptt_score`] with ties broken by the stream keyed by `(seed, query)`.
pub fn ptt_score_keyed(s: f64, params: &PttParams, query: u64) -> f64 {
    let r = params.rank_with(s, |t| keyed_rng(params.seed, &[TAG_PTT_TIES, query]).random_range(0..=t));
    logistic((r - params.b) / params.temperature)
}

/// Transforms every draw of a sample tensor; ties in cell `(i, k, j)` are
/// broken with query `(i, k, j)`.
pub fn transform_samples(samples: &ScoreSamples, params: &PttParams) -> Result<ScoreSamples> {
    samples.map_indexed(|v, i, k, j| ptt_score_keyed(v, params, stream_key(i as u64, &[k as u64, j as u64])))
}

/// Transforms every entry of a score matrix; ties in cell `(i, k)` are broken
/// with query `(i, k)`.
pub fn transform_matrix(scores: &ScoreMatrix, params: &PttParams) -> Result<ScoreMatrix> {
    let k = scores.num_classes();
    let values = scores
        .values()
        .iter()
        .enumerate()
        .map(|(pos, &v)| ptt_score_keyed(v, params, stream_key((pos / k) as u64, &[(pos % k) as u64])))
        .collect();
    ScoreMatrix::new(scores.rows(), k, values)
}

/// A base scorer followed by the transformation, usable wherever a base score
/// is expected (in particular inside Monte-Carlo smoothing).
#[derive(Debug, Clone)]
pub struct PttScorer<S> {
    pub base: S,
    pub params: PttParams,
}

impl<S: ClassScorer> ClassScorer for PttScorer<S> {
    fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    fn score_all(&self, x: &[f64], query: u64, out: &mut [f64]) -> Result<()> {
        self.base.score_all(x, query, out)?;
        for (k, v) in out.iter_mut().enumerate() {
            *v = ptt_score_keyed(*v, &self.params, stream_key(query, &[k as u64]));
        }
        Ok(())
    }
}
