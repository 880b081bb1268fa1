//! Robust prediction sets under `l2` input perturbations of size `epsilon`.
//!
//! Two rules are provided:
//!
//! * the threshold-inflated set on `Phi^-1(S_RS)`, which is valid when the
//!   smoothed score is computed exactly, and
//! * the certified Monte-Carlo rule, which works with the empirical mean
//!   `S_hat` of `N_MC` draws and absorbs Monte-Carlo error on both the
//!   calibration side (level `1 - alpha + 2 beta`) and the test side
//!   (a Hoeffding or empirical Bernstein margin).

use serde::{Deserialize, Serialize};

use crate::calibrate::{conformal_quantile, PredictionSet, Threshold, ThresholdValue};
use crate::error::{bail, Result};
use crate::ptt::PttParams;
use crate::smoothing::{
    bernstein_bound, hoeffding_bound, inv_cdf_unchecked, smoothed_tilde, std_normal_cdf, BoundVariant,
};

/// `tau + epsilon / sigma`.
pub fn rscp_threshold(tau: f64, epsilon: f64, sigma: f64) -> f64 {
    tau + epsilon / sigma
}

fn inflate(tau: ThresholdValue, epsilon: f64, sigma: f64) -> ThresholdValue {
    match tau {
        ThresholdValue::Finite { value } => ThresholdValue::Finite { value: rscp_threshold(value, epsilon, sigma) },
        ThresholdValue::Infinite => ThresholdValue::Infinite,
    }
}

/// Labels whose `Phi^-1(S_RS)` value is at most the inflated threshold.
pub fn rscp_set(tilde_row: &[f64], tau_adj: ThresholdValue) -> PredictionSet {
    PredictionSet::from_predicate(tilde_row, |_, s| tau_adj.admits(s))
}

/// Conformal quantile of the calibration Monte-Carlo means (ground-truth
/// class only) at level `1 - alpha + 2 beta`.
pub fn rscp_plus_calibrate(cal_mc_scores: &[f64], alpha: f64, beta: f64) -> Result<Threshold> {
    if !(beta >= 0.0) {
        bail!(Config, "beta must be non-negative, got {beta}");
    }
    let effective = alpha - 2.0 * beta;
    if !(effective > 0.0) {
        bail!(Config, "calibration level 1 - alpha + 2 beta = {} is not below 1", 1.0 - effective);
    }
    conformal_quantile(cal_mc_scores, effective)
}

/// Everything needed to build robust sets for new examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    /// Quantile of `Phi^-1(S_hat)` at `1 - alpha`; used by the uncertified rule.
    pub tau: Threshold,
    /// Quantile of `S_hat` at `1 - alpha + 2 beta`; used by the certified rule.
    pub tau_mc: Threshold,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub n_mc: usize,
    pub bound_variant: BoundVariant,
    pub clamp_eps: f64,
    /// Score transformation applied to the base score, if any.
    pub ptt: Option<PttParams>,
}

/// Parameters of [`CalibrationArtifact::calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustSpec {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub n_mc: usize,
    pub bound_variant: BoundVariant,
    pub clamp_eps: f64,
}

impl CalibrationArtifact {
    /// Calibrates both rules from the ground-truth-class Monte-Carlo means of
    /// the calibration set.
    pub fn calibrate(cal_mc_scores: &[f64], spec: &RobustSpec, ptt: Option<PttParams>) -> Result<Self> {
        let tilde: alloc::vec::Vec<f64> = cal_mc_scores.iter().map(|&m| smoothed_tilde(m, spec.clamp_eps)).collect();
        let art = Self {
            tau: conformal_quantile(&tilde, spec.alpha)?,
            tau_mc: rscp_plus_calibrate(cal_mc_scores, spec.alpha, spec.beta)?,
            alpha: spec.alpha,
            beta: spec.beta,
            epsilon: spec.epsilon,
            sigma: spec.sigma,
            n_mc: spec.n_mc,
            bound_variant: spec.bound_variant,
            clamp_eps: spec.clamp_eps,
            ptt,
        };
        art.validate()?;
        Ok(art)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Config, "alpha must lie in (0, 1), got {}", self.alpha);
        }
        if !(self.beta > 0.0 && self.beta < 0.5 && 1.0 - self.alpha + 2.0 * self.beta < 1.0) {
            bail!(
                Config,
                "need 0 < beta < 0.5 and 1 - alpha + 2 beta < 1, got alpha {}, beta {}",
                self.alpha,
                self.beta
            );
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            bail!(Config, "epsilon must be non-negative, got {}", self.epsilon);
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bail!(Config, "sigma must be positive, got {}", self.sigma);
        }
        if self.n_mc < 2 {
            bail!(Config, "n_mc must be at least 2, got {}", self.n_mc);
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            bail!(Config, "clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps);
        }
        if let Some(p) = &self.ptt {
            p.validate()?;
        }
        Ok(())
    }

    /// Inflated threshold of the uncertified rule.
    pub fn tau_adj(&self) -> ThresholdValue {
        inflate(self.tau.value, self.epsilon, self.sigma)
    }

    pub fn hoeffding(&self) -> f64 {
        hoeffding_bound(self.beta, self.n_mc).expect("validated beta and n_mc")
    }

    /// `tau_mc + b_Hoef >= 1`: the certified rule accepts every label.
    pub fn is_saturated(&self) -> bool {
        match self.tau_mc.value {
            ThresholdValue::Infinite => true,
            ThresholdValue::Finite { value } => value + self.hoeffding() >= 1.0,
        }
    }

    /// Right-hand side `Phi(Phi^-1(tau_mc + b_Hoef) + epsilon / sigma)` of the
    /// certified rule, or 1 when saturated.
    pub fn plus_rhs(&self) -> f64 {
        match self.tau_mc.value {
            ThresholdValue::Infinite => 1.0,
            ThresholdValue::Finite { value } => {
                plus_rhs(value, self.hoeffding(), self.epsilon / self.sigma, self.clamp_eps)
            }
        }
    }

    /// Test-side margin for label scores `var_k`.
    fn left_margin(&self, variance: Option<f64>) -> Result<f64> {
        match self.bound_variant {
            BoundVariant::Hoeffding => Ok(self.hoeffding()),
            BoundVariant::EmpiricalBernstein => match variance {
                Some(v) => bernstein_bound(self.beta, self.n_mc, v),
                None => bail!(Argument, "empirical Bernstein rule needs the per-label variance row"),
            },
        }
    }
}

fn plus_rhs(tau_mc: f64, b_right: f64, shift: f64, clamp_eps: f64) -> f64 {
    let level = tau_mc + b_right;
    if level >= 1.0 {
        return 1.0;
    }
    std_normal_cdf(inv_cdf_unchecked(level.clamp(clamp_eps, 1.0 - clamp_eps)) + shift)
}

/// Certified set: label `k` is included iff `S_hat_k - b_left_k <= rhs`.
pub fn rscp_plus_set(mc_row: &[f64], var_row: Option<&[f64]>, art: &CalibrationArtifact) -> Result<PredictionSet> {
    if let Some(v) = var_row {
        if v.len() != mc_row.len() {
            bail!(Argument, "variance row has {} entries, score row has {}", v.len(), mc_row.len());
        }
    }
    if let Some(pos) = mc_row.iter().position(|s| !(0.0..=1.0).contains(s)) {
        bail!(Data, "Monte-Carlo mean {} of label {pos} outside [0, 1]", mc_row[pos]);
    }
    let rhs = art.plus_rhs();
    let mut margins = alloc::vec::Vec::with_capacity(mc_row.len());
    for k in 0..mc_row.len() {
        margins.push(art.left_margin(var_row.map(|v| v[k]))?);
    }
    Ok(PredictionSet::from_predicate(mc_row, |k, s| s - margins[k] <= rhs))
}
