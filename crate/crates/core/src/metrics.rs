//! Set-size diagnostics.

use alloc::vec::Vec;

use crate::calibrate::ceil_tolerant;
use crate::error::{bail, Result};

/// `mean(robust) - mean(vanilla)`: the extra set size paid for robustness,
/// over the same test examples and the same score.
pub fn conservativeness(robust_sizes: &[f64], vanilla_sizes: &[f64]) -> Result<f64> {
    if robust_sizes.len() != vanilla_sizes.len() {
        bail!(Argument, "{} robust sizes but {} vanilla sizes", robust_sizes.len(), vanilla_sizes.len());
    }
    if robust_sizes.is_empty() {
        bail!(Argument, "no set sizes given");
    }
    let n = robust_sizes.len() as f64;
    Ok(robust_sizes.iter().sum::<f64>() / n - vanilla_sizes.iter().sum::<f64>() / n)
}

/// Empirical `q`-quantile of sorted data: the `ceil(q n)`-th order statistic.
fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ceil_tolerant(q * sorted.len() as f64).clamp(1.0, sorted.len() as f64) as usize;
    sorted[k - 1]
}

/// Central difference `(Q(level + h) - Q(level - h)) / 2h` of the empirical
/// inverse CDF `Q` of `scores`. A large slope means a small CDF derivative at
/// the threshold, hence a small coverage gap under threshold inflation.
pub fn inverse_cdf_slope(scores: &[f64], level: f64, h_step: f64) -> Result<f64> {
    if !(h_step > 0.0 && level - h_step > 0.0 && level + h_step < 1.0) {
        bail!(Argument, "need 0 < level - h < level + h < 1, got level {level}, h {h_step}");
    }
    if (scores.len() as f64) * h_step < 1.0 {
        bail!(Argument, "{} scores cannot resolve quantiles {h_step} apart", scores.len());
    }
    if scores.iter().any(|s| !s.is_finite()) {
        bail!(Data, "scores must be finite");
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let hi = empirical_quantile(&sorted, level + h_step);
    let lo = empirical_quantile(&sorted, level - h_step);
    if hi <= lo {
        bail!(Argument, "quantiles at {} and {} coincide; scores are degenerate", level - h_step, level + h_step);
    }
    Ok((hi - lo) / (2.0 * h_step))
}
