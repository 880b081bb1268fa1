//! Closed-form oracle for a 1-D binary problem.
//!
//! Classes are `0` (written `y = -1` in the literature) and `1`. Given the
//! class, `x` is uniform on `(-0.5, 0)` for class 0 and on `(0, 0.5)` for
//! class 1. The base model is `pi(x, 1) = clip(x + 0.5, 0, 1)`. The problem
//! is symmetric under `x -> -x` with the classes swapped, so everything is
//! expressed through the class-0 smoothed score `h(x) = Phi^-1(m(x))`, where
//! `m(x) = E[S(x + d, 0)]` with `d ~ N(0, sigma^2)`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{bail, Result};
use crate::rng::{keyed_rng, TAG_DATA};
use crate::scores::ProbClassifier;
use crate::smoothing::{inv_cdf_unchecked, std_normal_cdf, std_normal_pdf};

/// Bisection tolerance for `h^-1` and numeric thresholds.
const INVERSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreFnKind {
    /// HPS on the linear model.
    Hps,
    /// HPS followed by the sigmoid transform in the zero-temperature limit:
    /// the indicator `S_HPS > b`.
    PttLimit { b: f64 },
    /// The base score that slightly favours the wrong class outside
    /// `(-0.5, 0.5)`.
    FailureBase,
    /// The zero-temperature transform of [`ScoreFnKind::FailureBase`] at
    /// `b = 0.5`.
    FailurePtt,
}

/// A smoothed class-0 score `h(x)` with its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedScoreFn {
    pub kind: ScoreFnKind,
    pub sigma: f64,
}

impl SmoothedScoreFn {
    pub fn new(kind: ScoreFnKind, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            bail!(Argument, "sigma must be positive, got {sigma}");
        }
        if let ScoreFnKind::PttLimit { b } = kind {
            if !(b > 0.0 && b < 1.0) {
                bail!(Argument, "b must lie in (0, 1), got {b}");
            }
        }
        Ok(Self { kind, sigma })
    }

    /// Whether `h` is increasing, so the closed-form metrics apply.
    pub fn is_monotone(&self) -> bool {
        matches!(self.kind, ScoreFnKind::Hps | ScoreFnKind::PttLimit { .. })
    }

    /// Smoothed base score `m(x)` in `[0, 1]`.
    pub fn smoothed_mean(&self, x: f64) -> f64 {
        if x > 0.0 && self.is_antisymmetric() {
            return 1.0 - self.smoothed_mean(-x);
        }
        let s = self.sigma;
        let (t1, t2) = ((x + 0.5) / s, (x - 0.5) / s);
        let cdf = |z: f64| std_normal_cdf(z);
        match self.kind {
            ScoreFnKind::Hps => s * (partial_expectation(t1) - partial_expectation(t2)),
            ScoreFnKind::PttLimit { b } => cdf((x + 0.5 - b) / s),
            ScoreFnKind::FailureBase => {
                s * (partial_expectation(t1) - partial_expectation(t2)) - 0.5 * cdf(t2) + 0.5 * cdf(-t1)
            }
            // Phi(-t1) + Phi(-t2) - Phi(-x/s), regrouped so nothing cancels for x <= 0.
            ScoreFnKind::FailurePtt => cdf(-t1) + cdf(x / s) - cdf(t2),
        }
    }

    /// `h(-x) = -h(x)` for every kind except the transform at `b != 0.5`.
    fn is_antisymmetric(&self) -> bool {
        !matches!(self.kind, ScoreFnKind::PttLimit { .. })
    }

    /// `h(x) = Phi^-1(m(x))`.
    pub fn h(&self, x: f64) -> f64 {
        if let ScoreFnKind::PttLimit { b } = self.kind {
            return (x + 0.5 - b) / self.sigma;
        }
        if x > 0.0 {
            return -self.h(-x);
        }
        inv_cdf_unchecked(self.smoothed_mean(x))
    }

    /// `m'(x)` for `x <= 0`.
    fn mean_derivative(&self, x: f64) -> f64 {
        let s = self.sigma;
        let pdf = |z: f64| std_normal_pdf(z);
        let (t1, t2) = ((x + 0.5) / s, (x - 0.5) / s);
        // Gaussian mass of (-0.5, 0.5) around x.
        let inside = std_normal_cdf(t1) - std_normal_cdf(t2);
        match self.kind {
            ScoreFnKind::Hps => inside,
            ScoreFnKind::PttLimit { b } => pdf((x + 0.5 - b) / s) / s,
            ScoreFnKind::FailureBase => inside - 0.5 * (pdf(t2) + pdf(t1)) / s,
            ScoreFnKind::FailurePtt => (pdf(x / s) - pdf(t1) - pdf(t2)) / s,
        }
    }

    /// `h'(x) = m'(x) / phi(h(x))`.
    pub fn derivative(&self, x: f64) -> f64 {
        if let ScoreFnKind::PttLimit { .. } = self.kind {
            return 1.0 / self.sigma;
        }
        if x > 0.0 {
            return self.derivative(-x);
        }
        self.mean_derivative(x) / std_normal_pdf(self.h(x))
    }

    /// `h^-1(t)` for a monotone score, by bisection from `[-2, 2]`, doubling
    /// the bracket while it does not contain `t`.
    pub fn inverse(&self, t: f64) -> Result<f64> {
        if !self.is_monotone() {
            bail!(Domain, "{:?} is not monotone; it has no inverse", self.kind);
        }
        if t.is_nan() {
            bail!(Argument, "cannot invert at NaN");
        }
        let (mut lo, mut hi) = (-2.0, 2.0);
        let mut width = 2.0;
        while !(self.h(lo) <= t && self.h(hi) >= t) {
            width *= 2.0;
            if width > 1e6 {
                bail!(Numeric, "could not bracket h^-1({t})");
            }
            lo = -width;
            hi = width;
        }
        while hi - lo > INVERSE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.h(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// `E[(t + Z)_+] = phi(t) + t Phi(t)` for standard normal `Z`.
///
/// The smoothed HPS mean is `sigma (g((x + .5)/sigma) - g((x - .5)/sigma))`,
/// which expands to `sigma/sqrt(2 pi) (e^{-(x+.5)^2/2s^2} - e^{-(x-.5)^2/2s^2})
/// + (x + .5)(Phi((.5-x)/s) - Phi((-.5-x)/s)) + Phi((x-.5)/s)`. Below `t = -2`
/// the direct formula cancels, so `g(t) = phi(t) K / (|t| + K)` is used, with
/// `K` the tail `1/(s + 2/(s + 3/(s + ...)))` of the Mills-ratio continued
/// fraction at `s = |t|`.
pub(crate) fn partial_expectation(t: f64) -> f64 {
    if t >= -2.0 {
        return std_normal_pdf(t) + t * std_normal_cdf(t);
    }
    let s = -t;
    let mut k = 0.0;
    for n in (1..=400).rev() {
        k = n as f64 / (s + k);
    }
    std_normal_pdf(t) * k / (s + k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oracle1DConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub sigma: f64,
    /// Offset of the zero-temperature transform.
    pub b: f64,
    /// Segments of the piecewise-linear grid used by the numeric path.
    pub grid_points: usize,
    /// Largest allowed change in numeric results when the grid is doubled.
    pub integration_tol: f64,
}

impl Default for Oracle1DConfig {
    fn default() -> Self {
        Self { alpha: 0.1, epsilon: 0.01, sigma: 0.1, b: 0.9, grid_points: 20_000, integration_tol: 1e-6 }
    }
}

impl Oracle1DConfig {
    /// The engineered failure case: `1 - alpha = b = 0.5` and
    /// `epsilon / sigma = 0.01`.
    pub fn failure_case(sigma: f64) -> Self {
        Self { alpha: 0.5, epsilon: 0.01 * sigma, sigma, b: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!(Config, "alpha must lie in (0, 1), got {}", self.alpha);
        }
        if !(self.epsilon >= 0.0) {
            bail!(Config, "epsilon must be non-negative, got {}", self.epsilon);
        }
        if !(self.sigma > 0.0) {
            bail!(Config, "sigma must be positive, got {}", self.sigma);
        }
        if self.grid_points < 1000 {
            bail!(Config, "grid needs at least 1000 points, got {}", self.grid_points);
        }
        if !(self.integration_tol > 0.0) {
            bail!(Config, "integration tolerance must be positive");
        }
        Ok(())
    }

    pub fn score(&self, kind: ScoreFnKind) -> Result<SmoothedScoreFn> {
        SmoothedScoreFn::new(kind, self.sigma)
    }
}

/// `tau = h(-alpha / 2)`: the population `1 - alpha` quantile of the
/// ground-truth smoothed score, for monotone `h`.
pub fn analytic_threshold(h: &SmoothedScoreFn, alpha: f64) -> Result<f64> {
    if !h.is_monotone() {
        bail!(Domain, "{:?} is not monotone; use the numeric threshold", h.kind);
    }
    Ok(h.h(-alpha / 2.0))
}

/// CDF of the ground-truth smoothed score for monotone `h`.
pub fn analytic_cdf(h: &SmoothedScoreFn, t: f64) -> Result<f64> {
    if t <= h.h(-0.5) {
        return Ok(0.0);
    }
    if t >= h.h(0.0) {
        return Ok(1.0);
    }
    Ok(2.0 * h.inverse(t)? + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMetrics {
    pub tau: f64,
    pub tau_adj: f64,
    /// Excess coverage `alpha + F(tau_adj) - 1` caused by the inflation.
    pub gap: f64,
    pub avg_size: f64,
    /// `F'(tau) * epsilon / sigma` with `F'(tau) = 2 / h'(-alpha/2)`.
    pub slope_times_inflation: f64,
}

pub fn analytic_metrics(h: &SmoothedScoreFn, cfg: &Oracle1DConfig) -> Result<AnalyticMetrics> {
    cfg.validate()?;
    let tau = analytic_threshold(h, cfg.alpha)?;
    let inflation = cfg.epsilon / h.sigma;
    let tau_adj = tau + inflation;
    let gap = cfg.alpha + analytic_cdf(h, tau_adj)? - 1.0;
    let avg_size = if tau_adj >= h.h(0.5) {
        2.0
    } else if tau_adj <= h.h(-0.5) {
        0.0
    } else {
        2.0 * h.inverse(tau_adj)? + 1.0
    };
    let slope_times_inflation = 2.0 / h.derivative(-cfg.alpha / 2.0) * inflation;
    Ok(AnalyticMetrics { tau, tau_adj, gap, avg_size, slope_times_inflation })
}

/// `h` sampled on `m` equal segments of `[a, b]`.
struct Grid {
    step: f64,
    values: Vec<f64>,
}

impl Grid {
    fn new(h: &SmoothedScoreFn, a: f64, b: f64, m: usize) -> Self {
        let step = (b - a) / m as f64;
        // Keep h finite where m(x) rounds to 0 or 1.
        let values = (0..=m)
            .map(|i| inv_cdf_unchecked(h.smoothed_mean(a + i as f64 * step).clamp(1e-300, 1.0 - 1e-16)))
            .collect();
        Grid { step, values }
    }

    /// Length of `{x : g(x) <= t}` for the piecewise-linear interpolant `g`.
    fn measure_below(&self, t: f64) -> f64 {
        self.values
            .windows(2)
            .map(|w| {
                let (lo, hi) = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
                if hi <= t {
                    1.0
                } else if lo > t {
                    0.0
                } else {
                    (t - lo) / (hi - lo)
                }
            })
            .sum::<f64>()
            * self.step
    }

    fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericMetrics {
    pub tau: f64,
    pub tau_adj: f64,
    pub gap: f64,
    pub avg_size: f64,
}

fn numeric_once(h: &SmoothedScoreFn, cfg: &Oracle1DConfig, m: usize) -> NumericMetrics {
    let neg = Grid::new(h, -0.5, 0.0, m);
    let full = Grid::new(h, -0.5, 0.5, 2 * m);
    let cdf = |t: f64| neg.measure_below(t) / 0.5;
    let target = 1.0 - cfg.alpha;
    let (mut lo, mut hi) = neg.range();
    while hi - lo > INVERSE_TOL * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = hi;
    let tau_adj = tau + cfg.epsilon / h.sigma;
    NumericMetrics { tau, tau_adj, gap: cfg.alpha + cdf(tau_adj) - 1.0, avg_size: 2.0 * full.measure_below(tau_adj) }
}

/// Threshold, gap and average size by numerically integrating over `x`, valid
/// for non-monotone scores. The computation is repeated on a grid twice as
/// fine; a change above `integration_tol` is reported as a numeric failure.
pub fn numeric_metrics(h: &SmoothedScoreFn, cfg: &Oracle1DConfig) -> Result<NumericMetrics> {
    cfg.validate()?;
    let coarse = numeric_once(h, cfg, cfg.grid_points);
    let fine = numeric_once(h, cfg, 2 * cfg.grid_points);
    let drift = libm::fabs(coarse.tau - fine.tau).max(libm::fabs(coarse.avg_size - fine.avg_size));
    if !(drift <= cfg.integration_tol) {
        bail!(
            Numeric,
            "grid refinement from {} to {} points moved results by {drift:e} (tolerance {:e})",
            cfg.grid_points,
            2 * cfg.grid_points,
            cfg.integration_tol
        );
    }
    Ok(fine)
}

/// Index of the candidate with the largest `h'(-alpha/2)`, i.e. the smallest
/// CDF slope `2 / h'` at the shared threshold. Ties keep the first index.
pub fn optimality_check(candidates: &[SmoothedScoreFn], alpha: f64) -> Result<usize> {
    let Some(first) = candidates.first() else {
        bail!(Argument, "no candidates");
    };
    let tau0 = analytic_threshold(first, alpha)?;
    let mut best = (0, first.derivative(-alpha / 2.0));
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let tau = analytic_threshold(c, alpha)?;
        if libm::fabs(tau - tau0) > 1e-9 {
            bail!(Argument, "candidate {i} has threshold {tau}, candidate 0 has {tau0}");
        }
        let d = c.derivative(-alpha / 2.0);
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

/// The offset that gives the zero-temperature transform the same threshold
/// as `tau`: solves `(-alpha/2 + 0.5 - b) / sigma = tau`.
pub fn matching_ptt_offset(tau: f64, alpha: f64, sigma: f64) -> f64 {
    0.5 - alpha / 2.0 - sigma * tau
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTableRow {
    pub sigma2: f64,
    pub score: &'static str,
    pub slope_times_inflation: f64,
    pub gap: f64,
    pub avg_size: f64,
}

/// HPS and zero-temperature transform (`b = 1 - alpha`) rows for each noise
/// variance.
pub fn size_table(alpha: f64, epsilon: f64, sigma2: &[f64]) -> Result<Vec<SizeTableRow>> {
    let mut rows = Vec::with_capacity(2 * sigma2.len());
    for &v in sigma2 {
        let cfg = Oracle1DConfig { alpha, epsilon, sigma: libm::sqrt(v), b: 1.0 - alpha, ..Default::default() };
        for (name, kind) in [("hps", ScoreFnKind::Hps), ("ptt", ScoreFnKind::PttLimit { b: cfg.b })] {
            let m = analytic_metrics(&cfg.score(kind)?, &cfg)?;
            rows.push(SizeTableRow {
                sigma2: v,
                score: name,
                slope_times_inflation: m.slope_times_inflation,
                gap: m.gap,
                avg_size: m.avg_size,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTableRow {
    pub sigma: f64,
    pub score: &'static str,
    pub tau: f64,
    pub avg_size: f64,
}

/// Threshold and size of the failure-case base score and its transform.
pub fn failure_table(sigmas: &[f64]) -> Result<Vec<FailureTableRow>> {
    let mut rows = Vec::with_capacity(2 * sigmas.len());
    for &s in sigmas {
        let cfg = Oracle1DConfig::failure_case(s);
        for (name, kind) in [("base", ScoreFnKind::FailureBase), ("ptt", ScoreFnKind::FailurePtt)] {
            let m = numeric_metrics(&cfg.score(kind)?, &cfg)?;
            rows.push(FailureTableRow { sigma: s, score: name, tau: m.tau, avg_size: m.avg_size });
        }
    }
    Ok(rows)
}

/// The base model `pi(x, 1) = clip(x + 0.5, 0, 1)` on 1-D inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearOracleClassifier;

impl ProbClassifier for LinearOracleClassifier {
    fn num_classes(&self) -> usize {
        2
    }

    fn predict_proba_into(&self, x: &[f64], out: &mut [f64]) {
        let p1 = (x[0] + 0.5).clamp(0.0, 1.0);
        out[0] = 1.0 - p1;
        out[1] = p1;
    }
}

/// `n` draws from the 1-D distribution, keyed by `(seed, stream, i)`.
pub fn sample_points(n: usize, seed: u64, stream: u64) -> Result<LabeledDataset> {
    use rand::Rng;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = keyed_rng(seed, &[TAG_DATA, stream, i as u64]);
        let y = rng.random_range(0..2usize);
        let u: f64 = rng.random::<f64>() * 0.5;
        inputs.push(if y == 0 { -u } else { u });
        labels.push(y);
    }
    LabeledDataset::new(1, 2, inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;

    fn score(kind: ScoreFnKind, sigma: f64) -> SmoothedScoreFn {
        SmoothedScoreFn::new(kind, sigma).unwrap()
    }

    /// Composite Simpson rule on `[a, b]` with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// `E[g(x + d)]` for `d ~ N(0, sigma^2)`, integrating piecewise between
    /// the given kink points of `g`.
    fn smooth_numerically(g: impl Fn(f64) -> f64, x: f64, sigma: f64, kinks: &[f64]) -> f64 {
        let mut cuts = vec![x - 12.0 * sigma];
        for &k in kinks {
            if k > x - 12.0 * sigma && k < x + 12.0 * sigma {
                cuts.push(k);
            }
        }
        cuts.push(x + 12.0 * sigma);
        let density = |t: f64| {
            libm::exp(-(t - x) * (t - x) / (2.0 * sigma * sigma)) / (sigma * libm::sqrt(2.0 * core::f64::consts::PI))
        };
        // Evaluate g strictly inside each panel so jumps at cuts take the
        // panel's own one-sided value.
        cuts.windows(2)
            .map(|w| {
                let nudge = 1e-12 * (w[1] - w[0]);
                simpson(|t| g(t.clamp(w[0] + nudge, w[1] - nudge)) * density(t), w[0], w[1], 2000)
            })
            .sum()
    }

    fn pi1(t: f64) -> f64 {
        (t + 0.5).clamp(0.0, 1.0)
    }

    #[test]
    fn partial_expectation_references() {
        // Evaluated in 40-digit arithmetic.
        for &(t, g) in &[
            (-2.5, 0.002_004_137_179_128_199_4),
            (-5.0, 5.346_165_533_832_815e-8),
            (-10.0, 7.474_560_254_589_328e-25),
            (-30.0, 1.631_956_734_091_401_2e-199),
            (0.5, 0.697_796_557_401_306),
            (3.0, 3.000_382_154_317_047_7),
        ] {
            assert!((partial_expectation(t) - g).abs() <= 1e-13 * g, "t={t}: {} vs {g}", partial_expectation(t));
        }
        // Continuity across the switch at t = -2.
        let below = partial_expectation(-2.0 - 1e-12);
        let above = partial_expectation(-2.0);
        assert!((below - above).abs() < 1e-13);
    }

    /// The smoothed HPS mean exactly as printed in closed form.
    fn hps_mean_printed(x: f64, s: f64) -> f64 {
        let c = std_normal_cdf;
        s / libm::sqrt(2.0 * core::f64::consts::PI)
            * (libm::exp(-(x + 0.5) * (x + 0.5) / (2.0 * s * s)) - libm::exp(-(x - 0.5) * (x - 0.5) / (2.0 * s * s)))
            + (x + 0.5) * (c((0.5 - x) / s) - c((-0.5 - x) / s))
            + c((x - 0.5) / s)
    }

    #[test]
    fn hps_mean_matches_printed_form() {
        for &s in &[0.01, 0.1, 0.3] {
            for i in 0..=100 {
                let x = -0.5 + i as f64 * 0.01;
                let a = score(ScoreFnKind::Hps, s).smoothed_mean(x);
                assert!((a - hps_mean_printed(x, s)).abs() < 1e-14, "x={x} s={s}");
            }
        }
    }

    #[test]
    fn hps_is_zero_at_origin_and_increasing() {
        for &s in &[0.01, 0.0316, 0.1, 0.3] {
            let h = score(ScoreFnKind::Hps, s);
            assert!(h.h(0.0).abs() < 1e-12);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=1200 {
                let v = h.h(-0.6 + i as f64 * 0.001);
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for &s in &[0.05, 0.1, 0.3] {
            for i in 0..=20 {
                let x = -0.6 + i as f64 * 0.06;
                let hps = smooth_numerically(pi1, x, s, &[-0.5, 0.5]);
                assert!((score(ScoreFnKind::Hps, s).smoothed_mean(x) - hps).abs() < 1e-9, "hps x={x} s={s}");
                let b = 0.9;
                let ind = smooth_numerically(|t| if pi1(t) >= b { 1.0 } else { 0.0 }, x, s, &[b - 0.5]);
                let h = score(ScoreFnKind::PttLimit { b }, s).h(x);
                if ind > 1e-8 && ind < 1.0 - 1e-8 {
                    assert!((h - inv_cdf_unchecked(ind)).abs() < 1e-6, "ptt x={x} s={s}");
                }
                assert!((std_normal_cdf(h) - ind).abs() < 1e-9);
                let fb = |t: f64| if t <= -0.5 || t >= 0.5 { 0.5 } else { t + 0.5 };
                let base = smooth_numerically(fb, x, s, &[-0.5, 0.5]);
                assert!((score(ScoreFnKind::FailureBase, s).smoothed_mean(x) - base).abs() < 1e-9);
                let fp = |t: f64| if t <= -0.5 || (0.0..0.5).contains(&t) { 1.0 } else { 0.0 };
                let ptt = smooth_numerically(fp, x, s, &[-0.5, 0.0, 0.5]);
                assert!((score(ScoreFnKind::FailurePtt, s).smoothed_mean(x) - ptt).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kinds =
            [ScoreFnKind::Hps, ScoreFnKind::PttLimit { b: 0.7 }, ScoreFnKind::FailureBase, ScoreFnKind::FailurePtt];
        for kind in kinds {
            for &s in &[0.05, 0.1, 0.3] {
                let h = score(kind, s);
                for i in 0..=40 {
                    let x = -0.55 + i as f64 * 0.0275;
                    // Five-point central difference.
                    let d = 1e-4;
                    let fd = (h.h(x - 2.0 * d) - 8.0 * h.h(x - d) + 8.0 * h.h(x + d) - h.h(x + 2.0 * d)) / (12.0 * d);
                    assert!(
                        (fd - h.derivative(x)).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "{kind:?} s={s} x={x}: {fd} vs {}",
                        h.derivative(x)
                    );
                }
            }
        }
    }

    #[test]
    fn ptt_limit_examples() {
        let h = score(ScoreFnKind::PttLimit { b: 0.95 }, 0.1);
        assert!((h.h(0.45) - 0.0).abs() < 1e-15);
        assert!((analytic_threshold(&h, 0.1).unwrap() + 5.0).abs() < 1e-12);
        assert_eq!(h.derivative(0.3), 10.0);
    }

    #[test]
    fn inverse_round_trips() {
        let h = score(ScoreFnKind::Hps, 0.1);
        for i in 0..=50 {
            let x = -0.5 + i as f64 * 0.02;
            assert!((h.inverse(h.h(x)).unwrap() - x).abs() < 1e-10);
        }
        assert!((score(ScoreFnKind::PttLimit { b: 0.9 }, 0.01).inverse(1000.0).unwrap() - 10.4).abs() < 1e-9);
        assert!(matches!(score(ScoreFnKind::FailurePtt, 0.1).inverse(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_branches() {
        for &s in &[0.01, 0.1, 0.3] {
            let h = score(ScoreFnKind::Hps, s);
            assert_eq!(analytic_cdf(&h, h.h(-0.5)).unwrap(), 0.0);
            assert_eq!(analytic_cdf(&h, h.h(0.0)).unwrap(), 1.0);
            assert!((analytic_cdf(&h, h.h(-0.25)).unwrap() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn ptt_rows_are_closed_form() {
        for &v in &[0.01, 0.001, 0.0001] {
            let cfg = Oracle1DConfig { sigma: libm::sqrt(v), ..Default::default() };
            let m = analytic_metrics(&cfg.score(ScoreFnKind::PttLimit { b: 0.9 }).unwrap(), &cfg).unwrap();
            assert!((m.gap - 0.02).abs() < 1e-9);
            assert!((m.avg_size - 0.92).abs() < 1e-9);
            assert!((m.slope_times_inflation - 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_limits_and_cross_checks() {
        let h = score(ScoreFnKind::Hps, 0.1);
        assert!((analytic_threshold(&h, 1e-9).unwrap() - h.h(0.0)).abs() < 1e-8);
        let cfg = Oracle1DConfig::default();
        for kind in [ScoreFnKind::Hps, ScoreFnKind::PttLimit { b: 0.9 }] {
            let h = cfg.score(kind).unwrap();
            let a = analytic_metrics(&h, &cfg).unwrap();
            let n = numeric_metrics(&h, &cfg).unwrap();
            assert!((a.tau - n.tau).abs() < 1e-6, "{kind:?}: {} vs {}", a.tau, n.tau);
            assert!((a.avg_size - n.avg_size).abs() < 5e-3);
            assert!((a.gap - n.gap).abs() < 5e-3);
        }
        assert!(matches!(
            analytic_threshold(&cfg.score(ScoreFnKind::FailureBase).unwrap(), 0.1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gap_agrees_with_its_definition() {
        // alpha - P(h(x) > tau_adj | class 0), with the probability obtained
        // by bisecting h(x) = tau_adj over the class-0 support.
        for &v in &[0.01, 0.001, 0.0001] {
            let cfg = Oracle1DConfig { sigma: libm::sqrt(v), ..Default::default() };
            for kind in [ScoreFnKind::Hps, ScoreFnKind::PttLimit { b: 0.9 }] {
                let h = cfg.score(kind).unwrap();
                let m = analytic_metrics(&h, &cfg).unwrap();
                let excluded = if h.h(0.0) <= m.tau_adj {
                    0.0
                } else {
                    let (mut lo, mut hi) = (-0.5, 0.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if h.h(mid) > m.tau_adj {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    (0.0 - hi) / 0.5
                };
                assert!((m.gap - (cfg.alpha - excluded)).abs() < 1e-9, "{kind:?} v={v}");
            }
        }
    }

    #[test]
    fn numeric_tolerance_failure_is_reported() {
        let cfg = Oracle1DConfig { integration_tol: 1e-300, ..Oracle1DConfig::failure_case(0.1) };
        let h = cfg.score(ScoreFnKind::FailurePtt).unwrap();
        assert!(matches!(numeric_metrics(&h, &cfg), Err(Error::Numeric(_))));
        assert!(Oracle1DConfig { grid_points: 10, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn optimality_examples() {
        let alpha = 0.1;
        let sigma = 0.1;
        let hps = score(ScoreFnKind::Hps, sigma);
        let tau = analytic_threshold(&hps, alpha).unwrap();
        let ptt = score(ScoreFnKind::PttLimit { b: matching_ptt_offset(tau, alpha, sigma) }, sigma);
        assert!((analytic_threshold(&ptt, alpha).unwrap() - tau).abs() < 1e-12);
        assert_eq!(optimality_check(&[hps, ptt], alpha).unwrap(), 1);
        assert_eq!(optimality_check(&[ptt, hps], alpha).unwrap(), 0);
        assert_eq!(optimality_check(&[hps], alpha).unwrap(), 0);
        assert_eq!(optimality_check(&[ptt, ptt], alpha).unwrap(), 0);
        // b = (1 - alpha)/2 puts the indicator's jump at -alpha/2: threshold 0.
        let sign = score(ScoreFnKind::PttLimit { b: (1.0 - alpha) / 2.0 }, sigma);
        assert!(analytic_threshold(&sign, alpha).unwrap().abs() < 1e-12);
        assert!(matches!(optimality_check(&[hps, sign], alpha), Err(Error::Argument(_))));
        assert!(optimality_check(&[], alpha).is_err());
    }

    #[test]
    fn sampled_points_follow_the_design() {
        let d = sample_points(4000, 1, 0).unwrap();
        let mut ones = 0;
        for i in 0..d.len() {
            let x = d.input(i)[0];
            assert!(x.abs() <= 0.5);
            assert_eq!(d.label(i) == 1, x >= 0.0);
            ones += d.label(i);
        }
        assert!((ones as f64 / 4000.0 - 0.5).abs() < 0.03);
        let mut p = [0.0; 2];
        LinearOracleClassifier.predict_proba_into(&[0.7], &mut p);
        assert_eq!(p, [0.0, 1.0]);
    }
}
