//! Monte-Carlo randomized smoothing of base scores.
//!
//! The smoothed score of a base score `S` is `S_RS(x, y) = E[S(x + d, y)]`
//! with `d ~ N(0, sigma^2 I)`; it is estimated by the mean of `N_MC` noisy
//! evaluations. `Phi^-1(S_RS)` is `1/sigma`-Lipschitz in `x`, which is what
//! the robust thresholds rely on.

mod bounds;
mod gaussian;

pub use bounds::{bernstein_bound, hoeffding_bound};
pub(crate) use gaussian::inv_cdf_unchecked;
pub use gaussian::{std_normal_cdf, std_normal_inv_cdf, std_normal_pdf};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{keyed_rng, stream_key, TAG_SMOOTHING};
use crate::scores::{ClassScorer, ScoreMatrix, ScoreSamples};

/// Default clamp applied before `Phi^-1` so that means of exactly 0 or 1 map
/// to finite values.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseSpec {
    pub sigma: f64,
    pub n_mc: usize,
    pub seed: u64,
}

impl GaussianNoiseSpec {
    pub fn new(sigma: f64, n_mc: usize, seed: u64) -> Result<Self> {
        let spec = Self { sigma, n_mc, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bail!(Argument, "sigma must be positive and finite, got {}", self.sigma);
        }
        if self.n_mc < 2 {
            bail!(Argument, "n_mc must be at least 2, got {}", self.n_mc);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    Hoeffding,
    EmpiricalBernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub beta: f64,
    pub variant: BoundVariant,
}

impl BoundSpec {
    /// `beta` must lie in `(0, 0.5)`: calibration runs at level `1 - alpha + 2 beta`.
    pub fn new(beta: f64, variant: BoundVariant) -> Result<Self> {
        if !(beta > 0.0 && beta < 0.5) {
            bail!(Argument, "beta must lie in (0, 0.5), got {beta}");
        }
        Ok(Self { beta, variant })
    }
}

/// Fills `out` with the noise vector of Monte-Carlo draw `draw` for example
/// `example`. The same vector is used for every class of that example.
pub fn gaussian_noise(spec: &GaussianNoiseSpec, example: u64, draw: u64, out: &mut [f64]) {
    let mut rng = keyed_rng(spec.seed, &[TAG_SMOOTHING, example, draw]);
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = spec.sigma * z;
    }
}

/// Scores `x + d_j` for every draw `j` and class, writing the `K x N_MC`
/// block of `example` into `out` (class-major, then draw).
pub fn mc_score_samples_one<S: ClassScorer + ?Sized>(
    base: &S,
    x: &[f64],
    example: u64,
    noise: &GaussianNoiseSpec,
    out: &mut [f64],
) -> Result<()> {
    let k = base.num_classes();
    let n_mc = noise.n_mc;
    if out.len() != k * n_mc {
        bail!(Argument, "output block has {} slots, expected {}", out.len(), k * n_mc);
    }
    let mut delta = vec![0.0; x.len()];
    let mut noisy = vec![0.0; x.len()];
    let mut row = vec![0.0; k];
    for j in 0..n_mc {
        gaussian_noise(noise, example, j as u64, &mut delta);
        for ((o, a), d) in noisy.iter_mut().zip(x).zip(&delta) {
            *o = a + d;
        }
        base.score_all(&noisy, stream_key(noise.seed, &[example, j as u64]), &mut row)?;
        for (c, &s) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                bail!(Data, "base score {s} outside [0, 1] at example {example}, class {c}, draw {j}");
            }
            out[c * n_mc + j] = s;
        }
    }
    Ok(())
}

/// Monte-Carlo draws of the base score for each row of `inputs`
/// (`n x dim`, row-major). Row `i` uses noise stream `i`.
pub fn mc_score_samples<S: ClassScorer + ?Sized>(
    base: &S,
    inputs: &[f64],
    dim: usize,
    noise: &GaussianNoiseSpec,
) -> Result<ScoreSamples> {
    noise.validate()?;
    if dim == 0 || inputs.len() % dim != 0 {
        bail!(Argument, "input length {} is not a multiple of dimension {dim}", inputs.len());
    }
    let n = inputs.len() / dim;
    let k = base.num_classes();
    let block = k * noise.n_mc;
    let mut values = vec![0.0; n * block];
    for (i, (x, out)) in inputs.chunks(dim).zip(values.chunks_mut(block.max(1))).enumerate() {
        mc_score_samples_one(base, x, i as u64, noise, out)?;
    }
    ScoreSamples::new(n, k, noise.n_mc, noise.sigma, Some(noise.seed), values)
}

/// Mean over the draws of one cell.
pub fn mc_mean_slice(draws: &[f64]) -> f64 {
    draws.iter().sum::<f64>() / draws.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`) of one cell, by Welford's
/// recurrence. Returns NaN for fewer than two draws.
pub fn mc_variance_slice(draws: &[f64]) -> f64 {
    if draws.len() < 2 {
        return f64::NAN;
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in draws.iter().enumerate() {
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    (m2 / (draws.len() - 1) as f64).max(0.0)
}

/// `n x K` matrix of Monte-Carlo means.
pub fn mc_mean(samples: &ScoreSamples) -> ScoreMatrix {
    per_cell(samples, mc_mean_slice)
}

/// `n x K` matrix of per-cell sample variances.
pub fn mc_variance(samples: &ScoreSamples) -> Result<ScoreMatrix> {
    if samples.n_mc() < 2 {
        bail!(Argument, "variance needs at least 2 draws, got {}", samples.n_mc());
    }
    Ok(per_cell(samples, mc_variance_slice))
}

fn per_cell(samples: &ScoreSamples, f: impl Fn(&[f64]) -> f64) -> ScoreMatrix {
    let values: Vec<f64> = samples.values().chunks(samples.n_mc()).map(f).collect();
    ScoreMatrix::new_unbounded(samples.rows(), samples.num_classes(), values)
        .expect("per-cell statistics have matching shape")
}

/// `Phi^-1` of a smoothed score, clamped into `[clamp_eps, 1 - clamp_eps]`.
pub fn smoothed_tilde(mean_score: f64, clamp_eps: f64) -> f64 {
    inv_cdf_unchecked(mean_score.clamp(clamp_eps, 1.0 - clamp_eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::scores::FnScorer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_base_gives_constant_cells() {
        let base = FnScorer::new(3, |_, _| 0.5);
        let noise = GaussianNoiseSpec::new(0.7, 5, 1).unwrap();
        let s = mc_score_samples(&base, &[0.0, 1.0, 2.0, 3.0], 2, &noise).unwrap();
        assert_eq!((s.rows(), s.num_classes(), s.n_mc()), (2, 3, 5));
        assert!(s.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn samples_are_reproducible() {
        let base = FnScorer::new(2, |x: &[f64], y| if (x[0] > 0.0) == (y == 1) { 0.0 } else { 1.0 });
        let noise = GaussianNoiseSpec::new(1.3, 2, 99).unwrap();
        let a = mc_score_samples(&base, &[0.1, -0.2, 0.3], 1, &noise).unwrap();
        let b = mc_score_samples(&base, &[0.1, -0.2, 0.3], 1, &noise).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn noise_is_shared_across_classes() {
        // Class k reports the noisy coordinate squashed into [0, 1].
        let base = FnScorer::new(3, |x: &[f64], _| std_normal_cdf(x[0]));
        let noise = GaussianNoiseSpec::new(1.0, 16, 4).unwrap();
        let s = mc_score_samples(&base, &[0.0], 1, &noise).unwrap();
        assert_eq!(s.cell(0, 0), s.cell(0, 1));
        assert_eq!(s.cell(0, 0), s.cell(0, 2));
    }

    #[test]
    fn out_of_range_base_is_rejected() {
        let base = FnScorer::new(2, |_, y| if y == 1 { 1.5 } else { 0.0 });
        let noise = GaussianNoiseSpec::new(1.0, 2, 0).unwrap();
        assert!(matches!(mc_score_samples(&base, &[0.0], 1, &noise), Err(Error::Data(_))));
    }

    #[test]
    fn noise_spec_validation() {
        assert!(GaussianNoiseSpec::new(0.0, 10, 0).is_err());
        assert!(GaussianNoiseSpec::new(1.0, 1, 0).is_err());
        assert!(BoundSpec::new(0.5, BoundVariant::Hoeffding).is_err());
        assert!(BoundSpec::new(0.0, BoundVariant::Hoeffding).is_err());
    }

    #[test]
    fn step_function_smooths_to_half() {
        // S_RS(0) = P(d > 0) = 1/2 for the step base at the origin.
        let base = FnScorer::new(1, |x: &[f64], _| if x[0] > 0.0 { 1.0 } else { 0.0 });
        let n_mc = 100_000;
        let noise = GaussianNoiseSpec::new(1.0, n_mc, 17).unwrap();
        let s = mc_score_samples(&base, &[0.0], 1, &noise).unwrap();
        let m = mc_mean(&s).get(0, 0);
        assert!((m - 0.5).abs() <= 3.0 * 0.5 / libm::sqrt(n_mc as f64), "mean {m}");
    }

    #[test]
    fn gaussian_noise_moments() {
        let spec = GaussianNoiseSpec::new(2.0, 2, 5).unwrap();
        let mut buf = [0.0; 4];
        let (mut s1, mut s2, mut cnt) = (0.0, 0.0, 0.0);
        for j in 0..20_000u64 {
            gaussian_noise(&spec, 3, j, &mut buf);
            for &v in &buf {
                s1 += v;
                s2 += v * v;
                cnt += 1.0;
            }
        }
        let mean = s1 / cnt;
        let var = s2 / cnt - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 4.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn mean_and_variance_examples() {
        let s = ScoreSamples::new(1, 1, 2, 1.0, None, alloc::vec![0.0, 1.0]).unwrap();
        assert_eq!(mc_mean(&s).get(0, 0), 0.5);
        assert_eq!(mc_variance(&s).unwrap().get(0, 0), 0.5);
        let c = ScoreSamples::new(1, 2, 4, 1.0, None, alloc::vec![0.3; 8]).unwrap();
        let v = mc_variance(&c).unwrap();
        assert!(v.values().iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn variance_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n_mc = 37;
        let values: Vec<f64> = (0..1000 * n_mc).map(|_| rng.random::<f64>()).collect();
        let s = ScoreSamples::new(250, 4, n_mc, 1.0, None, values.clone()).unwrap();
        let mean = mc_mean(&s);
        let var = mc_variance(&s).unwrap();
        for (c, cell) in values.chunks(n_mc).enumerate() {
            let m = cell.iter().sum::<f64>() / n_mc as f64;
            let v = cell.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n_mc - 1) as f64;
            assert!((mean.values()[c] - m).abs() < 1e-12);
            assert!((var.values()[c] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn tilde_examples() {
        assert_eq!(smoothed_tilde(0.5, DEFAULT_CLAMP_EPS), 0.0);
        assert!((smoothed_tilde(0.0, 1e-9) - (-5.997807)).abs() < 1e-5);
        assert!(smoothed_tilde(1.0, 1e-9).is_finite());
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let t = smoothed_tilde(i as f64 / 1000.0, DEFAULT_CLAMP_EPS);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn step_score_is_lipschitz_after_tilde() {
        // For the step base, S_RS(x) = Phi(x / sigma) exactly.
        for &sigma in &[0.1, 0.5, 2.0] {
            for &eps in &[0.0, 0.01, 0.2] {
                for i in -50..=50 {
                    let x = i as f64 * 0.02 * sigma;
                    let a = smoothed_tilde(std_normal_cdf(x / sigma), DEFAULT_CLAMP_EPS);
                    let b = smoothed_tilde(std_normal_cdf((x + eps) / sigma), DEFAULT_CLAMP_EPS);
                    assert!((b - a).abs() <= eps / sigma + 1e-9, "x={x} sigma={sigma} eps={eps}");
                }
            }
        }
    }
}
