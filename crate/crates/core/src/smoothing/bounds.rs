//! One-sided concentration bounds for means of `[0, 1]`-valued draws.

use crate::error::{bail, Result};

/// Hoeffding deviation `sqrt(-ln(beta) / (2 n))`: with probability at least
/// `1 - beta` the empirical mean of `n` i.i.d. `[0, 1]` draws is at least the
/// expectation minus this amount (and symmetrically from above).
pub fn hoeffding_bound(beta: f64, n_mc: usize) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        bail!(Argument, "beta must lie in (0, 1], got {beta}");
    }
    if n_mc == 0 {
        bail!(Argument, "Hoeffding bound needs at least one draw");
    }
    Ok(libm::sqrt(-libm::log(beta) / (2.0 * n_mc as f64)).max(0.0))
}

/// Empirical Bernstein deviation
/// `sqrt(2 V ln(2/beta) / n) + 7 ln(2/beta) / (3 (n - 1))`, where `V` is the
/// unbiased sample variance of the `n` draws.
pub fn bernstein_bound(beta: f64, n_mc: usize, variance: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        bail!(Argument, "beta must lie in (0, 1], got {beta}");
    }
    if n_mc < 2 {
        bail!(Argument, "empirical Bernstein bound needs at least 2 draws, got {n_mc}");
    }
    if !(variance >= 0.0) {
        bail!(Argument, "variance must be non-negative, got {variance}");
    }
    let n = n_mc as f64;
    let l = libm::log(2.0 / beta);
    Ok(libm::sqrt(2.0 * variance * l / n) + 7.0 * l / (3.0 * (n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::smoothing::mc_variance_slice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hoeffding_values() {
        assert!((hoeffding_bound(0.001, 256).unwrap() - 0.116154).abs() < 1e-6);
        assert_eq!(hoeffding_bound(1.0, 10).unwrap(), 0.0);
        for &(beta, n) in &[(0.01, 7usize), (0.3, 100), (0.001, 256)] {
            let a = hoeffding_bound(beta, 4 * n).unwrap();
            let b = hoeffding_bound(beta, n).unwrap();
            assert!((a - b / 2.0).abs() < 1e-15);
        }
        assert!(matches!(hoeffding_bound(0.0, 10), Err(Error::Argument(_))));
        assert!(matches!(hoeffding_bound(-0.1, 10), Err(Error::Argument(_))));
    }

    #[test]
    fn bernstein_values() {
        assert!((bernstein_bound(0.001, 256, 0.0).unwrap() - 0.069551).abs() < 1e-6);
        assert!((bernstein_bound(0.001, 256, 0.01).unwrap() - 0.093920).abs() < 1e-6);
        let mut prev = 0.0;
        for i in 0..=25 {
            let b = bernstein_bound(0.01, 64, i as f64 * 0.01).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        assert!(matches!(bernstein_bound(0.01, 64, -1e-3), Err(Error::Argument(_))));
        assert!(matches!(bernstein_bound(0.01, 1, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn bernstein_beats_hoeffding_at_zero_variance() {
        for &n in &[256usize, 1024, 10_000] {
            assert!(bernstein_bound(0.001, n, 0.0).unwrap() < hoeffding_bound(0.001, n).unwrap());
        }
    }

    /// Fraction of repetitions in which the empirical mean exceeds the true
    /// mean by more than the bound; `draw` produces one `[0, 1]` sample.
    fn violation_rate(
        reps: usize,
        n: usize,
        mean: f64,
        bound: impl Fn(&[f64]) -> f64,
        mut draw: impl FnMut(&mut ChaCha8Rng) -> f64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0D);
        let mut buf = alloc::vec![0.0; n];
        let mut bad = 0;
        for _ in 0..reps {
            buf.iter_mut().for_each(|v| *v = draw(&mut rng));
            let m = buf.iter().sum::<f64>() / n as f64;
            if m - mean > bound(&buf) {
                bad += 1;
            }
        }
        bad as f64 / reps as f64
    }

    #[test]
    fn bounds_hold_empirically() {
        let (beta, n, reps) = (0.05, 64, 10_000);
        let se = libm::sqrt(beta * (1.0 - beta) / reps as f64);
        let hoef = hoeffding_bound(beta, n).unwrap();
        // Bernoulli(0.5) has the largest variance of any [0, 1] law.
        let r = violation_rate(reps, n, 0.5, |_| hoef, |g| if g.random_bool(0.5) { 1.0 } else { 0.0 });
        assert!(r <= beta + 3.0 * se, "hoeffding violation rate {r}");
        let r = violation_rate(
            reps,
            n,
            0.1,
            |s| bernstein_bound(beta, n, mc_variance_slice(s)).unwrap(),
            |g| if g.random_bool(0.1) { 1.0 } else { 0.0 },
        );
        assert!(r <= beta + 3.0 * se, "bernstein violation rate {r}");
    }
}
