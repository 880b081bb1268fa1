//! Base nonconformity scores and the classifier boundary.
//!
//! A score `S(x, y)` is small when label `y` conforms to input `x`. Both
//! scores here live in `[0, 1]`, which the smoothing stage requires.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{bail, Error, Result};
use crate::rng::{keyed_rng, TAG_APS};

/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOL: f64 = 1e-6;

/// A validated class-probability vector: entries in `[0, 1]`, summing to 1
/// within [`PROB_SUM_TOL`], with at least two classes.
///
/// Vectors outside tolerance are rejected, never renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        bail!(Data, "probability vector needs at least 2 classes, got {}", p.len());
    }
    if let Some((k, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        bail!(Data, "probability {v} for class {k} outside [0, 1]");
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        bail!(Data, "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL}");
    }
    Ok(())
}

/// Which base score to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `1 - p[y]`.
    Hps,
    /// Randomized cumulative mass of classes at least as likely as `y`.
    Aps,
}

fn check_class(p: &ProbVector, y: usize) -> Result<()> {
    if y >= p.num_classes() {
        bail!(Argument, "class index {y} out of range for {} classes", p.num_classes());
    }
    Ok(())
}

pub fn hps_score(p: &ProbVector, y: usize) -> Result<f64> {
    check_class(p, y)?;
    Ok(1.0 - p.0[y])
}

/// APS score: mass of every other class with probability `>= p[y]`, plus
/// `u * p[y]`. Ties with `y` count as "more likely"; `y` itself is excluded
/// from the sum. The result is clamped into `[0, 1]` to absorb rounding.
pub fn aps_score(p: &ProbVector, y: usize, u: f64) -> Result<f64> {
    check_class(p, y)?;
    if !(0.0..=1.0).contains(&u) {
        bail!(Argument, "APS randomizer u = {u} outside [0, 1]");
    }
    let py = p.0[y];
    let above: f64 = p.0.iter().enumerate().filter(|&(k, &q)| k != y && q >= py).map(|(_, &q)| q).sum();
    Ok((above + py * u).clamp(0.0, 1.0))
}

/// Something that maps an input vector to class probabilities.
pub trait ProbClassifier {
    fn num_classes(&self) -> usize;
    /// Writes raw class probabilities for `x` into `out` (length `num_classes`).
    fn predict_proba_into(&self, x: &[f64], out: &mut [f64]);
}

impl<C: ProbClassifier + ?Sized> ProbClassifier for &C {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn predict_proba_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).predict_proba_into(x, out)
    }
}

/// Dense `n x K` matrix of scores, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// Builds a matrix and checks every entry lies in `[0, 1]`.
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        let m = Self::new_unbounded(n, k, values)?;
        if let Some(pos) = m.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            bail!(Data, "score {} at row {}, class {} outside [0, 1]", m.values[pos], pos / k.max(1), pos % k.max(1));
        }
        Ok(m)
    }

    /// Builds a matrix of arbitrary real scores (e.g. Φ⁻¹-transformed ones).
    pub fn new_unbounded(n: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * k {
            bail!(Data, "expected {} values for a {n}x{k} matrix, found {}", n * k, values.len());
        }
        Ok(Self { n, k, values })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.k + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreMatrix {
        ScoreMatrix { n: self.n, k: self.k, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Scores of the given label for each row.
    pub fn gather(&self, rows: &[usize], labels: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.get(i, labels[i])).collect()
    }
}

/// Monte-Carlo draws of a base score under Gaussian input noise: an
/// `n x K x N_MC` tensor laid out example-major, then class, then draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSamples {
    n: usize,
    k: usize,
    n_mc: usize,
    /// Smoothing standard deviation in input units.
    pub sigma: f64,
    /// Seed of the noise stream, when known (files do not record it).
    pub seed: Option<u64>,
    values: Vec<f64>,
}

impl ScoreSamples {
    pub fn new(n: usize, k: usize, n_mc: usize, sigma: f64, seed: Option<u64>, values: Vec<f64>) -> Result<Self> {
        if n_mc < 2 {
            bail!(Argument, "need at least 2 Monte-Carlo draws, got {n_mc}");
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            bail!(Argument, "sigma must be positive, got {sigma}");
        }
        if values.len() != n * k * n_mc {
            bail!(
                Data,
                "expected {} sample values for n={n}, K={k}, N_MC={n_mc}, found {}",
                n * k * n_mc,
                values.len()
            );
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            bail!(
                Data,
                "sample {} at example {}, class {}, draw {} outside [0, 1]",
                values[pos],
                pos / (k * n_mc),
                (pos / n_mc) % k,
                pos % n_mc
            );
        }
        Ok(Self { n, k, n_mc, sigma, seed, values })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn n_mc(&self) -> usize {
        self.n_mc
    }

    /// The `N_MC` draws for example `i`, class `k`.
    pub fn cell(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.k + k) * self.n_mc;
        &self.values[start..start + self.n_mc]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Applies `f(value, example, class, draw)` to every draw. `f` must keep
    /// values in `[0, 1]`.
    pub fn map_indexed(&self, f: impl Fn(f64, usize, usize, usize) -> f64) -> Result<ScoreSamples> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(pos, &v)| f(v, pos / (self.k * self.n_mc), (pos / self.n_mc) % self.k, pos % self.n_mc))
            .collect();
        ScoreSamples::new(self.n, self.k, self.n_mc, self.sigma, self.seed, values)
    }

    /// Keeps only the listed examples, in the given order.
    pub fn select(&self, rows: &[usize]) -> ScoreSamples {
        let stride = self.k * self.n_mc;
        let mut values = Vec::with_capacity(rows.len() * stride);
        for &i in rows {
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        ScoreSamples { n: rows.len(), values, ..self.clone_header() }
    }

    fn clone_header(&self) -> ScoreSamples {
        ScoreSamples { n: 0, k: self.k, n_mc: self.n_mc, sigma: self.sigma, seed: self.seed, values: Vec::new() }
    }
}

/// A class scorer evaluates a base score for every class at one input.
///
/// `query` identifies the evaluation (an example index, or an example and
/// Monte-Carlo draw folded together); randomized scores derive their
/// randomness from it so results do not depend on evaluation order.
pub trait ClassScorer {
    fn num_classes(&self) -> usize;
    fn score_all(&self, x: &[f64], query: u64, out: &mut [f64]) -> Result<()>;
}

impl<S: ClassScorer + ?Sized> ClassScorer for &S {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn score_all(&self, x: &[f64], query: u64, out: &mut [f64]) -> Result<()> {
        (**self).score_all(x, query, out)
    }
}

/// HPS or APS on top of a probabilistic classifier.
#[derive(Debug, Clone)]
pub struct BaseScorer<C> {
    pub classifier: C,
    pub kind: ScoreKind,
    /// Seed of the APS randomizer stream.
    pub seed: u64,
}

impl<C: ProbClassifier> BaseScorer<C> {
    pub fn new(classifier: C, kind: ScoreKind, seed: u64) -> Self {
        Self { classifier, kind, seed }
    }
}

impl<C: ProbClassifier> ClassScorer for BaseScorer<C> {
    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn score_all(&self, x: &[f64], query: u64, out: &mut [f64]) -> Result<()> {
        let k = self.classifier.num_classes();
        let mut probs = vec![0.0; k];
        self.classifier.predict_proba_into(x, &mut probs);
        let p = ProbVector::new(probs)?;
        for (y, slot) in out.iter_mut().enumerate().take(k) {
            *slot = match self.kind {
                ScoreKind::Hps => hps_score(&p, y)?,
                ScoreKind::Aps => {
                    let u: f64 = keyed_rng(self.seed, &[TAG_APS, query, y as u64]).random();
                    aps_score(&p, y, u)?
                }
            };
        }
        Ok(())
    }
}

/// A scorer defined by a plain function `(x, class) -> score`.
#[derive(Debug, Clone)]
pub struct FnScorer<F> {
    num_classes: usize,
    f: F,
}

impl<F: Fn(&[f64], usize) -> f64> FnScorer<F> {
    pub fn new(num_classes: usize, f: F) -> Self {
        Self { num_classes, f }
    }
}

impl<F: Fn(&[f64], usize) -> f64> ClassScorer for FnScorer<F> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn score_all(&self, x: &[f64], _query: u64, out: &mut [f64]) -> Result<()> {
        for (y, slot) in out.iter_mut().enumerate().take(self.num_classes) {
            *slot = (self.f)(x, y);
        }
        Ok(())
    }
}

/// Scores every (example, class) pair of `data`. APS randomizers are keyed by
/// `(seed, example index, class index)`; HPS ignores the seed.
pub fn score_matrix<C: ProbClassifier>(
    classifier: &C,
    data: &LabeledDataset,
    kind: ScoreKind,
    seed: u64,
) -> Result<ScoreMatrix> {
    let scorer = BaseScorer::new(classifier, kind, seed);
    let k = classifier.num_classes();
    let mut values = vec![0.0; data.len() * k];
    for (i, row) in values.chunks_mut(k.max(1)).enumerate().take(data.len()) {
        scorer.score_all(data.input(i), i as u64, row).map_err(|e| Error::Data(format!("row {i}: {e}")))?;
    }
    ScoreMatrix::new(data.len(), k, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    #[test]
    fn hps_examples() {
        assert!((hps_score(&pv(&[0.7, 0.3]), 0).unwrap() - 0.3).abs() < 1e-15);
        for y in 0..4 {
            assert_eq!(hps_score(&pv(&[0.25; 4]), y).unwrap(), 0.75);
        }
        assert_eq!(hps_score(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert!(matches!(hps_score(&pv(&[0.5, 0.5]), 2), Err(Error::Argument(_))));
    }

    #[test]
    fn aps_examples() {
        let p = pv(&[0.5, 0.3, 0.2]);
        assert_eq!(aps_score(&p, 0, 1.0).unwrap(), 0.5);
        assert_eq!(aps_score(&p, 1, 0.0).unwrap(), 0.5);
        // Enumerate class mass: classes more likely than class 2 are 0 and 1.
        let above: f64 = [0.5, 0.3].iter().sum();
        assert!((aps_score(&p, 2, 0.5).unwrap() - (above + 0.2 * 0.5)).abs() < 1e-15);
        assert!((aps_score(&p, 2, 0.5).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(aps_score(&p, 0, 1.5), Err(Error::Argument(_))));
        assert!(matches!(aps_score(&p, 0, -0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn aps_ties_count_as_more_likely() {
        let p = pv(&[0.4, 0.4, 0.2]);
        assert!((aps_score(&p, 0, 0.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((aps_score(&p, 1, 0.0).unwrap() - 0.4).abs() < 1e-15);
        assert!((aps_score(&p, 0, 1.0).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn aps_non_increasing_as_label_climbs_the_ranking() {
        // Other entries fixed at 0.3 and 0.15; p[y] placed below, between and
        // above them (renormalization ignored).
        let score = |py: f64| {
            let probs = [0.3, 0.15, py];
            let above: f64 = probs[..2].iter().filter(|&&q| q >= py).sum();
            above + py
        };
        let sequence: Vec<f64> = [0.1, 0.2, 0.4].iter().map(|&py| score(py)).collect();
        assert!(sequence.windows(2).all(|w| w[1] <= w[0]), "{sequence:?}");
        let p = pv(&[0.3, 0.15, 0.1, 0.45]);
        let q = pv(&[0.3, 0.15, 0.4, 0.15]);
        assert!(aps_score(&q, 2, 1.0).unwrap() <= aps_score(&p, 2, 1.0).unwrap());
    }

    #[test]
    fn prob_vector_rejects_bad_input() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.2, -0.2]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 5e-7]).is_ok());
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(raw in proptest::collection::vec(0.0f64..1.0, 2..12), u in 0.0f64..=1.0, pick in 0usize..12) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p = pv(&raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / total).collect::<Vec<_>>());
            let y = pick % p.num_classes();
            let h = hps_score(&p, y).unwrap();
            let a = aps_score(&p, y, u).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn aps_with_u_one_is_mass_at_least_as_likely(raw in proptest::collection::vec(0.01f64..1.0, 2..8), pick in 0usize..8) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let y = pick % probs.len();
            let expected: f64 = probs.iter().filter(|&&q| q >= probs[y]).sum();
            let got = aps_score(&pv(&probs), y, 1.0).unwrap();
            prop_assert!((got - expected.min(1.0)).abs() < 1e-12);
        }
    }
}
