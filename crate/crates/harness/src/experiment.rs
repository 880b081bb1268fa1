//! Repeated-split experiment driver.
//!
//! Scores are produced once per run: every pool example gets its base
//! score (vanilla) or its per-class Monte-Carlo mean and variance (smoothed
//! methods), after the optional rank-then-sigmoid transformation. The
//! holdout used to fit that transformation is the same for every split, so
//! the transformed scores are too. Each split then only re-partitions the
//! remaining examples into calibration and test halves, calibrates and
//! evaluates. Splits run in parallel; results do not depend on scheduling.

use std::time::Instant;

use rayon::prelude::*;
use rscp_core::calibrate::{conformal_quantile, predict_set, PredictionSet, ThresholdValue};
use rscp_core::data::{BlobSpec, LabeledDataset};
use rscp_core::metrics::{conservativeness, inverse_cdf_slope};
use rscp_core::model::{train_blob_classifier, LinearSoftmaxModel};
use rscp_core::ptt::{transform_matrix, transform_samples, PttParams, PttScorer};
use rscp_core::rng::stream_key;
use rscp_core::robust::{rscp_plus_set, rscp_set, rscp_threshold, CalibrationArtifact, RobustSpec};
use rscp_core::scores::{score_matrix, BaseScorer, ClassScorer, ScoreMatrix, ScoreSamples};
use rscp_core::smoothing::{
    mc_mean_slice, mc_score_samples_one, mc_variance_slice, smoothed_tilde, BoundVariant, GaussianNoiseSpec,
};
use rscp_core::split::split_data;

use crate::config::{BlobSource, ExperimentConfig, Method, Source};
use crate::error::{Error, Result};
use crate::formats::{read_scored_dataset, ScoreFile};
use crate::report::{Report, SplitFailure, SplitRow, Timing};

/// Sub-seeds derived from the run seed.
const KEY_APS: u64 = 1;
const KEY_NOISE: u64 = 2;
const KEY_PTT_TIES: u64 = 3;

/// Per-example conformity scores of the whole pool.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolScores {
    /// Base scores on clean inputs.
    Clean(ScoreMatrix),
    /// Monte-Carlo means, with variances when the Bernstein margin needs them.
    Smoothed { mean: ScoreMatrix, var: Option<ScoreMatrix> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub scores: PoolScores,
    /// The fitted transformation, when enabled.
    pub ptt: Option<PttParams>,
}

impl ScoredPool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Noise used by smoothed runs of `cfg`.
pub fn noise_spec(cfg: &ExperimentConfig) -> Result<GaussianNoiseSpec> {
    Ok(GaussianNoiseSpec::new(cfg.sigma, cfg.n_mc, stream_key(cfg.seed, &[KEY_NOISE]))?)
}

/// A classifier fitted on generated blobs.
#[derive(Debug, Clone)]
pub struct BlobData {
    pub model: LinearSoftmaxModel,
    pub train: LabeledDataset,
    /// Examples split into holdout, calibration and test; never trained on.
    pub pool: LabeledDataset,
}

/// Generated train and pool sets and the classifier fitted on the former.
pub fn blob_data(cfg: &ExperimentConfig, b: &BlobSource) -> Result<BlobData> {
    let spec = BlobSpec {
        num_classes: b.num_classes,
        dim: b.dim,
        center_scale: b.center_scale,
        cluster_std: b.cluster_std,
        seed: cfg.seed,
    };
    let train = spec.sample(b.n_train, 0)?;
    let pool = spec.sample(b.n_pool, 1)?;
    let model = train_blob_classifier(&train, &b.train)?;
    Ok(BlobData { model, train, pool })
}

/// Indices of the holdout shared by every split.
fn holdout_indices(cfg: &ExperimentConfig, n: usize) -> Result<Vec<usize>> {
    Ok(split_data(n, cfg.holdout_size(), cfg.seed, 0)?.holdout)
}

pub(crate) fn ptt_params(cfg: &ExperimentConfig, reference: Vec<f64>) -> Result<PttParams> {
    Ok(PttParams::new(reference, cfg.ptt.b, cfg.ptt.temperature, stream_key(cfg.seed, &[KEY_PTT_TIES]))?)
}

fn gather(m: &ScoreMatrix, rows: &[usize], labels: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| m.get(i, labels[i])).collect()
}

/// Means and (optionally) variances of every example's Monte-Carlo block.
fn smooth_pool<S: ClassScorer + Sync>(
    scorer: &S,
    data: &LabeledDataset,
    noise: &GaussianNoiseSpec,
    with_var: bool,
) -> Result<PoolScores> {
    let (n, k) = (data.len(), scorer.num_classes());
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut block = vec![0.0; k * noise.n_mc];
            mc_score_samples_one(scorer, data.input(i), i as u64, noise, &mut block)?;
            let cells = block.chunks(noise.n_mc);
            let mean = cells.clone().map(mc_mean_slice).collect();
            let var = if with_var { cells.map(mc_variance_slice).collect() } else { Vec::new() };
            Ok((mean, var))
        })
        .collect::<rscp_core::Result<_>>()?;
    let mean = ScoreMatrix::new(n, k, rows.iter().flat_map(|r| r.0.iter().copied()).collect())?;
    let var = if with_var {
        Some(ScoreMatrix::new_unbounded(n, k, rows.iter().flat_map(|r| r.1.iter().copied()).collect())?)
    } else {
        None
    };
    Ok(PoolScores::Smoothed { mean, var })
}

fn sample_stats(s: &ScoreSamples, with_var: bool) -> Result<PoolScores> {
    let (n, k) = (s.rows(), s.num_classes());
    let cells = || (0..n).flat_map(move |i| (0..k).map(move |c| (i, c)));
    let mean = ScoreMatrix::new(n, k, cells().map(|(i, c)| mc_mean_slice(s.cell(i, c))).collect())?;
    let var = if with_var {
        Some(ScoreMatrix::new_unbounded(n, k, cells().map(|(i, c)| mc_variance_slice(s.cell(i, c))).collect())?)
    } else {
        None
    };
    Ok(PoolScores::Smoothed { mean, var })
}

/// Produces the conformity scores of every pool example.
pub fn score_pool(cfg: &ExperimentConfig) -> Result<ScoredPool> {
    cfg.validate()?;
    let with_var = cfg.method == Method::RscpPlus && cfg.bound_variant == BoundVariant::EmpiricalBernstein;
    match &cfg.source {
        Source::Blobs(b) => {
            let BlobData { model, pool, .. } = blob_data(cfg, b)?;
            let labels = pool.labels().to_vec();
            let aps_seed = stream_key(cfg.seed, &[KEY_APS]);
            let holdout = holdout_indices(cfg, pool.len())?;
            let clean = || score_matrix(&model, &pool, cfg.score, aps_seed);
            if cfg.method == Method::Vanilla {
                let base = clean()?;
                let (scores, ptt) = if cfg.ptt.enabled {
                    let params = ptt_params(cfg, gather(&base, &holdout, &labels))?;
                    (transform_matrix(&base, &params)?, Some(params))
                } else {
                    (base, None)
                };
                return Ok(ScoredPool { labels, num_classes: b.num_classes, scores: PoolScores::Clean(scores), ptt });
            }
            let scorer = BaseScorer::new(&model, cfg.score, aps_seed);
            let noise = noise_spec(cfg)?;
            if !cfg.ptt.enabled {
                let scores = smooth_pool(&scorer, &pool, &noise, with_var)?;
                return Ok(ScoredPool { labels, num_classes: b.num_classes, scores, ptt: None });
            }
            let reference = if cfg.ptt.holdout_smoothed {
                // Draws are keyed by (example, draw), so a one-draw spec
                // reproduces draw 0 of the full run.
                let first = GaussianNoiseSpec { n_mc: 1, ..noise };
                let mut cell = vec![0.0; b.num_classes];
                holdout
                    .iter()
                    .map(|&i| {
                        mc_score_samples_one(&scorer, pool.input(i), i as u64, &first, &mut cell)?;
                        Ok(cell[labels[i]])
                    })
                    .collect::<Result<Vec<f64>>>()?
            } else {
                gather(&clean()?, &holdout, &labels)
            };
            let params = ptt_params(cfg, reference)?;
            let transformed = PttScorer { base: scorer, params: params.clone() };
            let scores = smooth_pool(&transformed, &pool, &noise, with_var)?;
            Ok(ScoredPool { labels, num_classes: b.num_classes, scores, ptt: Some(params) })
        }
        Source::Files { scores, labels } => {
            let (file, labels) = read_scored_dataset(scores, labels)?;
            let holdout = holdout_indices(cfg, labels.len());
            match (file, cfg.method) {
                (ScoreFile::Matrix(m), Method::Vanilla) => {
                    let k = m.num_classes();
                    let (scores, ptt) = if cfg.ptt.enabled {
                        let params = ptt_params(cfg, gather(&m, &holdout?, &labels))?;
                        (transform_matrix(&m, &params)?, Some(params))
                    } else {
                        (m, None)
                    };
                    Ok(ScoredPool { labels, num_classes: k, scores: PoolScores::Clean(scores), ptt })
                }
                (ScoreFile::Samples(s), Method::Rscp | Method::RscpPlus) => {
                    if (s.sigma - cfg.sigma).abs() > 1e-12 * cfg.sigma {
                        return Err(Error::Config(format!(
                            "score file was smoothed with sigma {}, configuration says {}",
                            s.sigma, cfg.sigma
                        )));
                    }
                    let k = s.num_classes();
                    if !cfg.ptt.enabled {
                        return Ok(ScoredPool {
                            labels,
                            num_classes: k,
                            scores: sample_stats(&s, with_var)?,
                            ptt: None,
                        });
                    }
                    let reference = holdout?.iter().map(|&i| s.cell(i, labels[i])[0]).collect();
                    let params = ptt_params(cfg, reference)?;
                    let t = transform_samples(&s, &params)?;
                    Ok(ScoredPool { labels, num_classes: k, scores: sample_stats(&t, with_var)?, ptt: Some(params) })
                }
                (ScoreFile::Matrix(_), _) => {
                    Err(Error::Config("smoothed methods need an RCPS1 sample file, found an RCPM1 matrix".into()))
                }
                (ScoreFile::Samples(_), Method::Vanilla) => {
                    Err(Error::Config("the vanilla method needs an RCPM1 score matrix, found RCPS1 samples".into()))
                }
            }
        }
    }
}

fn trivial_rate(sets: &[PredictionSet]) -> f64 {
    sets.iter().filter(|s| s.is_full()).count() as f64 / sets.len() as f64
}

fn coverage(sets: &[PredictionSet], test: &[usize], labels: &[usize]) -> f64 {
    sets.iter().zip(test).filter(|(s, &i)| s.contains(labels[i])).count() as f64 / sets.len() as f64
}

fn avg_size(sets: &[PredictionSet]) -> f64 {
    sets.iter().map(PredictionSet::len).sum::<usize>() as f64 / sets.len() as f64
}

/// Calibrates and evaluates one split.
pub fn run_split(
    cfg: &ExperimentConfig,
    pool: &ScoredPool,
    tilde: Option<&ScoreMatrix>,
    split: usize,
) -> Result<SplitRow> {
    let s = split_data(pool.len(), cfg.holdout_size(), cfg.seed, split as u64)?;
    let (cal, n_ranking) = if cfg.ptt.enabled {
        (s.cal.clone(), s.holdout.len())
    } else if cfg.merge_holdout {
        (s.merged_calibration(), 0)
    } else {
        (s.cal.clone(), 0)
    };
    let labels = &pool.labels;
    let (robust, vanilla, cal_scores): (Vec<PredictionSet>, Vec<PredictionSet>, Vec<f64>) =
        match (&pool.scores, cfg.method) {
            (PoolScores::Clean(m), Method::Vanilla) => {
                let cal_scores = gather(m, &cal, labels);
                let tau = conformal_quantile(&cal_scores, cfg.alpha)?.value;
                let sets: Vec<_> = s.test.iter().map(|&i| predict_set(m.row(i), tau)).collect();
                (sets.clone(), sets, cal_scores)
            }
            (PoolScores::Smoothed { .. }, Method::Rscp) => {
                let t = tilde.expect("tilde scores are prepared for this method");
                let cal_scores = gather(t, &cal, labels);
                let tau = conformal_quantile(&cal_scores, cfg.alpha)?.value;
                let adj = match tau {
                    ThresholdValue::Finite { value } => {
                        ThresholdValue::Finite { value: rscp_threshold(value, cfg.epsilon, cfg.sigma) }
                    }
                    ThresholdValue::Infinite => ThresholdValue::Infinite,
                };
                let robust = s.test.iter().map(|&i| rscp_set(t.row(i), adj)).collect();
                let vanilla = s.test.iter().map(|&i| predict_set(t.row(i), tau)).collect();
                (robust, vanilla, cal_scores)
            }
            (PoolScores::Smoothed { mean, var }, Method::RscpPlus) => {
                let cal_scores = gather(mean, &cal, labels);
                let spec = RobustSpec {
                    alpha: cfg.alpha,
                    beta: cfg.beta,
                    epsilon: cfg.epsilon,
                    sigma: cfg.sigma,
                    n_mc: cfg.n_mc,
                    bound_variant: cfg.bound_variant,
                    clamp_eps: cfg.clamp_eps,
                };
                let art = CalibrationArtifact::calibrate(&cal_scores, &spec, pool.ptt.clone())?;
                let robust = s
                    .test
                    .iter()
                    .map(|&i| rscp_plus_set(mean.row(i), var.as_ref().map(|v| v.row(i)), &art))
                    .collect::<rscp_core::Result<Vec<_>>>()?;
                let tau = conformal_quantile(&cal_scores, cfg.alpha)?.value;
                let vanilla = s.test.iter().map(|&i| predict_set(mean.row(i), tau)).collect();
                (robust, vanilla, cal_scores)
            }
            _ => unreachable!("score_pool produces scores matching the method"),
        };
    let robust_sizes: Vec<f64> = robust.iter().map(|x| x.len() as f64).collect();
    let vanilla_sizes: Vec<f64> = vanilla.iter().map(|x| x.len() as f64).collect();
    Ok(SplitRow {
        split,
        n_ranking,
        n_cal: cal.len(),
        n_test: s.test.len(),
        coverage: coverage(&robust, &s.test, labels),
        avg_size: avg_size(&robust),
        vanilla_avg_size: avg_size(&vanilla),
        conservativeness: conservativeness(&robust_sizes, &vanilla_sizes)?,
        trivial_rate: trivial_rate(&robust),
        cdf_slope: inverse_cdf_slope(&cal_scores, 1.0 - cfg.alpha, cfg.slope_step).ok(),
    })
}

/// Runs every split of `cfg`. Errors before the split loop (bad files,
/// training failures) abort the run; a failing split is recorded in the
/// report, which then counts as failed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    let pool = score_pool(cfg)?;
    let scoring_seconds = start.elapsed().as_secs_f64();
    let tilde = match (&pool.scores, cfg.method) {
        (PoolScores::Smoothed { mean, .. }, Method::Rscp) => Some(mean.map(|m| smoothed_tilde(m, cfg.clamp_eps))),
        _ => None,
    };
    let start = Instant::now();
    let results: Vec<_> = (0..cfg.n_splits)
        .into_par_iter()
        .map(|split| {
            run_split(cfg, &pool, tilde.as_ref(), split).map_err(|e| SplitFailure { split, reason: e.to_string() })
        })
        .collect();
    let splits_seconds = start.elapsed().as_secs_f64();
    let (mut rows, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => {
                log::error!("split {} failed: {}", f.split, f.reason);
                failures.push(f);
            }
        }
    }
    let finished_unix_ms =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    Ok(Report::new(cfg.clone(), rows, failures, Timing { scoring_seconds, splits_seconds, finished_unix_ms }))
}
