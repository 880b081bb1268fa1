//! The work behind each `rscp` subcommand, kept out of `main` so it can be
//! tested without spawning the binary.

use std::path::Path;
use std::time::Instant;

use rscp_core::calibrate::{conformal_quantile, evaluate, predict_set, PredictionSet, Threshold};
use rscp_core::model::LinearSoftmaxModel;
use rscp_core::ptt::{transform_matrix, transform_samples, PttParams};
use rscp_core::rct::{train_rct, RctConfig};
use rscp_core::robust::{rscp_plus_set, rscp_set, CalibrationArtifact, RobustSpec};
use rscp_core::scores::{ScoreMatrix, ScoreSamples};
use rscp_core::smoothing::{mc_mean_slice, mc_variance_slice, smoothed_tilde};
use rscp_core::split::split_data;
use rscp_core::synthetic1d::{failure_table, size_table, FailureTableRow, SizeTableRow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Method, Source};
use crate::error::{Error, Result};
use crate::experiment::{blob_data, ptt_params, run_experiment, BlobData};
use crate::formats::{read_scored_dataset, read_scores, ScoreFile};

/// Calibration result written by `calibrate` and read by `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    /// Split conformal threshold on clean scores.
    Vanilla { tau: Threshold, ptt: Option<PttParams> },
    /// Thresholds of both smoothed rules.
    Robust(CalibrationArtifact),
}

impl Artifact {
    fn ptt(&self) -> Option<&PttParams> {
        match self {
            Artifact::Vanilla { ptt, .. } => ptt.as_ref(),
            Artifact::Robust(a) => a.ptt.as_ref(),
        }
    }
}

/// Which smoothed rule `predict` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Split conformal on clean scores.
    Vanilla,
    /// Inflated threshold on `Phi^-1` of the Monte-Carlo mean.
    Rscp,
    /// Certified Monte-Carlo rule.
    RscpPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetsFile {
    pub rule: Rule,
    pub sets: Vec<PredictionSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub coverage: f64,
    pub avg_size: f64,
    pub trivial_rate: f64,
}

/// The configured holdout and its complement, ascending.
fn ptt_reference_split(cfg: &ExperimentConfig, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let holdout = split_data(n, cfg.holdout_size(), cfg.seed, 0)?.holdout;
    let rest = (0..n).filter(|i| holdout.binary_search(i).is_err()).collect();
    Ok((holdout, rest))
}

fn means(s: &ScoreSamples) -> Result<ScoreMatrix> {
    let (n, k) = (s.rows(), s.num_classes());
    let v = (0..n).flat_map(|i| (0..k).map(move |c| (i, c))).map(|(i, c)| mc_mean_slice(s.cell(i, c))).collect();
    Ok(ScoreMatrix::new(n, k, v)?)
}

fn variances(s: &ScoreSamples) -> Result<ScoreMatrix> {
    let (n, k) = (s.rows(), s.num_classes());
    let v = (0..n).flat_map(|i| (0..k).map(move |c| (i, c))).map(|(i, c)| mc_variance_slice(s.cell(i, c))).collect();
    Ok(ScoreMatrix::new_unbounded(n, k, v)?)
}

/// Calibrates on a score file. A score matrix gives a vanilla artifact, a
/// sample tensor a robust one. With the transformation enabled, the
/// configured holdout is spent on fitting it and the remaining examples
/// calibrate.
pub fn calibrate(cfg: &ExperimentConfig, scores: &Path, labels: &Path) -> Result<Artifact> {
    let (file, labels) = read_scored_dataset(scores, labels)?;
    let n = labels.len();
    let (reference_rows, cal) =
        if cfg.ptt.enabled { ptt_reference_split(cfg, n)? } else { (Vec::new(), (0..n).collect()) };
    match file {
        ScoreFile::Matrix(m) => {
            let (m, ptt) = if cfg.ptt.enabled {
                let params = ptt_params(cfg, reference_rows.iter().map(|&i| m.get(i, labels[i])).collect())?;
                (transform_matrix(&m, &params)?, Some(params))
            } else {
                (m, None)
            };
            let cal_scores: Vec<f64> = cal.iter().map(|&i| m.get(i, labels[i])).collect();
            Ok(Artifact::Vanilla { tau: conformal_quantile(&cal_scores, cfg.alpha)?, ptt })
        }
        ScoreFile::Samples(s) => {
            if (s.sigma - cfg.sigma).abs() > 1e-12 * cfg.sigma {
                return Err(Error::Config(format!(
                    "score file was smoothed with sigma {}, configuration says {}",
                    s.sigma, cfg.sigma
                )));
            }
            let (s, ptt) = if cfg.ptt.enabled {
                let params = ptt_params(cfg, reference_rows.iter().map(|&i| s.cell(i, labels[i])[0]).collect())?;
                (transform_samples(&s, &params)?, Some(params))
            } else {
                (s, None)
            };
            let mean = means(&s)?;
            let cal_scores: Vec<f64> = cal.iter().map(|&i| mean.get(i, labels[i])).collect();
            let spec = RobustSpec {
                alpha: cfg.alpha,
                beta: cfg.beta,
                epsilon: cfg.epsilon,
                sigma: cfg.sigma,
                n_mc: s.n_mc(),
                bound_variant: cfg.bound_variant,
                clamp_eps: cfg.clamp_eps,
            };
            Ok(Artifact::Robust(CalibrationArtifact::calibrate(&cal_scores, &spec, ptt)?))
        }
    }
}

/// Builds prediction sets for every example of a score file. `rule`
/// defaults to the certified rule for robust artifacts.
pub fn predict(art: &Artifact, scores: &Path, rule: Option<Rule>) -> Result<SetsFile> {
    let file = read_scores(scores)?;
    match (art, file) {
        (Artifact::Vanilla { tau, .. }, ScoreFile::Matrix(m)) => {
            if rule.is_some_and(|r| r != Rule::Vanilla) {
                return Err(Error::Config("a vanilla artifact only supports the vanilla rule".into()));
            }
            let m = match art.ptt() {
                Some(p) => transform_matrix(&m, p)?,
                None => m,
            };
            let sets = (0..m.rows()).map(|i| predict_set(m.row(i), tau.value)).collect();
            Ok(SetsFile { rule: Rule::Vanilla, sets })
        }
        (Artifact::Robust(a), ScoreFile::Samples(s)) => {
            if s.n_mc() != a.n_mc {
                return Err(Error::Config(format!(
                    "artifact was calibrated with {} Monte-Carlo draws, score file has {}",
                    a.n_mc,
                    s.n_mc()
                )));
            }
            if (s.sigma - a.sigma).abs() > 1e-12 * a.sigma {
                return Err(Error::Config(format!(
                    "artifact sigma {} does not match score file sigma {}",
                    a.sigma, s.sigma
                )));
            }
            let s = match &a.ptt {
                Some(p) => transform_samples(&s, p)?,
                None => s,
            };
            let mean = means(&s)?;
            match rule.unwrap_or(Rule::RscpPlus) {
                Rule::RscpPlus => {
                    let var = variances(&s)?;
                    let sets = (0..mean.rows())
                        .map(|i| rscp_plus_set(mean.row(i), Some(var.row(i)), a))
                        .collect::<rscp_core::Result<_>>()?;
                    Ok(SetsFile { rule: Rule::RscpPlus, sets })
                }
                Rule::Rscp => {
                    let tilde = mean.map(|m| smoothed_tilde(m, a.clamp_eps));
                    let sets = (0..tilde.rows()).map(|i| rscp_set(tilde.row(i), a.tau_adj())).collect();
                    Ok(SetsFile { rule: Rule::Rscp, sets })
                }
                Rule::Vanilla => Err(Error::Config("a robust artifact supports the rscp and rscp_plus rules".into())),
            }
        }
        (Artifact::Vanilla { .. }, ScoreFile::Samples(_)) => {
            Err(Error::Config("a vanilla artifact needs an RCPM1 score matrix, found RCPS1 samples".into()))
        }
        (Artifact::Robust(_), ScoreFile::Matrix(_)) => {
            Err(Error::Config("a robust artifact needs an RCPS1 sample file, found an RCPM1 matrix".into()))
        }
    }
}

pub fn eval(sets: &SetsFile, labels: &[usize]) -> Result<EvalSummary> {
    let e = evaluate(&sets.sets, labels)?;
    let full = sets.sets.iter().filter(|s| s.is_full()).count();
    let n = sets.sets.len();
    Ok(EvalSummary {
        n,
        coverage: e.coverage,
        avg_size: e.avg_size,
        trivial_rate: if n == 0 { 0.0 } else { full as f64 / n as f64 },
    })
}

/// Settings of the 1-D oracle tables.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTables {
    pub alpha: f64,
    pub epsilon: f64,
    pub sigma2: Vec<f64>,
    pub failure_sigmas: Vec<f64>,
}

impl Default for OracleTables {
    fn default() -> Self {
        Self { alpha: 0.1, epsilon: 0.01, sigma2: vec![0.01, 0.001, 0.0001], failure_sigmas: vec![0.1, 0.2, 0.3] }
    }
}

pub const SIZE_TABLE_FILE: &str = "size_table.csv";
pub const FAILURE_TABLE_FILE: &str = "failure_table.csv";

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Config(format!("{}: cannot write CSV: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `size_table.csv` and `failure_table.csv` into `dir`.
pub fn synthetic1d(t: &OracleTables, dir: &Path) -> Result<(Vec<SizeTableRow>, Vec<FailureTableRow>)> {
    let sizes = size_table(t.alpha, t.epsilon, &t.sigma2)?;
    let failures = failure_table(&t.failure_sigmas)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join(SIZE_TABLE_FILE), &sizes)?;
    write_csv(&dir.join(FAILURE_TABLE_FILE), &failures)?;
    Ok((sizes, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctModelFile {
    pub model: LinearSoftmaxModel,
    pub config: RctConfig,
    /// SHA-256 of the compact JSON of `config`.
    pub config_sha256: String,
    pub loss_history: Vec<f64>,
    /// Accuracy on the pool before and after robust training.
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
}

/// Training settings derived from an experiment configuration.
pub fn rct_config_for(cfg: &ExperimentConfig) -> RctConfig {
    RctConfig { alpha: cfg.alpha, epsilon: cfg.epsilon, sigma: cfg.sigma, seed: cfg.seed, ..RctConfig::default() }
}

pub fn config_fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configurations always serialize");
    format!("{:x}", Sha256::digest(json))
}

/// Fits the blob classifier, then fine-tunes it with the robust conformal
/// loss on the same training examples.
pub fn train_rct_command(cfg: &ExperimentConfig, rct: &RctConfig) -> Result<RctModelFile> {
    let Source::Blobs(b) = &cfg.source else {
        return Err(Error::Config("train-rct needs a blobs source".into()));
    };
    let BlobData { model, train, pool } = blob_data(cfg, b)?;
    let out = train_rct(&train, &model, rct)?;
    Ok(RctModelFile {
        config_sha256: config_fingerprint(rct),
        config: rct.clone(),
        loss_history: out.loss_history,
        initial_accuracy: model.accuracy(&pool),
        final_accuracy: out.model.accuracy(&pool),
        model: out.model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_mc: usize,
    pub ptt: bool,
    pub coverage: f64,
    pub avg_size: f64,
    pub trivial_rate: f64,
    pub conservativeness: f64,
    pub failed_splits: usize,
    pub seconds: f64,
}

/// Certified-rule runs of `cfg` for every `n_mc`, without and with the
/// transformation; everything else, seeds included, is shared.
pub fn bench(cfg: &ExperimentConfig, n_mcs: &[usize]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(2 * n_mcs.len());
    for &n_mc in n_mcs {
        for ptt in [false, true] {
            let mut c = cfg.clone();
            c.method = Method::RscpPlus;
            c.n_mc = n_mc;
            c.ptt.enabled = ptt;
            let start = Instant::now();
            let report = run_experiment(&c)?;
            let seconds = start.elapsed().as_secs_f64();
            let failed_splits = report.body.failures.len();
            let Some(a) = report.body.aggregate else {
                return Err(Error::Config(format!("every split failed at n_mc {n_mc}, ptt {ptt}")));
            };
            log::info!("n_mc {n_mc:>5} ptt {ptt:<5} size {:.3} trivial {:.3}", a.avg_size.mean, a.trivial_rate.mean);
            rows.push(BenchRow {
                n_mc,
                ptt,
                coverage: a.coverage.mean,
                avg_size: a.avg_size.mean,
                trivial_rate: a.trivial_rate.mean,
                conservativeness: a.conservativeness.mean,
                failed_splits,
                seconds,
            });
        }
    }
    Ok(rows)
}
