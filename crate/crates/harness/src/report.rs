//! Experiment reports.
//!
//! A report has a deterministic `body` (configuration echo, per-split rows,
//! failures, aggregates) and a separate `timing` section. Two runs with the
//! same configuration produce byte-identical bodies; only `timing` differs.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: usize,
    /// Examples used only to fit the score transformation.
    pub n_ranking: usize,
    /// Examples used to pick the threshold.
    pub n_cal: usize,
    pub n_test: usize,
    pub coverage: f64,
    pub avg_size: f64,
    /// Size of plain split-conformal sets on the same conformity score.
    pub vanilla_avg_size: f64,
    /// `avg_size - vanilla_avg_size`.
    pub conservativeness: f64,
    /// Fraction of test sets that contain every label.
    pub trivial_rate: f64,
    /// Slope of the empirical inverse CDF of calibration scores at
    /// `1 - alpha`; absent when the calibration set is too small.
    pub cdf_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub split: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }

    /// Standard error of the mean over `n` values.
    pub fn se(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_splits: usize,
    pub coverage: MeanStd,
    pub avg_size: MeanStd,
    pub vanilla_avg_size: MeanStd,
    pub conservativeness: MeanStd,
    pub trivial_rate: MeanStd,
    pub cdf_slope: Option<MeanStd>,
}

impl Aggregate {
    pub fn from_rows(rows: &[SplitRow]) -> Option<Self> {
        let col = |f: fn(&SplitRow) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
        let slopes: Vec<f64> = rows.iter().filter_map(|r| r.cdf_slope).collect();
        Some(Self {
            n_splits: rows.len(),
            coverage: col(|r| r.coverage)?,
            avg_size: col(|r| r.avg_size)?,
            vanilla_avg_size: col(|r| r.vanilla_avg_size)?,
            conservativeness: col(|r| r.conservativeness)?,
            trivial_rate: col(|r| r.trivial_rate)?,
            cdf_slope: MeanStd::of(&slopes),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub library_version: String,
    pub config: ExperimentConfig,
    pub splits: Vec<SplitRow>,
    pub failures: Vec<SplitFailure>,
    /// Absent when every split failed.
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Wall-clock seconds spent producing scores (training, smoothing, file reads).
    pub scoring_seconds: f64,
    /// Wall-clock seconds spent calibrating and evaluating splits.
    pub splits_seconds: f64,
    /// Unix time in milliseconds when the run finished.
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub body: ReportBody,
    pub timing: Timing,
}

impl Report {
    pub fn new(config: ExperimentConfig, splits: Vec<SplitRow>, failures: Vec<SplitFailure>, timing: Timing) -> Self {
        let aggregate = Aggregate::from_rows(&splits);
        Self {
            body: ReportBody { library_version: env!("CARGO_PKG_VERSION").into(), config, splits, failures, aggregate },
            timing,
        }
    }

    /// A run succeeds only when every split does.
    pub fn succeeded(&self) -> bool {
        self.body.failures.is_empty()
    }

    /// Canonical serialization of the deterministic part.
    pub fn body_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report bodies always serialize")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Recomputes the aggregates from the split rows and compares them with
    /// the stored values.
    pub fn check_aggregates(&self) -> Result<(), String> {
        let fresh = Aggregate::from_rows(&self.body.splits);
        match (&fresh, &self.body.aggregate) {
            (None, None) => Ok(()),
            (Some(a), Some(b)) => {
                let pairs = [
                    ("coverage", a.coverage, b.coverage),
                    ("avg_size", a.avg_size, b.avg_size),
                    ("vanilla_avg_size", a.vanilla_avg_size, b.vanilla_avg_size),
                    ("conservativeness", a.conservativeness, b.conservativeness),
                    ("trivial_rate", a.trivial_rate, b.trivial_rate),
                ];
                if a.n_splits != b.n_splits {
                    return Err(format!("stored n_splits {} but {} rows", b.n_splits, a.n_splits));
                }
                for (name, x, y) in pairs {
                    if !close(x, y) {
                        return Err(format!("{name}: stored {y:?}, recomputed {x:?}"));
                    }
                }
                match (a.cdf_slope, b.cdf_slope) {
                    (None, None) => Ok(()),
                    (Some(x), Some(y)) if close(x, y) => Ok(()),
                    (x, y) => Err(format!("cdf_slope: stored {y:?}, recomputed {x:?}")),
                }
            }
            (a, b) => Err(format!("stored aggregate {b:?}, recomputed {a:?}")),
        }
    }
}

fn close(a: MeanStd, b: MeanStd) -> bool {
    let tol = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    tol(a.mean, b.mean) && tol(a.std, b.std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(split: usize, coverage: f64, avg_size: f64) -> SplitRow {
        SplitRow {
            split,
            n_ranking: 0,
            n_cal: 10,
            n_test: 10,
            coverage,
            avg_size,
            vanilla_avg_size: 1.0,
            conservativeness: avg_size - 1.0,
            trivial_rate: 0.0,
            cdf_slope: (split % 2 == 0).then_some(2.0),
        }
    }

    #[test]
    fn mean_std_examples() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).unwrap(), MeanStd { mean: 7.0, std: 0.0 });
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn single_split_aggregate_equals_the_row() {
        let r = Report::new(ExperimentConfig::default(), vec![row(0, 0.9, 1.5)], vec![], Timing::default());
        let a = r.body.aggregate.as_ref().unwrap();
        assert_eq!((a.coverage.mean, a.coverage.std), (0.9, 0.0));
        assert_eq!(a.avg_size.mean, 1.5);
        assert_eq!(a.cdf_slope.unwrap().mean, 2.0);
    }

    #[test]
    fn reparsed_report_recomputes_its_aggregates() {
        let rows = (0..7).map(|i| row(i, 0.9 + 0.001 * i as f64, 1.0 + 0.1 * (i * i) as f64)).collect();
        let r = Report::new(
            ExperimentConfig::default(),
            rows,
            vec![],
            Timing { scoring_seconds: 1.5, ..Default::default() },
        );
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        back.check_aggregates().unwrap();

        let mut tampered = back.clone();
        tampered.body.splits[3].coverage = 0.5;
        assert!(tampered.check_aggregates().unwrap_err().contains("coverage"));
    }

    #[test]
    fn failures_mark_the_run_failed() {
        let r = Report::new(
            ExperimentConfig::default(),
            vec![],
            vec![SplitFailure { split: 0, reason: "x".into() }],
            Timing::default(),
        );
        assert!(!r.succeeded());
        assert!(r.body.aggregate.is_none());
        r.check_aggregates().unwrap();
    }
}
