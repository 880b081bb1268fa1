//! Marginal coverage of split conformal sets over many independent trials:
//! the mean coverage must lie in `[1 - alpha, 1 - alpha + 1/(n_cal + 1)]` up
//! to three standard errors.

use rscp_core::calibrate::{conformal_quantile, evaluate, predict_set};
use rscp_core::data::{BlobSpec, LabeledDataset};
use rscp_core::model::{train_blob_classifier, LinearSoftmaxModel, TrainConfig};
use rscp_core::ptt::{transform_matrix, PttParams, DEFAULT_B, DEFAULT_TEMPERATURE};
use rscp_core::scores::{score_matrix, ScoreKind, ScoreMatrix};

const ALPHA: f64 = 0.1;
const N_CAL: usize = 200;
const N_TEST: usize = 500;
const TRIALS: usize = 200;

fn blobs() -> BlobSpec {
    BlobSpec { num_classes: 4, dim: 3, center_scale: 3.0, cluster_std: 1.0, seed: 5 }
}

fn model() -> LinearSoftmaxModel {
    let train = blobs().sample(1000, u64::MAX).unwrap();
    train_blob_classifier(&train, &TrainConfig { iterations: 200, ..Default::default() }).unwrap()
}

fn coverage_of(cal: &ScoreMatrix, cal_data: &LabeledDataset, test: &ScoreMatrix, test_data: &LabeledDataset) -> f64 {
    let rows: Vec<usize> = (0..cal.rows()).collect();
    let tau = conformal_quantile(&cal.gather(&rows, cal_data.labels()), ALPHA).unwrap();
    let sets: Vec<_> = (0..test.rows()).map(|i| predict_set(test.row(i), tau.value)).collect();
    evaluate(&sets, test_data.labels()).unwrap().coverage
}

fn check(name: &str, coverages: &[f64]) {
    let n = coverages.len() as f64;
    let mean = coverages.iter().sum::<f64>() / n;
    let var = coverages.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let (lo, hi) = (1.0 - ALPHA, 1.0 - ALPHA + 1.0 / (N_CAL as f64 + 1.0));
    eprintln!("{name}: mean coverage {mean:.4} (se {se:.4})");
    assert!(mean >= lo - 3.0 * se && mean <= hi + 3.0 * se, "{name}: {mean} outside [{lo}, {hi}] +- 3 x {se}");
}

/// Data of trial `t`: calibration on stream `2t`, test on stream `2t + 1`.
fn trial_data(t: usize) -> (LabeledDataset, LabeledDataset) {
    let b = blobs();
    (b.sample(N_CAL, 2 * t as u64).unwrap(), b.sample(N_TEST, 2 * t as u64 + 1).unwrap())
}

#[test]
fn base_scores_cover() {
    let model = model();
    for (kind, name) in [(ScoreKind::Hps, "hps"), (ScoreKind::Aps, "aps")] {
        let cov: Vec<f64> = (0..TRIALS)
            .map(|t| {
                let (cal, test) = trial_data(t);
                let seed = 1000 + t as u64;
                let sc = score_matrix(&model, &cal, kind, seed).unwrap();
                let st = score_matrix(&model, &test, kind, seed + 1_000_000).unwrap();
                coverage_of(&sc, &cal, &st, &test)
            })
            .collect();
        check(name, &cov);
    }
}

#[test]
fn transformed_scores_cover() {
    let model = model();
    let holdout_size = 2000;
    for (kind, name) in [(ScoreKind::Hps, "ptt-hps"), (ScoreKind::Aps, "ptt-aps")] {
        let cov: Vec<f64> = (0..TRIALS)
            .map(|t| {
                let (cal, test) = trial_data(t);
                let holdout = blobs().sample(holdout_size, 1_000_000 + t as u64).unwrap();
                let seed = 1000 + t as u64;
                let sh = score_matrix(&model, &holdout, kind, seed + 2_000_000).unwrap();
                let rows: Vec<usize> = (0..holdout.len()).collect();
                let params =
                    PttParams::new(sh.gather(&rows, holdout.labels()), DEFAULT_B, DEFAULT_TEMPERATURE, seed).unwrap();
                let sc = transform_matrix(&score_matrix(&model, &cal, kind, seed).unwrap(), &params).unwrap();
                let st = score_matrix(&model, &test, kind, seed + 1_000_000).unwrap();
                // Test rows use a disjoint tie-breaking stream from calibration rows.
                let mut test_params = params.clone();
                test_params.seed = seed ^ 0x5EED;
                let st = transform_matrix(&st, &test_params).unwrap();
                coverage_of(&sc, &cal, &st, &test)
            })
            .collect();
        check(name, &cov);
    }
}
