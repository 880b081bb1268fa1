//! The closed-form 1-D metrics agree with the sampled pipeline: smoothing a
//! real classifier by Monte Carlo, calibrating on `Phi^-1` of the means and
//! inflating the threshold.

use rscp_core::calibrate::ThresholdValue;
use rscp_core::calibrate::{conformal_quantile, evaluate};
use rscp_core::robust::{rscp_set, rscp_threshold};
use rscp_core::scores::{BaseScorer, ScoreKind};
use rscp_core::smoothing::{mc_mean, mc_score_samples, smoothed_tilde, GaussianNoiseSpec, DEFAULT_CLAMP_EPS};
use rscp_core::synthetic1d::{analytic_metrics, sample_points, LinearOracleClassifier, Oracle1DConfig, ScoreFnKind};

#[test]
fn sampled_size_matches_closed_form() {
    let cfg = Oracle1DConfig::default();
    let expected = analytic_metrics(&cfg.score(ScoreFnKind::Hps).unwrap(), &cfg).unwrap();
    let scorer = BaseScorer::new(LinearOracleClassifier, ScoreKind::Hps, 0);
    let n = 10_000;
    let cal = sample_points(n, 3, 0).unwrap();
    let test = sample_points(n, 3, 1).unwrap();
    let tilde = |data: &rscp_core::data::LabeledDataset, seed| {
        let noise = GaussianNoiseSpec::new(cfg.sigma, 500, seed).unwrap();
        mc_mean(&mc_score_samples(&scorer, data.inputs(), 1, &noise).unwrap())
            .map(|m| smoothed_tilde(m, DEFAULT_CLAMP_EPS))
    };
    let (tc, tt) = (tilde(&cal, 10), tilde(&test, 11));
    let rows: Vec<usize> = (0..n).collect();
    let tau = conformal_quantile(&tc.gather(&rows, cal.labels()), cfg.alpha).unwrap();
    let tau_adj = ThresholdValue::Finite { value: rscp_threshold(tau.value.as_f64(), cfg.epsilon, cfg.sigma) };
    let sets: Vec<_> = (0..n).map(|i| rscp_set(tt.row(i), tau_adj)).collect();
    let e = evaluate(&sets, test.labels()).unwrap();
    eprintln!("sampled size {:.4}, closed form {:.4}", e.avg_size, expected.avg_size);
    assert!((e.avg_size / expected.avg_size - 1.0).abs() <= 0.02);
    assert!(e.coverage >= 1.0 - cfg.alpha);
}
