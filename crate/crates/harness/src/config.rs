//! Experiment configuration: a flat JSON document with explicit defaults.
//!
//! Every field may be omitted; the defaults describe the blob benchmark
//! (10 Gaussian clusters in 10 dimensions, a linear-softmax classifier,
//! HPS scores smoothed with `sigma = 1`, certified sets at `epsilon = 0.5`).
//! Unknown keys are rejected so that typos do not silently fall back to a
//! default. The effective configuration is echoed into every report.

use std::path::{Path, PathBuf};

use rscp_core::model::TrainConfig;
use rscp_core::ptt::{DEFAULT_B, DEFAULT_HOLDOUT_SIZE, DEFAULT_TEMPERATURE};
use rscp_core::scores::ScoreKind;
use rscp_core::smoothing::{BoundVariant, DEFAULT_CLAMP_EPS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Split conformal on clean base scores.
    Vanilla,
    /// Threshold inflation on `Phi^-1` of the Monte-Carlo mean.
    Rscp,
    /// Certified Monte-Carlo rule.
    RscpPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PttConfig {
    pub enabled: bool,
    pub b: f64,
    pub temperature: f64,
    pub holdout_size: usize,
    /// Rank against holdout scores of one noisy draw (draw 0) instead of the
    /// clean inputs, so the reference sample matches what the transform sees
    /// inside smoothing. Ignored by the vanilla method.
    pub holdout_smoothed: bool,
}

impl Default for PttConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            b: DEFAULT_B,
            temperature: DEFAULT_TEMPERATURE,
            holdout_size: DEFAULT_HOLDOUT_SIZE,
            holdout_smoothed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSource {
    pub num_classes: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub cluster_std: f64,
    /// Examples used to fit the classifier; never scored.
    pub n_train: usize,
    /// Examples split into holdout, calibration and test.
    pub n_pool: usize,
    pub train: TrainConfig,
}

impl Default for BlobSource {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 10,
            center_scale: 3.0,
            cluster_std: 1.0,
            n_train: 2000,
            n_pool: 2500,
            train: TrainConfig::default(),
        }
    }
}

/// Where scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// Generated Gaussian clusters scored by a freshly trained classifier.
    Blobs(BlobSource),
    /// Precomputed scores: an `RCPS1` sample tensor for smoothed methods or
    /// an `RCPM1` matrix for the vanilla method, plus a labels file. Relative
    /// paths are resolved against the configuration file's directory.
    Files { scores: PathBuf, labels: PathBuf },
}

impl Default for Source {
    fn default() -> Self {
        Source::Blobs(BlobSource::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub n_mc: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub method: Method,
    pub bound_variant: BoundVariant,
    pub score: ScoreKind,
    pub ptt: PttConfig,
    pub clamp_eps: f64,
    /// With PTT disabled, calibrate on holdout plus calibration examples so
    /// the baseline sees as much labelled data as the PTT run.
    pub merge_holdout: bool,
    /// Half-width of the level window for the inverse-CDF slope diagnostic.
    pub slope_step: f64,
    pub source: Source,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.001,
            epsilon: 0.5,
            sigma: 1.0,
            n_mc: 256,
            n_splits: 50,
            seed: 0,
            method: Method::RscpPlus,
            bound_variant: BoundVariant::Hoeffding,
            score: ScoreKind::Hps,
            ptt: PttConfig::default(),
            clamp_eps: DEFAULT_CLAMP_EPS,
            merge_holdout: true,
            slope_step: 0.02,
            source: Source::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// Reads a configuration file; relative score-file paths are resolved
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        if let Source::Files { scores, labels } = &mut cfg.source {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [scores, labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration always serializes")
    }

    /// Re-checks every invariant the pipeline relies on.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config_err(format!("epsilon must be finite and non-negative, got {}", self.epsilon)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(config_err(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_splits == 0 {
            return Err(config_err("n_splits must be at least 1"));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(config_err(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps)));
        }
        if !(self.slope_step > 0.0 && self.slope_step < self.alpha.min(1.0 - self.alpha)) {
            return Err(config_err(format!(
                "slope_step {} leaves the unit interval around 1 - alpha",
                self.slope_step
            )));
        }
        if self.method != Method::Vanilla && self.n_mc < 2 {
            return Err(config_err(format!("n_mc must be at least 2, got {}", self.n_mc)));
        }
        if self.method == Method::RscpPlus {
            rscp_core::smoothing::BoundSpec::new(self.beta, self.bound_variant)?;
            if self.alpha - 2.0 * self.beta <= 0.0 {
                return Err(config_err(format!(
                    "alpha - 2 beta must be positive, got {}",
                    self.alpha - 2.0 * self.beta
                )));
            }
        }
        if self.ptt.enabled {
            rscp_core::ptt::PttParams::new(vec![0.0], self.ptt.b, self.ptt.temperature, 0)?;
            if self.ptt.holdout_size == 0 {
                return Err(config_err("ptt.holdout_size must be positive when PTT is enabled"));
            }
        }
        match &self.source {
            Source::Blobs(b) => {
                if b.num_classes < 2 || b.dim == 0 {
                    return Err(config_err("blobs need at least 2 classes and 1 dimension"));
                }
                if !(b.center_scale.is_finite()
                    && b.center_scale >= 0.0
                    && b.cluster_std.is_finite()
                    && b.cluster_std >= 0.0)
                {
                    return Err(config_err("blob scales must be finite and non-negative"));
                }
                if b.n_train < b.num_classes {
                    return Err(config_err("n_train must be at least the number of classes"));
                }
                if self.ptt.holdout_size + 2 > b.n_pool {
                    return Err(config_err(format!(
                        "n_pool {} cannot hold the holdout ({}) plus calibration and test examples",
                        b.n_pool, self.ptt.holdout_size
                    )));
                }
            }
            Source::Files { .. } => {
                if self.ptt.enabled && self.method != Method::Vanilla && !self.ptt.holdout_smoothed {
                    return Err(config_err("score files carry no clean scores; ptt.holdout_smoothed must be true"));
                }
            }
        }
        Ok(())
    }

    /// Holdout examples reserved by the split: the PTT holdout, also used
    /// by the baseline when `merge_holdout` is on.
    pub fn holdout_size(&self) -> usize {
        self.ptt.holdout_size
    }
}
