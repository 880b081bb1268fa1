//! Conformal prediction sets that stay valid under bounded input perturbations.
//!
//! This crate holds the pure algorithmic pieces and is `no_std` (it needs
//! `alloc`). File formats, configuration, the experiment driver and the CLI
//! live in the `rscp-harness` crate.
//!
//! Pipeline overview:
//!
//! * [`scores`]: base nonconformity scores (HPS, APS) over classifier outputs.
//! * [`calibrate`]: split conformal thresholds and prediction sets.
//! * [`smoothing`]: Gaussian CDF/inverse CDF, Monte-Carlo randomized smoothing
//!   of base scores, Hoeffding and empirical Bernstein bounds.
//! * [`robust`]: threshold-inflated smoothed sets and the certified
//!   Monte-Carlo rule with its calibration artifact.
//! * [`ptt`]: rank-then-sigmoid post-training score transformation.
//! * [`rct`]: differentiable robust conformal training of a linear-softmax model.
//! * [`synthetic1d`]: closed-form smoothed scores on a 1-D binary problem.
//!
//! Class indices are zero-based throughout.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibrate;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ptt;
pub mod rct;
pub mod rng;
pub mod robust;
pub mod scores;
pub mod smoothing;
pub mod split;
pub mod synthetic1d;

pub use error::{Error, Result};
