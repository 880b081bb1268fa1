//! Holdout / calibration / test index splits.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{keyed_rng, TAG_SPLIT_CAL_TEST, TAG_SPLIT_HOLDOUT};

/// Disjoint index sets covering `0..n`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub holdout: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Holdout and calibration indices together, for baselines that do not
    /// spend the holdout on a score transformation.
    pub fn merged_calibration(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.holdout.iter().chain(&self.cal).copied().collect();
        v.sort_unstable();
        v
    }
}

/// The holdout depends only on `seed`; the calibration/test halves of the
/// remaining indices are re-drawn for every `split_index`. With an odd
/// remainder the test half gets the extra index.
pub fn split_data(n: usize, holdout_size: usize, seed: u64, split_index: u64) -> Result<Split> {
    if holdout_size >= n || n - holdout_size < 2 {
        bail!(
            Config,
            "cannot split {n} examples into a holdout of {holdout_size} plus non-empty calibration and test sets"
        );
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut keyed_rng(seed, &[TAG_SPLIT_HOLDOUT]));
    let mut holdout = all[..holdout_size].to_vec();
    let mut rest = all[holdout_size..].to_vec();
    rest.sort_unstable();
    rest.shuffle(&mut keyed_rng(seed, &[TAG_SPLIT_CAL_TEST, split_index]));
    let half = rest.len() / 2;
    let mut cal = rest[..half].to_vec();
    let mut test = rest[half..].to_vec();
    holdout.sort_unstable();
    cal.sort_unstable();
    test.sort_unstable();
    Ok(Split { holdout, cal, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn sizes_and_disjointness() {
        for seed in 0..5 {
            let s = split_data(10, 2, seed, 0).unwrap();
            assert_eq!((s.holdout.len(), s.cal.len(), s.test.len()), (2, 4, 4));
            let mut all: Vec<usize> = s.holdout.iter().chain(&s.cal).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
        let odd = split_data(11, 0, 1, 0).unwrap();
        assert_eq!((odd.cal.len(), odd.test.len()), (5, 6));
    }

    #[test]
    fn holdout_is_fixed_across_splits() {
        let a = split_data(200, 50, 9, 0).unwrap();
        let b = split_data(200, 50, 9, 1).unwrap();
        assert_eq!(a.holdout, b.holdout);
        assert_ne!(a.cal, b.cal);
        assert_eq!(a, split_data(200, 50, 9, 0).unwrap());
        assert_eq!(a.merged_calibration().len(), 125);
    }

    #[test]
    fn infeasible_sizes() {
        assert!(matches!(split_data(10, 10, 0, 0), Err(Error::Config(_))));
        assert!(matches!(split_data(10, 9, 0, 0), Err(Error::Config(_))));
        assert!(matches!(split_data(0, 0, 0, 0), Err(Error::Config(_))));
    }
}
