//! Labeled datasets and the Gaussian-blob generator used by the benchmarks.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{keyed_rng, TAG_DATA};

/// `n` inputs of dimension `d` (row-major) with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(dim: usize, num_classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            bail!(Argument, "input dimension must be positive");
        }
        if num_classes < 2 {
            bail!(Argument, "need at least 2 classes, got {num_classes}");
        }
        if inputs.len() != labels.len() * dim {
            bail!(
                Data,
                "expected {} input values for {} labels of dimension {dim}, found {}",
                labels.len() * dim,
                labels.len(),
                inputs.len()
            );
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            bail!(Data, "label {y} at row {i} out of range for {num_classes} classes");
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            bail!(Data, "non-finite input value");
        }
        Ok(Self { dim, num_classes, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            inputs.extend_from_slice(self.input(i));
        }
        LabeledDataset {
            dim: self.dim,
            num_classes: self.num_classes,
            inputs,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Isotropic Gaussian blobs: `num_classes` centers drawn once from
/// `N(0, center_scale^2 / dim * I)`, labels uniform, points
/// `center + cluster_std * N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub cluster_std: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn centers(&self) -> Vec<f64> {
        let mut rng = keyed_rng(self.seed, &[TAG_DATA, u64::MAX]);
        let scale = self.center_scale / libm::sqrt(self.dim as f64);
        (0..self.num_classes * self.dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Draws `n` points from stream `stream`; example `i` is keyed by
    /// `(seed, stream, i)`.
    pub fn sample(&self, n: usize, stream: u64) -> Result<LabeledDataset> {
        if !(self.cluster_std >= 0.0 && self.center_scale.is_finite()) {
            bail!(Argument, "blob scales must be finite and non-negative");
        }
        let centers = self.centers();
        let mut inputs = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = keyed_rng(self.seed, &[TAG_DATA, stream, i as u64]);
            let y = rng.random_range(0..self.num_classes);
            let c = &centers[y * self.dim..(y + 1) * self.dim];
            inputs.extend(c.iter().map(|&m| m + self.cluster_std * rng.sample::<f64, _>(StandardNormal)));
            labels.push(y);
        }
        LabeledDataset::new(self.dim, self.num_classes, inputs, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn validates_shapes_and_labels() {
        assert!(LabeledDataset::new(2, 2, vec![0.0; 4], vec![0, 1]).is_ok());
        assert!(LabeledDataset::new(2, 2, vec![0.0; 3], vec![0, 1]).is_err());
        assert!(LabeledDataset::new(2, 2, vec![0.0; 4], vec![0, 2]).is_err());
        assert!(LabeledDataset::new(1, 2, vec![f64::NAN], vec![0]).is_err());
    }

    #[test]
    fn blobs_are_reproducible() {
        let spec = BlobSpec { num_classes: 3, dim: 4, center_scale: 3.0, cluster_std: 1.0, seed: 5 };
        let a = spec.sample(50, 0).unwrap();
        assert_eq!(a, spec.sample(50, 0).unwrap());
        assert_ne!(a, spec.sample(50, 1).unwrap());
        // Prefix stability: example i does not depend on n.
        assert_eq!(spec.sample(10, 0).unwrap(), a.subset(&(0..10).collect::<Vec<_>>()));
    }
}
