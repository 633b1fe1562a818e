//! Labeled feature vectors over a bounded input box.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Axis-aligned input domain `[lower, upper]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: f64,
    pub upper: f64,
}

impl Domain {
    pub const UNIT: Domain = Domain {
        lower: 0.0,
        upper: 1.0,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "domain bounds must be finite with lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Domain { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

/// The universal dataset: `len()` samples of `dim()` features each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    domain: Domain,
}

impl Dataset {
    /// `features` is row-major, `labels.len()` rows of `dim` values.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        domain: Domain,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has label {l} but num_classes = {num_classes}"
            )));
        }
        if let Some(pos) = features
            .iter()
            .position(|&v| !(v >= domain.lower && v <= domain.upper))
        {
            return Err(Error::InvalidArgument(format!(
                "sample {} feature {} = {} lies outside the domain [{}, {}]",
                pos / dim,
                pos % dim,
                features[pos],
                domain.lower,
                domain.upper
            )));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            num_classes,
            domain,
        })
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

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// 64-bit FNV-1a over the canonical little-endian serialization:
    /// `len, dim, num_classes` as u64, domain bounds as f64, then each
    /// sample's features (f64) followed by its label (u64).
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(&(self.len() as u64).to_le_bytes());
        h.write(&(self.dim as u64).to_le_bytes());
        h.write(&(self.num_classes as u64).to_le_bytes());
        h.write(&self.domain.lower.to_le_bytes());
        h.write(&self.domain.upper.to_le_bytes());
        for i in 0..self.len() {
            for v in self.features(i) {
                h.write(&v.to_le_bytes());
            }
            h.write(&(self.labels[i] as u64).to_le_bytes());
        }
        h.finish()
    }
}

/// Isotropic Gaussian clusters, one per class, rescaled per feature to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub n_points: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Standard deviation of class centers around the origin.
    pub center_spread: f64,
    /// Within-class standard deviation.
    pub noise_std: f64,
    pub seed: u64,
}

impl GaussianMixture {
    pub fn generate(&self) -> Result<Dataset> {
        if self.n_points == 0 {
            return Err(Error::Empty("gaussian mixture with zero points"));
        }
        if !(self.center_spread > 0.0 && self.noise_std > 0.0) {
            return Err(Error::InvalidArgument(
                "center_spread and noise_std must be positive".into(),
            ));
        }
        let mut rng = rng::stream(self.seed, &[]);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let centers: Vec<f64> = (0..self.n_classes * self.dim)
            .map(|_| self.center_spread * std_normal.sample(&mut rng))
            .collect();
        let mut labels: Vec<usize> = (0..self.n_points).map(|i| i % self.n_classes).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(self.n_points * self.dim);
        for &y in &labels {
            for j in 0..self.dim {
                features.push(centers[y * self.dim + j] + self.noise_std * std_normal.sample(&mut rng));
            }
        }
        rescale_columns(&mut features, self.dim);
        Dataset::new(features, labels, self.dim, self.n_classes, Domain::UNIT)
    }
}

/// Min-max rescales each column of a row-major matrix to `[0, 1]`.
/// Constant columns map to 0.
pub fn rescale_columns(features: &mut [f64], dim: usize) {
    for j in 0..dim {
        let column = features.iter().skip(j).step_by(dim);
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let range = hi - lo;
        for v in features.iter_mut().skip(j).step_by(dim) {
            *v = if range > 0.0 {
                ((*v - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}
