//! Even dataset splits and single-model training.
//!
//! Training is plain mini-batch SGD or Adam over shuffled batches. With a
//! [`DpConfig`] each example's gradient is clipped to `clip_norm` and
//! Gaussian noise with standard deviation `noise_multiplier * clip_norm` is
//! added to the batch sum before averaging. No privacy accounting is done;
//! the noise multiplier is the configuration surface.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::farm::ModelRecord;
use crate::nn::{self, adam_step, AdamState, ArchDescriptor, Params};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl DpConfig {
    /// Clipping only, no noise.
    pub const CLIP_ONLY: DpConfig = DpConfig {
        clip_norm: 5.0,
        noise_multiplier: 0.0,
    };
    /// Desk-scale stand-in for a loose privacy budget.
    pub const LOOSE: DpConfig = DpConfig {
        clip_norm: 5.0,
        noise_multiplier: 0.5,
    };
    /// Desk-scale stand-in for a strict privacy budget.
    pub const STRICT: DpConfig = DpConfig {
        clip_norm: 5.0,
        noise_multiplier: 2.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_multiplier must be non-negative, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Per-model seed; farms overwrite it with a stream derived from the master seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dp: Option<DpConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

/// Row `m` is the membership mask of model `m` over all dataset indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMatrix {
    n_models: usize,
    n_points: usize,
    bits: Vec<bool>,
}

impl SplitMatrix {
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let n_points = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_points) {
            return Err(Error::Shape("split rows have different lengths".into()));
        }
        Ok(SplitMatrix {
            n_models: rows.len(),
            n_points,
            bits: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn row(&self, model: usize) -> &[bool] {
        &self.bits[model * self.n_points..(model + 1) * self.n_points]
    }

    pub fn contains(&self, model: usize, index: usize) -> bool {
        self.bits[model * self.n_points + index]
    }

    pub(crate) fn remove_row(&mut self, model: usize) {
        self.bits
            .drain(model * self.n_points..(model + 1) * self.n_points);
        self.n_models -= 1;
    }
}

/// Each row independently selects a uniform `⌊n_points/2⌋`-subset.
pub fn make_even_splits(n_points: usize, n_models: usize, seed: u64) -> Result<SplitMatrix> {
    if n_models == 0 {
        return Err(Error::InvalidArgument("n_models must be positive".into()));
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 points to split, got {n_points}"
        )));
    }
    let rows = (0..n_models)
        .map(|m| {
            let mut rng = rng::stream(seed, &[tag::SPLITS, m as u64]);
            let mut row = vec![false; n_points];
            for i in rand::seq::index::sample(&mut rng, n_points, n_points / 2) {
                row[i] = true;
            }
            row
        })
        .collect();
    SplitMatrix::from_rows(rows)
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `gradient * min(1, clip_norm / ||gradient||)`.
pub fn clip_per_example(gradient: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = l2_norm(gradient);
    if norm <= clip_norm || norm == 0.0 {
        return gradient.to_vec();
    }
    let s = clip_norm / norm;
    gradient.iter().map(|g| g * s).collect()
}

static CLIP_CHECKS: AtomicU64 = AtomicU64::new(0);

/// Number of post-clip norm assertions evaluated by [`dp_step`] in this process.
pub fn clip_checks_performed() -> u64 {
    CLIP_CHECKS.load(Ordering::Relaxed)
}

/// Clips every per-example gradient, sums them, adds `N(0, (σC)²)` noise per
/// coordinate and divides by `batch_size`.
///
/// # Panics
///
/// If a clipped gradient exceeds `clip_norm` (beyond rounding), or if the
/// per-example gradients differ in length.
pub fn dp_step<R: Rng + ?Sized>(
    per_example: &[Vec<f64>],
    clip_norm: f64,
    noise_multiplier: f64,
    batch_size: usize,
    rng: &mut R,
) -> Vec<f64> {
    let len = per_example.first().map_or(0, Vec::len);
    let mut sum = vec![0.0; len];
    for g in per_example {
        assert_eq!(g.len(), len, "per-example gradient lengths differ");
        let raw = l2_norm(g);
        let scale = if raw <= clip_norm || raw == 0.0 { 1.0 } else { clip_norm / raw };
        // the bound is re-measured on the scaled values actually summed
        let mut sq = 0.0;
        for (s, &v) in sum.iter_mut().zip(g) {
            let c = v * scale;
            sq += c * c;
            *s += c;
        }
        let norm = sq.sqrt();
        CLIP_CHECKS.fetch_add(1, Ordering::Relaxed);
        assert!(
            norm <= clip_norm * (1.0 + 1e-12),
            "clipped gradient norm {norm} exceeds clip bound {clip_norm}"
        );
    }
    if noise_multiplier > 0.0 {
        let noise = Normal::new(0.0, noise_multiplier * clip_norm).expect("finite std");
        for s in &mut sum {
            *s += noise.sample(rng);
        }
    }
    let denom = batch_size as f64;
    sum.into_iter().map(|s| s / denom).collect()
}

/// Instrumentation collected while training one model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    /// Feature reads per dataset index.
    pub reads: Vec<u64>,
    pub dp_steps: u64,
}

impl TrainReport {
    /// Reads of indices outside `mask`.
    pub fn out_of_split_reads(&self, mask: &[bool]) -> u64 {
        self.reads
            .iter()
            .zip(mask)
            .filter(|(_, &m)| !m)
            .map(|(r, _)| r)
            .sum()
    }
}

/// Every feature read during training goes through here.
struct CountingView<'a> {
    dataset: &'a Dataset,
    reads: Vec<u64>,
}

impl<'a> CountingView<'a> {
    fn fetch(&mut self, i: usize) -> (&'a [f64], usize) {
        self.reads[i] += 1;
        (self.dataset.features(i), self.dataset.label(i))
    }

    fn loss_and_accuracy(&mut self, arch: &ArchDescriptor, params: &Params, idx: &[usize]) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for &i in idx {
            let (x, y) = self.fetch(i);
            let logits = nn::forward_logits(arch, params, x)?;
            loss -= nn::log_softmax(&logits)[y];
            if argmax(&logits) == y {
                correct += 1;
            }
        }
        let n = idx.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Trains on the points where `mask` is set.
pub fn train_model(
    dataset: &Dataset,
    mask: &[bool],
    arch: &ArchDescriptor,
    config: &TrainConfig,
    split_id: usize,
) -> Result<ModelRecord> {
    Ok(train_model_instrumented(dataset, mask, arch, config, split_id)?.0)
}

pub fn train_model_instrumented(
    dataset: &Dataset,
    mask: &[bool],
    arch: &ArchDescriptor,
    config: &TrainConfig,
    split_id: usize,
) -> Result<(ModelRecord, TrainReport)> {
    arch.validate()?;
    config.validate()?;
    if mask.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "mask has length {}, dataset has {} points",
            mask.len(),
            dataset.len()
        )));
    }
    if arch.input_dim != dataset.dim() || arch.num_classes != dataset.num_classes() {
        return Err(Error::Shape(format!(
            "architecture {arch} does not fit data of dimension {} with {} classes",
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    let train_idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }

    let mut view = CountingView {
        dataset,
        reads: vec![0; dataset.len()],
    };
    let mut params = Params::init(arch, &mut rng::stream(config.seed, &[tag::INIT]));
    let (initial_loss, _) = view.loss_and_accuracy(arch, &params, &train_idx)?;

    let mut adam = match config.optimizer {
        OptimizerKind::Adam => Some(AdamState::new(params.len())),
        OptimizerKind::Sgd => None,
    };
    let mut noise_rng = rng::stream(config.seed, &[tag::DP_NOISE]);
    let mut dp_steps = 0;
    let mut order = train_idx.clone();
    let mut grad = vec![0.0; params.len()];
    let mut per_example: Vec<Vec<f64>> = Vec::new();

    for epoch in 0..config.epochs {
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut rng::stream(config.seed, &[tag::EPOCH, epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            match &config.dp {
                None => {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let scale = 1.0 / batch.len() as f64;
                    for &i in batch {
                        let (x, y) = view.fetch(i);
                        nn::accumulate_ce_gradient(arch, &params, x, y, scale, &mut grad)?;
                    }
                }
                Some(dp) => {
                    per_example.resize_with(batch.len(), || vec![0.0; params.len()]);
                    for (&i, g) in batch.iter().zip(per_example.iter_mut()) {
                        let (x, y) = view.fetch(i);
                        g.iter_mut().for_each(|v| *v = 0.0);
                        nn::accumulate_ce_gradient(arch, &params, x, y, 1.0, g)?;
                    }
                    grad = dp_step(
                        &per_example,
                        dp.clip_norm,
                        dp.noise_multiplier,
                        batch.len(),
                        &mut noise_rng,
                    );
                    dp_steps += 1;
                }
            }
            match adam.as_mut() {
                Some(state) => adam_step(state, params.as_mut_slice(), &grad, config.lr),
                None => {
                    for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                        *p -= config.lr * g;
                    }
                }
            }
        }
    }

    if let Some(i) = params.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "training diverged: parameter {i} is not finite"
        )));
    }
    let (final_loss, train_accuracy) = view.loss_and_accuracy(arch, &params, &train_idx)?;
    let record = ModelRecord {
        arch: arch.clone(),
        params,
        seed: config.seed,
        split_id,
    };
    let report = TrainReport {
        initial_loss,
        final_loss,
        train_accuracy,
        reads: view.reads,
        dp_steps,
    };
    Ok((record, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::nn::Activation;

    #[test]
    fn splits_have_half_ones_and_are_deterministic() {
        let s = make_even_splits(4, 2, 9).unwrap();
        for m in 0..2 {
            assert_eq!(s.row(m).iter().filter(|&&b| b).count(), 2);
        }
        assert_eq!(s, make_even_splits(4, 2, 9).unwrap());
        let odd = make_even_splits(7, 3, 1).unwrap();
        assert!((0..3).all(|m| odd.row(m).iter().filter(|&&b| b).count() == 3));
    }

    #[test]
    fn split_errors() {
        assert!(make_even_splits(10, 0, 0).is_err());
        assert!(make_even_splits(1, 3, 0).is_err());
    }

    #[test]
    fn clipping_cases() {
        let g = vec![6.0, 8.0];
        let c = clip_per_example(&g, 5.0);
        assert!((l2_norm(&c) - 5.0).abs() < 1e-12);
        assert!((c[0] / c[1] - 0.75).abs() < 1e-12);
        assert_eq!(clip_per_example(&[0.0, 3.0], 5.0), vec![0.0, 3.0]);
        assert_eq!(clip_per_example(&[0.0, 0.0], 5.0), vec![0.0, 0.0]);
    }

    #[test]
    fn dp_step_without_noise_is_clipped_mean() {
        let mut r = rng::stream(0, &[]);
        let grads = vec![vec![6.0, 8.0], vec![1.0, 0.0]];
        let out = dp_step(&grads, 5.0, 0.0, 2, &mut r);
        assert!((out[0] - (3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert!((out[1] - 4.0 / 2.0).abs() < 1e-12);
        assert_eq!(dp_step(&[vec![1.0, -2.0]], 5.0, 0.0, 1, &mut r), vec![1.0, -2.0]);
    }

    fn separable() -> Dataset {
        // two well separated clusters along the first axis
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            let y = i % 2;
            features.push(if y == 0 { 0.1 + 0.05 * t } else { 0.85 + 0.05 * t });
            features.push(t);
            labels.push(y);
        }
        Dataset::new(features, labels, 2, 2, Domain::UNIT).unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            epochs: 60,
            batch_size: 4,
            lr: 0.05,
            optimizer: OptimizerKind::Adam,
            seed: 4,
            dp: None,
        }
    }

    #[test]
    fn separable_toy_set_is_fit_and_deterministic() {
        let d = separable();
        let arch = ArchDescriptor::new(2, vec![8], 2, Activation::Relu).unwrap();
        let mask: Vec<bool> = (0..d.len()).map(|i| i % 3 != 0).collect();
        let (rec, report) = train_model_instrumented(&d, &mask, &arch, &config(), 0).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert!(report.final_loss < report.initial_loss);
        assert_eq!(report.out_of_split_reads(&mask), 0);
        assert!(report.reads.iter().zip(&mask).all(|(&r, &m)| !m || r > 0));
        assert_eq!(report.dp_steps, 0);
        let again = train_model(&d, &mask, &arch, &config(), 0).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn dp_training_runs_and_takes_dp_path() {
        let d = separable();
        let arch = ArchDescriptor::new(2, vec![8], 2, Activation::Tanh).unwrap();
        let mask = vec![true; d.len()];
        let cfg = TrainConfig {
            dp: Some(DpConfig::LOOSE),
            ..config()
        };
        let (rec, report) = train_model_instrumented(&d, &mask, &arch, &cfg, 0).unwrap();
        assert_eq!(report.dp_steps, 60 * 5);
        assert_ne!(rec, train_model(&d, &mask, &arch, &config(), 0).unwrap());
    }

    #[test]
    fn training_errors() {
        let d = separable();
        let arch = ArchDescriptor::new(2, vec![4], 2, Activation::Relu).unwrap();
        assert!(matches!(
            train_model(&d, &vec![false; d.len()], &arch, &config(), 0),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            train_model(&d, &[true; 3], &arch, &config(), 0),
            Err(Error::Shape(_))
        ));
        let bad = TrainConfig { batch_size: 0, ..config() };
        assert!(train_model(&d, &vec![true; d.len()], &arch, &bad, 0).is_err());
    }
}
