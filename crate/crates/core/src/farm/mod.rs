//! Shadow-model farms and the black-box target oracle.

mod store;

pub use store::{decode_farm, encode_farm, load_farm, save_farm, FORMAT_VERSION, MAGIC};

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, ArchDescriptor, Params};
use crate::rng::{derive_seed, tag};
use crate::training::{self, make_even_splits, SplitMatrix, TrainConfig};

/// One trained model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub arch: ArchDescriptor,
    pub params: Params,
    /// Training seed.
    pub seed: u64,
    /// Row of the farm's original split matrix this model was trained on.
    pub split_id: usize,
}

impl ModelRecord {
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        nn::forward_logits(&self.arch, &self.params, x)
    }

    pub fn confidence(&self, x: &[f64], y: usize) -> Result<f64> {
        nn::softmax_conf(&self.logits(x)?, y)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(training::argmax(&self.logits(x)?))
    }
}

/// Shadow models plus the membership masks they were trained on.
///
/// Row `m` of `splits` always belongs to `models[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowFarm {
    pub(crate) fingerprint: u64,
    pub(crate) arch: ArchDescriptor,
    pub(crate) splits: SplitMatrix,
    pub(crate) models: Vec<ModelRecord>,
    pub(crate) master_seed: u64,
}

impl ShadowFarm {
    pub fn new(
        fingerprint: u64,
        arch: ArchDescriptor,
        splits: SplitMatrix,
        models: Vec<ModelRecord>,
        master_seed: u64,
    ) -> Result<Self> {
        if models.len() != splits.n_models() {
            return Err(Error::Shape(format!(
                "{} models but {} split rows",
                models.len(),
                splits.n_models()
            )));
        }
        if let Some(m) = models.iter().position(|m| m.arch != arch) {
            return Err(Error::Shape(format!("model {m} has a different architecture")));
        }
        Ok(ShadowFarm {
            fingerprint,
            arch,
            splits,
            models,
            master_seed,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn splits(&self) -> &SplitMatrix {
        &self.splits
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_points(&self) -> usize {
        self.splits.n_points()
    }

    /// Refuses datasets other than the one the farm was trained on.
    pub fn verify_dataset(&self, dataset: &Dataset) -> Result<()> {
        let found = dataset.fingerprint();
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint,
                found,
            });
        }
        Ok(())
    }

    /// Model indices whose split includes / excludes `index`.
    pub fn partition_indices(&self, index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if index >= self.n_points() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.n_points(),
            });
        }
        Ok((0..self.len()).partition(|&m| self.splits.contains(m, index)))
    }

    /// Train and held-out accuracy of model `m`.
    pub fn model_accuracy(&self, dataset: &Dataset, m: usize) -> Result<(f64, f64)> {
        self.verify_dataset(dataset)?;
        let model = self.models.get(m).ok_or(Error::IndexOutOfRange {
            index: m,
            len: self.len(),
        })?;
        let (mut hit, mut n) = ([0usize; 2], [0usize; 2]);
        for i in 0..dataset.len() {
            let side = usize::from(!self.splits.contains(m, i));
            n[side] += 1;
            if model.predict(dataset.features(i))? == dataset.label(i) {
                hit[side] += 1;
            }
        }
        let rate = |s: usize| if n[s] == 0 { f64::NAN } else { hit[s] as f64 / n[s] as f64 };
        Ok((rate(0), rate(1)))
    }
}

/// Trains `n_models` models on independent even splits.
///
/// Split and model seeds derive from `master_seed`; the result does not
/// depend on how many worker threads rayon uses.
pub fn build_farm(
    dataset: &Dataset,
    n_models: usize,
    arch: &ArchDescriptor,
    train_config: &TrainConfig,
    master_seed: u64,
) -> Result<ShadowFarm> {
    if n_models < 2 {
        return Err(Error::InvalidArgument(format!(
            "a farm needs at least 2 models, got {n_models}"
        )));
    }
    let splits = make_even_splits(dataset.len(), n_models, derive_seed(master_seed, &[tag::SPLITS]))?;
    let models = (0..n_models)
        .into_par_iter()
        .map(|m| {
            let config = TrainConfig {
                seed: derive_seed(master_seed, &[tag::MODEL, m as u64]),
                ..train_config.clone()
            };
            training::train_model(dataset, splits.row(m), arch, &config, m)
        })
        .collect::<Result<Vec<_>>>()?;
    ShadowFarm::new(dataset.fingerprint(), arch.clone(), splits, models, master_seed)
}

/// `(S_in, S_out)` for dataset index `target_index`.
pub fn in_out_partition(
    farm: &ShadowFarm,
    target_index: usize,
) -> Result<(Vec<&ModelRecord>, Vec<&ModelRecord>)> {
    let (ins, outs) = farm.partition_indices(target_index)?;
    Ok((
        ins.into_iter().map(|m| &farm.models[m]).collect(),
        outs.into_iter().map(|m| &farm.models[m]).collect(),
    ))
}

/// Removes model `which` from the farm and wraps it as a black-box oracle.
pub fn hold_out_target(farm: &ShadowFarm, which: usize) -> Result<(TargetOracle, ShadowFarm)> {
    if which >= farm.len() {
        return Err(Error::IndexOutOfRange {
            index: which,
            len: farm.len(),
        });
    }
    let mut rest = farm.clone();
    let record = rest.models.remove(which);
    let membership = farm.splits.row(which).to_vec();
    rest.splits.remove_row(which);
    Ok((TargetOracle::new(record, membership, farm.fingerprint), rest))
}

/// Query-only access to a target model: `f_θ(x)_y` and nothing else.
///
/// The oracle also carries the target's training mask so the evaluation
/// harness can label targets; attack code has no reason to read it.
#[derive(Debug)]
pub struct TargetOracle {
    record: ModelRecord,
    membership: Vec<bool>,
    fingerprint: u64,
    budget: Option<u64>,
    queries: AtomicU64,
    param_reads: AtomicU64,
}

impl TargetOracle {
    pub fn new(record: ModelRecord, membership: Vec<bool>, fingerprint: u64) -> Self {
        TargetOracle {
            record,
            membership,
            fingerprint,
            budget: None,
            queries: AtomicU64::new(0),
            param_reads: AtomicU64::new(0),
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Softmax confidence of class `y` at `x`. Counts as one query.
    pub fn confidence(&self, x: &[f64], y: usize) -> Result<f64> {
        let used = self.queries.fetch_add(1, Ordering::SeqCst);
        if let Some(budget) = self.budget {
            if used >= budget {
                self.queries.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::BudgetExhausted(budget));
            }
        }
        self.record.confidence(x, y)
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    /// Dataset fingerprint of the farm the target came from.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Ground-truth membership of `index` in the target's training split.
    pub fn is_member(&self, index: usize) -> Result<bool> {
        self.membership
            .get(index)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index,
                len: self.membership.len(),
            })
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    /// White-box escape hatch for diagnostics; every call is counted.
    pub fn reveal_record(&self) -> &ModelRecord {
        self.param_reads.fetch_add(1, Ordering::SeqCst);
        &self.record
    }

    pub fn param_reads(&self) -> u64 {
        self.param_reads.load(Ordering::SeqCst)
    }
}
