//! Adversarially optimized canary queries and the random-noise control.
//!
//! A canary starts at (or near) the target point and is refined with Adam so
//! that models trained on the target respond with high confidence while
//! models trained without it respond with low confidence. Each iteration
//! uses a fresh random mini-batch of `b` shadow models per side, and the
//! perturbation is projected back into the ℓ∞ ball of radius `ε` around the
//! target and into the input domain.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::farm::ModelRecord;
use crate::nn::{self, adam_step, AdamState, Direction, ObjectiveFamily, ObjectiveKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanaryInit {
    Target,
    /// Uniform noise in `[-scale, scale]` per coordinate, then projected.
    TargetPlusNoise { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanaryConfig {
    /// ℓ∞ radius in input-domain units.
    pub epsilon: f64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::objective")]
    pub objective: ObjectiveFamily,
    #[serde(default = "defaults::init")]
    pub init: CanaryInit,
    #[serde(default = "defaults::num_queries")]
    pub num_queries: usize,
    #[serde(default = "defaults::mode")]
    pub mode: AttackMode,
    /// Clamp queries to the input domain. Disabling it is an ablation.
    #[serde(default = "defaults::clamp_to_domain")]
    pub clamp_to_domain: bool,
}

mod defaults {
    use super::*;

    pub fn steps() -> usize {
        40
    }
    pub fn batch_size() -> usize {
        2
    }
    pub fn lr() -> f64 {
        0.05
    }
    pub fn objective() -> ObjectiveFamily {
        ObjectiveFamily::RawLogit
    }
    pub fn init() -> CanaryInit {
        CanaryInit::TargetPlusNoise { scale: 0.01 }
    }
    pub fn num_queries() -> usize {
        10
    }
    pub fn mode() -> AttackMode {
        AttackMode::Online
    }
    pub fn clamp_to_domain() -> bool {
        true
    }
}

impl CanaryConfig {
    /// 40 Adam steps at lr 0.05, two shadow models per side, raw-logit
    /// objective, ten queries.
    pub fn new(epsilon: f64) -> Self {
        CanaryConfig {
            epsilon,
            steps: defaults::steps(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            objective: defaults::objective(),
            init: defaults::init(),
            num_queries: defaults::num_queries(),
            mode: defaults::mode(),
            clamp_to_domain: defaults::clamp_to_domain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.batch_size == 0 || self.num_queries == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and num_queries must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if let CanaryInit::TargetPlusNoise { scale } = self.init {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "init noise scale must be non-negative, got {scale}"
                )));
            }
        }
        Ok(())
    }
}

/// Shadow-model evaluation counters, split by IN / OUT role.
#[derive(Debug, Default)]
pub struct AccessCounters {
    in_evals: AtomicU64,
    out_evals: AtomicU64,
}

impl AccessCounters {
    pub fn in_model_evals(&self) -> u64 {
        self.in_evals.load(Ordering::SeqCst)
    }

    pub fn out_model_evals(&self) -> u64 {
        self.out_evals.load(Ordering::SeqCst)
    }
}

/// IN / OUT shadow models for one target. All model access is counted.
pub struct ShadowPool<'a> {
    ins: Vec<&'a ModelRecord>,
    outs: Vec<&'a ModelRecord>,
    counters: &'a AccessCounters,
}

impl<'a> ShadowPool<'a> {
    pub fn new(
        ins: Vec<&'a ModelRecord>,
        outs: Vec<&'a ModelRecord>,
        counters: &'a AccessCounters,
    ) -> Self {
        ShadowPool { ins, outs, counters }
    }

    pub fn n_in(&self) -> usize {
        self.ins.len()
    }

    pub fn n_out(&self) -> usize {
        self.outs.len()
    }

    pub fn in_model(&self, i: usize) -> &'a ModelRecord {
        self.counters.in_evals.fetch_add(1, Ordering::SeqCst);
        self.ins[i]
    }

    pub fn out_model(&self, i: usize) -> &'a ModelRecord {
        self.counters.out_evals.fetch_add(1, Ordering::SeqCst);
        self.outs[i]
    }
}

/// Nearest point to `x + delta` inside `[x - eps, x + eps]` (and the domain,
/// if clamped). The radius holds exactly after rounding.
fn project_coordinate(x: f64, delta: f64, eps: f64, domain: Option<&Domain>) -> f64 {
    let d = delta.clamp(-eps, eps);
    let mut v = x + d;
    if let Some(dom) = domain {
        v = dom.clamp(v);
    }
    while v - x > eps {
        v = v.next_down();
    }
    while x - v > eps {
        v = v.next_up();
    }
    v
}

fn project(x_star: &[f64], delta: &[f64], eps: f64, domain: Option<&Domain>) -> Vec<f64> {
    x_star
        .iter()
        .zip(delta)
        .map(|(&x, &d)| project_coordinate(x, d, eps, domain))
        .collect()
}

/// Optimizes one canary query for target `(x_star, y_star)`.
pub fn optimize_canary<R: Rng + ?Sized>(
    x_star: &[f64],
    y_star: usize,
    alt_label: Option<usize>,
    pool: &ShadowPool<'_>,
    domain: &Domain,
    config: &CanaryConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    optimize_canary_traced(x_star, y_star, alt_label, pool, domain, config, rng, |_| {})
}

/// [`optimize_canary`] that reports the query after every iteration.
#[allow(clippy::too_many_arguments)]
pub fn optimize_canary_traced<R: Rng + ?Sized>(
    x_star: &[f64],
    y_star: usize,
    alt_label: Option<usize>,
    pool: &ShadowPool<'_>,
    domain: &Domain,
    config: &CanaryConfig,
    rng: &mut R,
    mut on_step: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    config.validate()?;
    let b = config.batch_size;
    if b > pool.n_out() {
        return Err(Error::InvalidArgument(format!(
            "shadow batch size {b} exceeds the {} available OUT models",
            pool.n_out()
        )));
    }
    let online = config.mode == AttackMode::Online;
    if online && b > pool.n_in() {
        return Err(Error::InvalidArgument(format!(
            "shadow batch size {b} exceeds the {} available IN models",
            pool.n_in()
        )));
    }
    let clamp = config.clamp_to_domain.then_some(domain);
    let eps = config.epsilon;
    let out_kind = ObjectiveKind::new(config.objective, Direction::Out);
    let in_kind = ObjectiveKind::new(config.objective, Direction::In);

    let init: Vec<f64> = match config.init {
        CanaryInit::Target => vec![0.0; x_star.len()],
        CanaryInit::TargetPlusNoise { scale } => (0..x_star.len())
            .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
            .collect(),
    };
    let mut x_mal = project(x_star, &init, eps, clamp);
    let mut delta: Vec<f64> = x_mal.iter().zip(x_star).map(|(a, b)| a - b).collect();
    let mut adam = AdamState::new(x_star.len());
    let inv_b = 1.0 / b as f64;

    for _ in 0..config.steps {
        let out_batch = rand::seq::index::sample(rng, pool.n_out(), b);
        let in_batch = online.then(|| rand::seq::index::sample(rng, pool.n_in(), b));
        let mut grad = vec![0.0; x_star.len()];
        for i in out_batch {
            let m = pool.out_model(i);
            let g = nn::input_gradient(&m.arch, &m.params, &x_mal, y_star, alt_label, out_kind)?;
            grad.iter_mut().zip(&g).for_each(|(a, v)| *a += inv_b * v);
        }
        if let Some(in_batch) = in_batch {
            for i in in_batch {
                let m = pool.in_model(i);
                let g = nn::input_gradient(&m.arch, &m.params, &x_mal, y_star, alt_label, in_kind)?;
                grad.iter_mut().zip(&g).for_each(|(a, v)| *a += inv_b * v);
            }
        }
        adam_step(&mut adam, &mut delta, &grad, config.lr);
        x_mal = project(x_star, &delta, eps, clamp);
        delta = x_mal.iter().zip(x_star).map(|(a, b)| a - b).collect();
        on_step(&x_mal);
    }
    Ok(x_mal)
}

/// `x_star` plus uniform noise in `[-eps, eps]` per coordinate, clamped to the domain.
pub fn random_noise_query<R: Rng + ?Sized>(
    x_star: &[f64],
    eps: f64,
    domain: &Domain,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and non-negative, got {eps}"
        )));
    }
    let noise: Vec<f64> = (0..x_star.len())
        .map(|_| if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 })
        .collect();
    Ok(project(x_star, &noise, eps, Some(domain)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ArchDescriptor, Params};
    use crate::rng;

    fn models(n: usize, seed: u64) -> Vec<ModelRecord> {
        let arch = ArchDescriptor::new(4, vec![6], 3, Activation::Tanh).unwrap();
        (0..n as u64)
            .map(|m| ModelRecord {
                arch: arch.clone(),
                params: Params::init(&arch, &mut rng::stream(seed, &[m])),
                seed: m,
                split_id: m as usize,
            })
            .collect()
    }

    #[test]
    fn zero_epsilon_returns_target() {
        let ms = models(6, 1);
        let counters = AccessCounters::default();
        let pool = ShadowPool::new(ms[..3].iter().collect(), ms[3..].iter().collect(), &counters);
        let x = [0.2, 0.0, 1.0, 0.55];
        let cfg = CanaryConfig {
            init: CanaryInit::TargetPlusNoise { scale: 0.3 },
            ..CanaryConfig::new(0.0)
        };
        let out = optimize_canary(&x, 1, None, &pool, &Domain::UNIT, &cfg, &mut rng::stream(2, &[])).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn projection_holds_after_every_step() {
        let ms = models(6, 3);
        let counters = AccessCounters::default();
        let pool = ShadowPool::new(ms[..3].iter().collect(), ms[3..].iter().collect(), &counters);
        let x = [0.01, 0.99, 0.5, 0.3];
        for eps in [0.05, 0.2, 1.0] {
            let cfg = CanaryConfig {
                lr: 0.2,
                init: CanaryInit::TargetPlusNoise { scale: 2.0 * eps },
                ..CanaryConfig::new(eps)
            };
            let mut steps = 0;
            optimize_canary_traced(&x, 0, None, &pool, &Domain::UNIT, &cfg, &mut rng::stream(4, &[]), |q| {
                steps += 1;
                assert!(Domain::UNIT.contains(q));
                assert!(q.iter().zip(&x).all(|(a, b)| (a - b).abs() <= eps));
            })
            .unwrap();
            assert_eq!(steps, cfg.steps);
        }
    }

    #[test]
    fn offline_never_touches_in_models() {
        let ms = models(6, 5);
        let counters = AccessCounters::default();
        let pool = ShadowPool::new(ms[..3].iter().collect(), ms[3..].iter().collect(), &counters);
        let cfg = CanaryConfig {
            mode: AttackMode::Offline,
            batch_size: 3,
            ..CanaryConfig::new(0.1)
        };
        optimize_canary(&[0.5; 4], 2, None, &pool, &Domain::UNIT, &cfg, &mut rng::stream(0, &[])).unwrap();
        assert_eq!(counters.in_model_evals(), 0);
        assert_eq!(counters.out_model_evals(), 3 * 40);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let ms = models(5, 5);
        let counters = AccessCounters::default();
        let pool = ShadowPool::new(ms[..1].iter().collect(), ms[1..].iter().collect(), &counters);
        let cfg = CanaryConfig::new(0.1);
        let mut r = rng::stream(0, &[]);
        assert!(optimize_canary(&[0.5; 4], 0, None, &pool, &Domain::UNIT, &cfg, &mut r).is_err());
        let offline = CanaryConfig {
            mode: AttackMode::Offline,
            ..cfg.clone()
        };
        assert!(optimize_canary(&[0.5; 4], 0, None, &pool, &Domain::UNIT, &offline, &mut r).is_ok());
        let too_big = CanaryConfig {
            batch_size: 5,
            ..offline
        };
        assert!(optimize_canary(&[0.5; 4], 0, None, &pool, &Domain::UNIT, &too_big, &mut r).is_err());
    }

    #[test]
    fn noise_query_contract() {
        let x = [0.0, 0.5, 1.0];
        let mut r = rng::stream(1, &[]);
        assert_eq!(random_noise_query(&x, 0.0, &Domain::UNIT, &mut r).unwrap(), x.to_vec());
        for _ in 0..100 {
            let q = random_noise_query(&x, 0.1, &Domain::UNIT, &mut r).unwrap();
            assert!(Domain::UNIT.contains(&q));
            assert!(q.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.1));
        }
        let a = random_noise_query(&x, 0.3, &Domain::UNIT, &mut rng::stream(9, &[])).unwrap();
        let b = random_noise_query(&x, 0.3, &Domain::UNIT, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(a, b);
    }
}
