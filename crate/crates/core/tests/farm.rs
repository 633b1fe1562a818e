//! Farm construction, persistence and attack-level invariants on a toy farm.

use mialab_core::attacks::{
    run_attack, AttackConfig, AttackMethod, AttackMode, CanaryConfig, CanaryInit, Target,
};
use mialab_core::data::{Dataset, GaussianMixture};
use mialab_core::farm::{build_farm, decode_farm, encode_farm, hold_out_target, load_farm, save_farm, ShadowFarm};
use mialab_core::nn::{Activation, ArchDescriptor};
use mialab_core::training::{OptimizerKind, TrainConfig};

fn toy(n_models: usize, seed: u64) -> (Dataset, ShadowFarm) {
    let ds = GaussianMixture {
        n_points: 120,
        n_classes: 3,
        dim: 4,
        center_spread: 1.0,
        noise_std: 1.0,
        seed,
    }
    .generate()
    .unwrap();
    let arch = ArchDescriptor::new(4, vec![8], 3, Activation::Relu).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        lr: 0.01,
        optimizer: OptimizerKind::Adam,
        seed: 0,
        dp: None,
    };
    let farm = build_farm(&ds, n_models, &arch, &cfg, seed).unwrap();
    (ds, farm)
}

fn balanced_targets(membership: &[bool], per_side: usize) -> Vec<Target> {
    let pick = |want: bool| {
        membership
            .iter()
            .enumerate()
            .filter(move |&(_, &m)| m == want)
            .take(per_side)
            .map(move |(index, _)| Target { index, is_member: want })
    };
    pick(true).chain(pick(false)).collect()
}

#[test]
fn store_round_trip_is_exact() {
    let (_, farm) = toy(4, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("farm.bin");
    save_farm(&farm, &path).unwrap();
    let back = load_farm(&path).unwrap();
    assert_eq!(back, farm);
    assert_eq!(encode_farm(&back), std::fs::read(&path).unwrap());
    assert_eq!(decode_farm(&encode_farm(&farm)).unwrap(), farm);
}

#[test]
fn farms_are_deterministic() {
    let (_, a) = toy(3, 7);
    let (_, b) = toy(3, 7);
    assert_eq!(encode_farm(&a), encode_farm(&b));
    let (_, c) = toy(3, 8);
    assert_ne!(encode_farm(&a), encode_farm(&c));
}

#[test]
fn in_sets_average_half_the_farm() {
    let (ds, farm) = toy(64, 2);
    let total: usize = (0..ds.len()).map(|i| farm.partition_indices(i).unwrap().0.len()).sum();
    let mean = total as f64 / ds.len() as f64;
    assert!((24.0..=40.0).contains(&mean), "mean |S_in| = {mean}");
    for i in 0..ds.len() {
        let (ins, outs) = farm.partition_indices(i).unwrap();
        assert_eq!(ins.len() + outs.len(), 64);
    }
}

#[test]
fn zero_radius_canary_reduces_to_repeated_lira() {
    let (ds, farm) = toy(16, 3);
    let (oracle, shadows) = hold_out_target(&farm, 0).unwrap();
    let targets = balanced_targets(oracle.membership(), 10);
    for mode in [AttackMode::Online, AttackMode::Offline] {
        let canary = CanaryConfig {
            num_queries: 4,
            init: CanaryInit::TargetPlusNoise { scale: 0.1 },
            ..CanaryConfig::new(0.0)
        };
        let run = |method| {
            run_attack(&oracle, &shadows, &ds, &targets, &AttackConfig::new(method, mode, canary.clone(), 5))
                .unwrap()
                .0
        };
        let lira = run(AttackMethod::Lira);
        let can = run(AttackMethod::Canary);
        assert_eq!(lira.rows.len(), 20);
        for (a, b) in lira.rows.iter().zip(&can.rows) {
            assert_eq!(a.query_scores.len(), 4);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.query_scores), bits(&b.query_scores));
            assert_eq!(a.aggregated.to_bits(), b.aggregated.to_bits());
        }
        assert_eq!(lira, can);
    }
}

#[test]
fn offline_runs_touch_no_in_model_and_no_target_parameters() {
    let (ds, farm) = toy(12, 4);
    let (oracle, shadows) = hold_out_target(&farm, 0).unwrap();
    let targets = balanced_targets(oracle.membership(), 8);
    for method in [AttackMethod::Lira, AttackMethod::Canary, AttackMethod::RandomNoise] {
        let cfg = AttackConfig::new(method, AttackMode::Offline, CanaryConfig::new(0.05), 1);
        let (table, stats) = run_attack(&oracle, &shadows, &ds, &targets, &cfg).unwrap();
        assert_eq!(stats.in_model_evals, 0, "{method:?}");
        assert_eq!(stats.target_param_reads, 0);
        assert!(stats.out_model_evals > 0);
        assert_eq!(stats.oracle_queries, (targets.len() * 10) as u64);
        assert!(table.scores().iter().all(|s| (0.0..=1.0).contains(s)));
    }
    let online = AttackConfig::new(AttackMethod::Canary, AttackMode::Online, CanaryConfig::new(0.05), 1);
    let (_, stats) = run_attack(&oracle, &shadows, &ds, &targets, &online).unwrap();
    assert!(stats.in_model_evals > 0);
}

#[test]
fn attacks_reject_a_foreign_dataset() {
    let (_, farm) = toy(4, 5);
    let (other, _) = toy(2, 6);
    let (oracle, shadows) = hold_out_target(&farm, 0).unwrap();
    let cfg = AttackConfig::new(AttackMethod::Lira, AttackMode::Offline, CanaryConfig::new(0.0), 0);
    assert!(run_attack(&oracle, &shadows, &other, &[], &cfg).is_err());
}
