//! ROC/AUC against a brute-force pairwise oracle.

use mialab_core::eval::{auc, roc_curve, summarize, tpr_at_fpr};
use mialab_core::rng;
use proptest::prelude::*;
use rand::Rng;

/// Fraction of (member, non-member) pairs ordered correctly, ties counting half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_set(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::stream(seed, &[]);
    let n = r.random_range(2..200);
    // a coarse grid forces many ties
    let levels = r.random_range(1..20);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&l| (r.random_range(0..levels) as f64 + if l { 1.5 } else { 0.0 }) / levels as f64)
        .collect();
    (scores, labels)
}

#[test]
fn trapezoid_matches_pairwise_on_1000_sets() {
    for seed in 0..1000 {
        let (s, l) = random_set(seed);
        let got = auc(&roc_curve(&s, &l).unwrap());
        let want = pairwise_auc(&s, &l);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn auc_is_invariant_to_monotone_maps(seed in any::<u64>()) {
        let (s, l) = random_set(seed);
        let base = summarize(&s, &l, &[0.01, 0.1]).unwrap();
        let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        let other = summarize(&mapped, &l, &[0.01, 0.1]).unwrap();
        prop_assert!((base.auc - other.auc).abs() < 1e-12);
        prop_assert_eq!(base.tpr_at, other.tpr_at);
    }

    #[test]
    fn curve_is_monotone_and_anchored(seed in any::<u64>()) {
        let (s, l) = random_set(seed);
        let pts = roc_curve(&s, &l).unwrap();
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts[pts.len() - 1];
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        prop_assert_eq!(tpr_at_fpr(&pts, 1.0), 1.0);
        let a = auc(&pts);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
