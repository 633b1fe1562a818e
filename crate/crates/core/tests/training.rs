//! Statistical checks on split generation and the DP step.

use mialab_core::rng;
use mialab_core::training::{clip_per_example, dp_step, make_even_splits};
use proptest::prelude::*;

#[test]
fn each_point_is_in_half_the_models() {
    // 10,000 independent split draws: every column fraction is ~Binomial(1e4, 1/2) / 1e4
    let (points, seeds) = (40, 10_000u64);
    let mut counts = vec![0u32; points];
    for seed in 0..seeds {
        let s = make_even_splits(points, 1, seed).unwrap();
        for (c, &b) in counts.iter_mut().zip(s.row(0)) {
            *c += u32::from(b);
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        let frac = f64::from(c) / seeds as f64;
        assert!((frac - 0.5).abs() <= 0.02, "point {i}: {frac}");
    }
}

#[test]
fn dp_noise_has_the_configured_scale() {
    let (clip, sigma, batch) = (5.0, 0.7, 4);
    let zero = vec![vec![0.0; 1000]; batch];
    let mut r = rng::stream(3, &[]);
    let draws: Vec<f64> = (0..100).flat_map(|_| dp_step(&zero, clip, sigma, batch, &mut r)).collect();
    assert_eq!(draws.len(), 100_000);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
    let want = sigma * clip / batch as f64;
    assert!((std / want - 1.0).abs() < 0.05, "std {std}, want {want}");
}

proptest! {
    #[test]
    fn clipping_bounds_the_norm_and_keeps_direction(
        g in prop::collection::vec(-100.0f64..100.0, 1..50),
        c in 0.01f64..20.0,
    ) {
        let clipped = clip_per_example(&g, c);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm(&clipped) <= c * (1.0 + 1e-12));
        if norm(&g) <= c {
            prop_assert_eq!(&clipped, &g);
        }
        for (a, b) in clipped.iter().zip(&g) {
            prop_assert!(a * b >= 0.0);
        }
    }
}
