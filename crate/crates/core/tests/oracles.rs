mod common;

use common::*;
use point_diffuse::diffusion::drift_coefficient;
use point_diffuse::schedule::{NoiseSchedule, ScheduleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn nearest_neighbour_matches_exhaustive_scan() {
    assert_eq!(check_nearest(1, 80), Ok(80));
}

#[test]
fn voxelization_matches_brute_force() {
    assert_eq!(check_voxelize(2, 100), Ok(100));
}

#[test]
fn chamfer_matches_brute_force() {
    assert_eq!(check_chamfer(3, 100), Ok(100));
}

#[test]
fn iou_tallies_match_set_arithmetic() {
    assert_eq!(check_tallies(4, 100), Ok(100));
}

#[test]
fn unknown_mask_matches_slab_test() {
    assert_eq!(check_mask(5, 60), Ok(60));
}

#[test]
fn alpha_bar_matches_exact_rational_product() {
    for kind in [
        ScheduleKind::Linear,
        ScheduleKind::Cosine { literal: false },
        ScheduleKind::Cosine { literal: true },
        ScheduleKind::Sigmoid { sharpness: 6.0 },
    ] {
        let s = NoiseSchedule::from_kind(kind, 3.5e-5, 0.007, 1000).unwrap();
        let exact = exact_alpha_bars(s.betas());
        for t in 1..=1000 {
            let got = s.alpha_bar(t).unwrap();
            let rel = (got - exact[t - 1]).abs() / exact[t - 1];
            assert!(rel < 1e-12, "{kind:?} t={t}: {got} vs {}", exact[t - 1]);
        }
        for (t, want) in exact_complements(s.betas()).into_iter().enumerate() {
            let got = s.one_minus_alpha_bar(t + 1).unwrap();
            assert!((got - want).abs() < 1e-12 * want, "{kind:?} t={}: {got} vs {want}", t + 1);
        }
    }
}

#[test]
fn drift_coefficients_match_independent_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let steps = rng.random_range(1..=300);
        let betas: Vec<f64> = (0..steps).map(|_| rng.random_range(1e-5..0.05)).collect();
        let s = NoiseSchedule::from_betas(betas.clone()).unwrap();
        let exact = exact_complements(&betas);
        for t in 1..=steps {
            let want = betas[t - 1] / exact[t - 1].sqrt();
            let got = drift_coefficient(&s, t).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "t={t}: {got} vs {want}");
        }
    }
}

#[test]
fn exact_product_oracle_hand_cases() {
    let (bars, comps) = exact_products(&[0.5, 0.5, 0.25]);
    assert_eq!(bars, vec![0.5, 0.25, 0.1875]);
    assert_eq!(comps, vec![0.5, 0.75, 0.8125]);
    let (bars, comps) = exact_products(&[0.1]);
    assert_eq!(bars, vec![1.0 - 0.1]);
    assert_eq!(comps, vec![0.1]);
}
