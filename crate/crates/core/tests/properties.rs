use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use speckle_core::estimator::{normalized_correlation, CovarianceMap, Flavor};
use speckle_core::grid::{energy, forward_transform, inverse_transform, spectral_energy, ComplexField, TransverseGrid};
use speckle_core::mask::MaskShape;
use speckle_core::medium::MediumModel;
use speckle_core::propagator::{free_space_propagate, propagate, PropagationPlan, Splitting};
use speckle_core::retrieval::register_and_score;
use speckle_core::rng::SeedTree;

fn field(dim: usize, n: usize, dx: f64, vals: &[(f64, f64)]) -> ComplexField {
    let g = TransverseGrid::new(dim, n, dx).unwrap();
    let values = (0..g.len()).map(|j| {
        let (a, b) = vals[j % vals.len()];
        Complex64::new(a, b)
    });
    ComplexField::new(g, values.collect()).unwrap()
}

fn close(a: &ComplexField, b: &ComplexField, tol: f64) -> bool {
    let scale = a.values.iter().map(|v| v.norm()).fold(1e-300, f64::max);
    a.values.iter().zip(&b.values).all(|(x, y)| (x - y).norm() <= tol * scale)
}

fn pow2() -> impl Strategy<Value = usize> {
    (3u32..6).prop_map(|e| 1usize << e)
}

fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip_and_parseval(dim in 1usize..=2, n in pow2(), dx in 0.05..2.0f64, vals in pairs()) {
        let f = field(dim, n, dx, &vals);
        let spec = forward_transform(&f);
        prop_assert!(close(&inverse_transform(&spec), &f, 1e-11));
        let (e, es) = (energy(&f), spectral_energy(&spec));
        prop_assert!((e - es).abs() <= 1e-10 * e.max(1e-300));
    }

    #[test]
    fn rolling_is_invertible(dim in 1usize..=2, n in pow2(), sx in -40i64..40, sy in -40i64..40, vals in pairs()) {
        let f = field(dim, n, 1.0, &vals);
        let back = f.rolled([sx, sy]).rolled([-sx, -sy]);
        prop_assert_eq!(back.values, f.values);
    }

    #[test]
    fn free_space_is_unitary_and_composes(k0 in 0.5..20.0f64, z1 in 0.0..5.0f64, z2 in 0.0..5.0f64, vals in pairs()) {
        let f = field(1, 64, 0.25, &vals);
        let a = free_space_propagate(&f, k0, z1).unwrap();
        prop_assert!((energy(&a) - energy(&f)).abs() <= 1e-10 * energy(&f).max(1e-300));
        let ab = free_space_propagate(&a, k0, z2).unwrap();
        let direct = free_space_propagate(&f, k0, z1 + z2).unwrap();
        prop_assert!(close(&ab, &direct, 1e-9));
    }

    #[test]
    fn random_medium_conserves_energy(seed in any::<u64>(), strength in 0.01..1.0f64, lie in any::<bool>()) {
        let g = TransverseGrid::new(1, 128, 0.2).unwrap();
        let f = ComplexField::from_real_fn(g, |p| (-p[0] * p[0] / 4.0).exp());
        let m = MediumModel::gaussian(strength, 1.0).unwrap();
        let splitting = if lie { Splitting::Lie } else { Splitting::Strang };
        let plan = PropagationPlan::new(4.0, 2.0, 8, splitting, Some(m)).unwrap();
        let out = propagate(&f, &plan, &SeedTree::new(seed).realization(3)).unwrap();
        prop_assert!((energy(&out) / energy(&f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn registration_undoes_shift_mirror_and_scale(
        shift in -20i64..20, mirror in any::<bool>(), phase in -3.1..3.1f64, amp in 0.2..5.0f64, seed in any::<u64>()
    ) {
        let g = TransverseGrid::new(1, 64, 1.0).unwrap();
        let mut rng = SeedTree::new(seed).auxiliary(speckle_core::rng::Purpose::Restart, 0);
        let truth = ComplexField::new(g, (0..64).map(|j| {
            if (20..44).contains(&j) { Complex64::new(rng.random::<f64>() + 0.1, 0.0) } else { Complex64::new(0.0, 0.0) }
        }).collect()).unwrap();
        let mut moved = truth.clone();
        if mirror {
            for j in 0..64 {
                moved.values[(64 - j) % 64] = truth.values[j];
            }
        }
        let scale = Complex64::from_polar(amp, phase);
        let candidate = ComplexField::new(g, moved.rolled([shift, 0]).values.iter().map(|v| v * scale).collect()).unwrap();
        let reg = register_and_score(&candidate, &truth).unwrap();
        prop_assert!(reg.error < 1e-10, "error {}", reg.error);
    }

    #[test]
    fn band_limiting_preserves_the_mask_sum(w in 1.0..6.0f64, frac in 0.1..1.0f64) {
        let g = TransverseGrid::new(1, 128, 0.1).unwrap();
        let shape = MaskShape::Rectangle { width: w, height: 1.0 };
        let sum = |f: &ComplexField| f.values.iter().sum::<Complex64>();
        let (a, b) = (sum(&shape.sample(g)), sum(&shape.sample_band_limited(g, frac)));
        prop_assert!((a - b).norm() < 1e-9 * a.norm());
    }

    #[test]
    fn slits_light_exactly_width_over_dx_nodes(steps in 1usize..10, gap in 1usize..10, dx in 0.05..1.0f64) {
        let g = TransverseGrid::new(1, 256, dx).unwrap();
        let w = steps as f64 * dx;
        let sep = (steps + gap) as f64 * dx;
        let u = MaskShape::DoubleSlit { slit_width: w, separation: sep, height: 1.0 }.sample(g);
        let lit = u.values.iter().filter(|v| v.re > 0.0).count();
        prop_assert_eq!(lit, 2 * steps);
    }

    #[test]
    fn correlation_ignores_positive_affine_maps(a in prop::collection::vec(-5.0..5.0f64, 3..30), s in 0.1..10.0f64, t in -5.0..5.0f64) {
        let spread = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - a.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let b: Vec<f64> = a.iter().map(|x| s * x + t).collect();
        prop_assert!((normalized_correlation(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn offset_reduction_accounts_for_every_pair(k in 1i64..8, vals in prop::collection::vec(-1.0..1.0f64, 1..5)) {
        let g = TransverseGrid::new(1, 64, 0.5).unwrap();
        let shifts: Vec<[f64; 2]> = (-k..=k).map(|i| [i as f64 * 0.5, 0.0]).collect();
        let s = shifts.len();
        let values: Vec<f64> = (0..s * s).map(|i| vals[i % vals.len()]).collect();
        let map = CovarianceMap { shifts, values: values.clone(), stderr: None, flavor: Flavor::Analytic, warnings: vec![] };
        let samples = map.by_offset(&g).unwrap();
        prop_assert_eq!(samples.len(), (4 * k + 1) as usize);
        prop_assert_eq!(samples.iter().map(|x| x.pairs).sum::<usize>(), s * s);
        let total: f64 = samples.iter().map(|x| x.value * x.pairs as f64).sum();
        prop_assert!((total - values.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn screens_depend_only_on_seed_realization_and_step(seed in any::<u64>(), r in 0u64..100, step in 0u64..100) {
        let tree = SeedTree::new(seed);
        let draw = |r: u64, s: u64| tree.realization(r).screen(s).random::<u64>();
        prop_assert_eq!(draw(r, step), draw(r, step));
        prop_assert_ne!(draw(r, step), draw(r, step + 1));
        prop_assert_ne!(draw(r, step), draw(r + 1, step));
    }
}
