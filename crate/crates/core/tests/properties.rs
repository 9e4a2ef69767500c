//! Property tests for the invariants of the solver and the statistics toolkit.

use nsstat::correlation::{dc_modulus, LatticeCorrelation};
use nsstat::ensemble::{sample_initial, white_noise, Ensemble, MeasureSpec};
use nsstat::field::scalar_gradient;
use nsstat::io::{decode_nsf, encode_nsf, EnsembleManifest, Provenance};
use nsstat::moments::{real_space_stats, Moments};
use nsstat::solver::{step, Stepper, SolverConfig};
use nsstat::structure::{structure_snapshot_moments, structure_snapshot_real, DirectionSet};
use nsstat::vvlimit::{dc_uniformity_curves, wasserstein1};
use nsstat::{Grid, VelocityField};
use proptest::prelude::*;

fn grid(dim: usize) -> Grid {
    Grid::new(dim, if dim == 2 { 16 } else { 8 }).unwrap()
}

fn smooth(dim: usize, m: usize, seed: u64) -> Ensemble {
    let k_max = if dim == 2 { 5 } else { 2 };
    let spec = MeasureSpec::random_fourier(2.0, 1, k_max, 2.0, 10.0, seed);
    sample_initial(&spec, m, &grid(dim)).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn leray_idempotent_self_adjoint(seed in any::<u64>(), dim in 2usize..=3) {
        let g = grid(dim);
        let u = white_noise(&g, seed, 0);
        let v = white_noise(&g, seed, 1);
        let pu = u.leray_project();
        let ppu = pu.leray_project();
        prop_assert!(ppu.max_abs_diff(&pu) <= 1e-10 * pu.max_abs().max(1e-300));
        let a = pu.inner(&v);
        let b = u.inner(&v.leray_project());
        prop_assert!((a - b).abs() <= 1e-10 * u.l2_norm() * v.l2_norm());
        prop_assert!(pu.divergence_defect() <= 1e-10);
    }

    #[test]
    fn leray_annihilates_gradients(seed in any::<u64>(), dim in 2usize..=3) {
        let g = grid(dim);
        let psi = white_noise(&g, seed, 0).component(0).to_vec();
        let grad = scalar_gradient(&g, &psi);
        let p = grad.leray_project();
        prop_assert!(p.l2_norm() <= 1e-10 * grad.l2_norm().max(1e-300));
    }

    #[test]
    fn parseval(seed in any::<u64>(), dim in 2usize..=3) {
        let u = white_noise(&grid(dim), seed, 3);
        prop_assert!(rel(u.energy(), u.energy_quadrature()) <= 1e-12);
    }

    #[test]
    fn shifts_compose(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let u = smooth(2, 1, seed).members()[0].clone();
        let one = u.shift([a, b, 0.0]).shift([b, -a, 0.0]);
        let two = u.shift([a + b, b - a, 0.0]);
        prop_assert!(one.max_abs_diff(&two) <= 1e-11 * u.max_abs());
        prop_assert!(rel(u.shift([a, b, 0.0]).energy(), u.energy()) <= 1e-12);
    }

    #[test]
    fn statistics_symmetric_in_members(seed in any::<u64>(), r in 0.1f64..3.0) {
        let e = smooth(2, 4, seed);
        let p = e.permuted(&[2, 0, 3, 1]);
        let dirs = DirectionSet::new(2, 16).unwrap();
        prop_assert!(rel(dc_modulus(&e, r, 2.0).unwrap(), dc_modulus(&p, r, 2.0).unwrap()) <= 1e-12);
        let s = structure_snapshot_moments(&Moments::new(&e, true).unwrap(), &[r], &dirs).unwrap();
        let t = structure_snapshot_moments(&Moments::new(&p, true).unwrap(), &[r], &dirs).unwrap();
        for (x, y) in s.s_par.iter().flatten().zip(t.s_par.iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-12 * e.mean_energy());
        }
    }

    #[test]
    fn increment_moments_scale(seed in any::<u64>(), lambda in 0.1f64..5.0, r in 0.1f64..3.0) {
        let e = smooth(2, 2, seed);
        let w = dc_modulus(&e, r, 2.0).unwrap();
        let ws = dc_modulus(&e.scaled(lambda), r, 2.0).unwrap();
        prop_assert!(rel(ws, lambda * lambda * w) <= 1e-10);
        let dirs = DirectionSet::new(2, 16).unwrap();
        let s = structure_snapshot_moments(&Moments::new(&e, true).unwrap(), &[r], &dirs).unwrap();
        let t = structure_snapshot_moments(&Moments::new(&e.scaled(lambda), true).unwrap(), &[r], &dirs).unwrap();
        let bound = e.mean_energy().powf(1.5) * lambda.powi(3);
        prop_assert!((t.s0_3[0] - lambda.powi(3) * s.s0_3[0]).abs() <= 1e-10 * bound);
    }

    #[test]
    fn spectral_and_real_routes_agree(seed in any::<u64>(), hx in -3.0f64..3.0, hy in -3.0f64..3.0) {
        let e = smooth(2, 2, seed);
        let m = Moments::new(&e, true).unwrap();
        let h = [hx, hy, 0.0];
        let a = m.eval(&h, true);
        let b = real_space_stats(&e, &h);
        let scale = e.mean_energy();
        prop_assert!((a.trace_d() - b.trace_d()).abs() <= 1e-9 * scale);
        prop_assert!((a.trace_r() - b.trace_r()).abs() <= 1e-9 * scale);
        let c = LatticeCorrelation::new(&e).at(&h);
        prop_assert!((c - a.trace_r()).abs() <= 1e-9 * scale);
    }

    #[test]
    fn real_structure_route_matches(seed in any::<u64>(), r in 0.2f64..2.5) {
        let e = smooth(2, 2, seed);
        let dirs = DirectionSet::new(2, 16).unwrap();
        let s = structure_snapshot_moments(&Moments::new(&e, true).unwrap(), &[r], &dirs).unwrap();
        let t = structure_snapshot_real(&e, &[r], &dirs, &[2, 3]).unwrap();
        let scale = e.mean_energy().powf(1.5);
        prop_assert!((s.s_par[1][0] - t.s_par[1][0]).abs() <= 1e-9 * scale);
        prop_assert!((s.s0_3[0] - t.s0_3[0]).abs() <= 1e-9 * scale);
    }

    #[test]
    fn steps_dissipate_and_keep_zero_mean(seed in any::<u64>(), nu in 1e-3f64..0.1) {
        let u = smooth(2, 1, seed).members()[0].clone().with_nu(nu);
        let v = step(&u, 1e-2).unwrap();
        prop_assert!(v.energy() <= u.energy() * (1.0 + 1e-10));
        prop_assert!(v.mean_defect() == 0.0);
        prop_assert!(v.divergence_defect() <= 1e-10);
        prop_assert_eq!(step(&u, 1e-2).unwrap(), v);
    }

    #[test]
    fn nsf_round_trip_is_byte_identical(seed in any::<u64>(), dim in 2usize..=3, t in -10.0f64..10.0) {
        let u = white_noise(&grid(dim), seed, 0).with_time(t).with_nu(1e-3);
        let p = Provenance::new(format!("{seed:016x}"));
        let bytes = encode_nsf(&u, Some(&p)).unwrap();
        let (v, q) = decode_nsf(&bytes).unwrap();
        prop_assert_eq!(&v, &u);
        prop_assert_eq!(encode_nsf(&v, q.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn manifest_round_trip_is_byte_identical(seed in any::<u64>(), t in 0.0f64..5.0, nu in 0.0f64..1.0) {
        let spec = MeasureSpec::random_fourier(1.0 + (seed % 7) as f64 / 3.0, 1, 4, 1.5, 9.0, seed);
        let m = EnsembleManifest {
            format: nsstat::io::ENSEMBLE_FORMAT.into(),
            format_version: nsstat::io::MANIFEST_VERSION,
            dim: 2,
            n: 32,
            time: t,
            nu,
            member_files: (0..3).map(|j| format!("member_{j:04}.nsf")).collect(),
            spec: Some(spec),
            seed: Some(seed),
            provenance: Provenance::new("h"),
        };
        let s = m.encode().unwrap();
        let back = EnsembleManifest::decode(&s).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.encode().unwrap(), s);
    }

    #[test]
    fn wasserstein_is_a_metric(a in prop::collection::vec(-5.0f64..5.0, 1..12),
                               b in prop::collection::vec(-5.0f64..5.0, 1..12),
                               c in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let ab = wasserstein1(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wasserstein1(&b, &a)).abs() <= 1e-12);
        prop_assert!(wasserstein1(&a, &a) == 0.0);
        prop_assert!(ab <= wasserstein1(&a, &c) + wasserstein1(&c, &b) + 1e-12);
    }

    #[test]
    fn envelope_fit_recovers_power_laws(alpha in 0.1f64..3.0, c in 0.01f64..100.0) {
        let r: Vec<f64> = (0..8).map(|i| 0.05 * 1.5f64.powi(i)).collect();
        let curve: Vec<f64> = r.iter().map(|x| c * x.powf(alpha)).collect();
        let u = dc_uniformity_curves(&r, &[(0.01, curve)]).unwrap();
        prop_assert!((u.alpha_fit.unwrap() - alpha).abs() <= 1e-9);
        prop_assert!(rel(u.c_fit.unwrap(), c) <= 1e-9);
    }
}

#[test]
fn stepper_energy_never_increases() {
    let u = smooth(2, 1, 11).members()[0].clone();
    let cfg = SolverConfig::new(5e-3, 0.5, 0.05);
    let mut st = Stepper::new(&u, &cfg).unwrap();
    let mut prev = u.energy();
    for j in 1..=10 {
        st.advance_to(0.05 * j as f64).unwrap();
        let e = st.field().energy();
        assert!(e <= prev * (1.0 + 1e-10));
        prev = e;
    }
    assert_eq!(st.field().mean_defect(), 0.0);
}

#[test]
fn zero_field_stays_zero() {
    let z = VelocityField::zeros(grid(2));
    assert_eq!(step(&z, 0.1).unwrap(), z.clone().with_time(0.1));
}
