mod common;

use common::*;
use imaflow::flow::{normalizing_constant, FlowState};
use imaflow::functionals::*;
use imaflow::geometry::{Measure, TwistDatum};
use proptest::prelude::*;

// For phi = eps cos(theta) on the sphere of class lambda, R = 1 - eps zeta / lambda and
// with m(f) = (1/2) int_{-1}^{1} f dzeta every functional is a one-dimensional integral.
const EPS: f64 = 0.3;

fn cos_mode(lambda: f64, nodes: usize) -> (imaflow::geometry::Geometry, Vec<f64>) {
    let g = sphere(lambda, nodes);
    let phi = g.sample_zeta(|z| EPS * z);
    (g, phi)
}

#[test]
fn trivial_values() {
    for g in both(64) {
        let zero = vec![0.0; g.len()];
        let h = TwistDatum::zero(&g);
        for v in [
            energy_e(&g, &zero).unwrap(),
            functional_i(&g, &zero).unwrap(),
            functional_j(&g, &zero).unwrap(),
            functional_f(&g, &zero, &h).unwrap(),
            mabuchi_m(&g, &zero, &h).unwrap(),
            entropy(&g, &zero).unwrap(),
        ] {
            assert!(v.abs() < 1e-14);
        }
        let a = 1.75;
        let c = vec![a; g.len()];
        assert!((energy_e(&g, &c).unwrap() - a).abs() < 1e-13);
        assert!((normalizing_constant(&g, &c, &h).unwrap() - a).abs() < 1e-13);
        for v in [
            functional_i(&g, &c).unwrap(),
            functional_j(&g, &c).unwrap(),
            functional_f(&g, &c, &h).unwrap(),
            mabuchi_m(&g, &c, &h).unwrap(),
        ] {
            assert!(v.abs() < 1e-12);
        }
        for norm in [
            Normalization::Sup,
            Normalization::Mean0,
            Normalization::MeanPhi,
        ] {
            assert!((integrability(&g, &zero, 0.7, norm).unwrap().value - 1.0).abs() < 1e-14);
        }
        assert!(
            (integrability(&g, &c, 1.0, Normalization::Sup)
                .unwrap()
                .value
                - 1.0)
                .abs()
                < 1e-14
        );
    }
}

#[test]
fn normalizing_constant_matches_oracles() {
    let (g, phi) = cos_mode(1.0, 256);
    let c = normalizing_constant(&g, &phi, &TwistDatum::zero(&g)).unwrap();
    let analytic = -(EPS.sinh() / EPS).ln();
    let oracle = -sphere_mean(|z| (-EPS * z).exp(), 4096).ln();
    assert!((oracle - analytic).abs() < 1e-13);
    assert!((c - oracle).abs() <= 1e-7);
}

#[test]
fn energy_matches_closed_forms() {
    for lambda in [1.0, 0.5] {
        let (g, phi) = cos_mode(lambda, 256);
        let e = energy_e(&g, &phi).unwrap();
        let closed = energy_closed_form_curve(&g, &phi).unwrap();
        assert!((e - closed).abs() <= 1e-8);
        // E = mean_0 phi - J and J = eps^2 / (6 lambda)
        assert!((e + EPS * EPS / (6.0 * lambda)).abs() <= 1e-10);
    }
}

#[test]
fn i_and_j_match_oracles() {
    let (g, phi) = cos_mode(1.0, 256);
    let i = functional_i(&g, &phi).unwrap();
    let oracle = sphere_mean(|z| EPS * z * (EPS * z), 4096);
    assert!((i - oracle).abs() <= 1e-7);

    // direct formula J = (1/4V) int |d phi|^2 dmu_0 with |d cos(theta)|^2 = sin^2(theta) / lambda
    for lambda in [1.0, 0.5] {
        let (g, phi) = cos_mode(lambda, 256);
        let direct = sphere_mean(|z| EPS * EPS * (1.0 - z * z) / lambda, 4096) / 4.0;
        assert!((functional_j(&g, &phi).unwrap() - direct).abs() <= 1e-7);
    }
}

#[test]
fn entropy_matches_oracle() {
    let (g, phi) = cos_mode(1.0, 256);
    let oracle = sphere_mean(
        |z| {
            let r = 1.0 - EPS * z;
            r * r.ln()
        },
        4096,
    );
    assert!((entropy(&g, &phi).unwrap() - oracle).abs() <= 1e-7);
}

#[test]
fn integrability_matches_oracle() {
    let (g, phi) = cos_mode(1.0, 256);
    let v = integrability(&g, &phi, 1.0, Normalization::Sup).unwrap();
    let oracle = sphere_mean(|z| (-(EPS * z - EPS)).exp(), 4096);
    assert!((v.log - oracle.ln()).abs() <= 1e-7 * oracle.ln().abs().max(1.0));
}

#[test]
fn mabuchi_matches_ricci_potential_identity() {
    for g in both(128) {
        let h = TwistDatum::concentrated(&g, -0.3, 0.1, 0.0).unwrap();
        let phi = random_potential(&g, 5);
        let s = FlowState::new(&g, &h, phi.clone(), 0.0).unwrap();
        let m = mabuchi_m(&g, &phi, &h).unwrap();
        let f = functional_f(&g, &phi, &h).unwrap();
        let mean_rho = g.mean(&s.rho, Measure::Phi(&s.r)).unwrap();
        assert!((m - f + mean_rho).abs() <= 1e-8, "{}", m - f + mean_rho);
    }
}

#[test]
fn d1_proxy_against_exact_distance() {
    // record the fitted multiplicative constant B with 1/B <= d_1 / J <= B
    for g in both(64) {
        let mut b: f64 = 1.0;
        for seed in 0..50 {
            let mut phi = random_potential(&g, seed);
            let s = sup(&phi);
            phi.iter_mut().for_each(|p| *p -= s);
            let j = d1_proxy(&g, &phi).unwrap();
            let d1 = imaflow::geodesics::dp_distance(&g, &vec![0.0; g.len()], &phi, 1.0).unwrap();
            assert!(j > 0.0 && d1 > 0.0);
            b = b.max(d1 / j).max(j / d1);
        }
        println!("{}: fitted B = {b:.3}", g.backend.name());
        assert!(b.is_finite());
    }
}

#[test]
fn convexity_check_flags_concave_samples() {
    let convex: Vec<(f64, f64, f64)> = (0..5)
        .map(|k| (k as f64, (k as f64 - 2.0).powi(2), 0.0))
        .collect();
    assert!(f_convexity_check(&convex, 0.0, 1e-6)
        .unwrap()
        .violations
        .is_empty());
    let concave: Vec<(f64, f64, f64)> = convex.iter().map(|(t, f, c)| (*t, -f, *c)).collect();
    assert!(!f_convexity_check(&concave, 0.0, 1e-6)
        .unwrap()
        .violations
        .is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn i_minus_j_sandwich(seed in any::<u64>(), radial_backend in any::<bool>()) {
        let g = if radial_backend { radial(0.5, 96) } else { sphere(0.5, 96) };
        let n = g.n as f64;
        let phi = random_potential(&g, seed);
        let i = functional_i(&g, &phi).unwrap();
        let j = functional_j(&g, &phi).unwrap();
        prop_assert!(j / n - 1e-8 <= i - j);
        prop_assert!(i - j <= n * j + 1e-8);
    }

    #[test]
    fn translation_invariance(seed in any::<u64>(), a in -5.0f64..5.0, radial_backend in any::<bool>()) {
        let g = if radial_backend { radial(0.5, 96) } else { sphere(0.5, 96) };
        let h = TwistDatum::concentrated(&g, -0.2, 0.2, 0.0).unwrap();
        let phi = random_potential(&g, seed);
        let moved: Vec<f64> = phi.iter().map(|p| p + a).collect();
        let df = functional_f(&g, &moved, &h).unwrap() - functional_f(&g, &phi, &h).unwrap();
        let dm = mabuchi_m(&g, &moved, &h).unwrap() - mabuchi_m(&g, &phi, &h).unwrap();
        prop_assert!(df.abs() <= 1e-10, "F moved by {}", df);
        prop_assert!(dm.abs() <= 1e-10, "M moved by {}", dm);
    }

    #[test]
    fn partial_sum_inequality(seed in any::<u64>(), radial_backend in any::<bool>()) {
        let g = if radial_backend { radial(0.5, 96) } else { sphere(0.5, 96) };
        let mut phi = random_potential(&g, seed);
        let s = sup(&phi);
        phi.iter_mut().for_each(|p| *p -= s);
        let r = g.volume_ratio(&phi).unwrap();
        let lhs = g.mean(&phi, Measure::Phi(&r)).unwrap();
        let e = energy_e(&g, &phi).unwrap();
        prop_assert!(lhs >= (g.n as f64 + 1.0) * e - 1e-8);
    }

    #[test]
    fn entropy_is_nonnegative(seed in any::<u64>(), radial_backend in any::<bool>()) {
        let g = if radial_backend { radial(0.5, 96) } else { sphere(0.5, 96) };
        let phi = random_potential(&g, seed);
        prop_assert!(entropy(&g, &phi).unwrap() >= -1e-10);
    }

    #[test]
    fn energy_path_quadrature_matches_curve_closed_form(seed in any::<u64>()) {
        let g = sphere(0.5, 96);
        let phi = random_potential(&g, seed);
        let e = energy_e(&g, &phi).unwrap();
        prop_assert!((e - energy_closed_form_curve(&g, &phi).unwrap()).abs() <= 1e-8);
    }
}
