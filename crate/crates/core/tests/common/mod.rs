#![allow(dead_code)]

use imaflow::geometry::{build_radial_geometry, build_sphere_geometry, Geometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sphere(lambda: f64, nodes: usize) -> Geometry {
    build_sphere_geometry(lambda, nodes).unwrap()
}

pub fn radial(lambda: f64, nodes: usize) -> Geometry {
    build_radial_geometry(lambda, nodes, -20.0, 20.0).unwrap()
}

pub fn both(nodes: usize) -> Vec<Geometry> {
    vec![sphere(0.5, nodes), radial(0.5, nodes)]
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `sum_k c_k T_k(zeta)` with decaying random coefficients, shrunk until
/// both relative eigenvalues stay above 0.1.
pub fn random_potential(geom: &Geometry, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = 6;
    let coeffs: Vec<f64> = (1..=modes)
        .map(|k| rng.gen_range(-1.0..1.0) / (k * k) as f64)
        .collect();
    let amp = rng.gen_range(0.05..1.0) * geom.width;
    let offset = rng.gen_range(-2.0..2.0);
    let base = geom.sample_zeta(|z| {
        let (mut t0, mut t1) = (1.0, z);
        let mut s = coeffs[0] * t1;
        for c in &coeffs[1..] {
            let t2 = 2.0 * z * t1 - t0;
            t0 = t1;
            t1 = t2;
            s += c * t2;
        }
        s
    });
    let mut scale = amp;
    loop {
        let phi: Vec<f64> = base.iter().map(|b| offset + scale * b).collect();
        if let Ok(parts) = geom.ratio(&phi) {
            let ok = parts.r.iter().chain(&parts.gx).all(|v| *v > 0.1);
            if ok {
                return phi;
            }
        }
        scale *= 0.5;
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton on `P_m`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// `(1/2) int_{-1}^{1} f(z) dz`, the normalised sphere measure in `zeta = cos(theta)`.
pub fn sphere_mean(f: impl Fn(f64) -> f64, m: usize) -> f64 {
    let (x, w) = gauss_legendre(m);
    0.5 * x.iter().zip(&w).map(|(x, w)| w * f(*x)).sum::<f64>()
}
