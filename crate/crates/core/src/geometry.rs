//! Symmetry-reduced backgrounds.
//!
//! Both backends are written in the moment coordinate `x` of the reference
//! metric, which runs over `[0, P]`. With `a(x) = x (P - x) / P` the full
//! potential `U = u0 + phi` has `U' = g = x + a phi_x` and `U'' = a g_x`
//! (derivatives in the logarithmic radius `s = log(x / (P - x))`), so
//!
//! * sphere (`n = 1`, `P = 2 lambda`): `R = g_x = 1 + (a phi_x)_x`, which is
//!   `1 + Delta_0 phi / 2` in terms of the real Laplacian of `lambda * g_round`;
//! * projective plane (`n = 2`, `P = 3 lambda`): `R = (g / x) g_x`.
//!
//! A function that is smooth in `x` is smooth on the manifold, so the pole
//! conditions are built in. The reference measure is `(2 pi)^n n x^(n-1) dx`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cheb::Chebyshev;
use crate::error::{Error, Result};

/// Mass of the reference measure allowed outside the radial window, relative to `V`.
pub const WINDOW_MASS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Sphere,
    Radial,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Sphere => "sphere",
            Backend::Radial => "radial",
        }
    }
}

/// Quadrature grid. `nodes` are colatitudes for the sphere and moment
/// coordinates for the radial backend.
#[derive(Debug, Clone)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Geometry {
    pub n: usize,
    pub lambda: f64,
    pub volume: f64,
    pub backend: Backend,
    pub grid: Grid,
    /// Moment coordinate of each node.
    pub moment: Vec<f64>,
    /// Length `P` of the moment interval.
    pub width: f64,
    /// `u0(s)` at the nodes (radial backend; `+inf` at the far end).
    pub u0: Option<Vec<f64>>,
    pub s_window: Option<(f64, f64)>,
    cheb: Chebyshev,
    a: Vec<f64>,
    da: Vec<f64>,
    zeta: Vec<f64>,
}

/// Pieces of the Monge–Ampère operator at a potential.
#[derive(Debug, Clone)]
pub struct Ratio {
    pub r: Vec<f64>,
    /// `phi_x`
    pub dphi: Vec<f64>,
    /// `U' = x + a phi_x`
    pub g: Vec<f64>,
    /// `g_x = U'' / u0''`
    pub gx: Vec<f64>,
}

impl Ratio {
    pub fn min(&self) -> (f64, usize) {
        argmin(&self.r)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Reference,
    /// `R dmu_0` for a supplied volume ratio.
    Phi(&'a [f64]),
}

pub fn build_sphere_geometry(lambda: f64, nodes: usize) -> Result<Geometry> {
    check_common(lambda, nodes)?;
    let width = 2.0 * lambda;
    let cheb = Chebyshev::new(nodes, width);
    let kappa = 2.0 * PI;
    let weights: Vec<f64> = cheb.weights().iter().map(|w| kappa * w).collect();
    let grid = Grid {
        nodes: cheb.angles().to_vec(),
        weights,
    };
    Ok(Geometry::assemble(
        1,
        lambda,
        Backend::Sphere,
        grid,
        cheb,
        None,
        None,
    ))
}

pub fn build_radial_geometry(
    lambda: f64,
    nodes: usize,
    s_min: f64,
    s_max: f64,
) -> Result<Geometry> {
    check_common(lambda, nodes)?;
    let mut problems = Vec::new();
    if !(s_min < 0.0 && s_max > 0.0) {
        problems.push(format!("s-window [{s_min}, {s_max}] must contain 0"));
    }
    if s_min > -12.0 || s_max < 12.0 {
        problems.push(format!(
            "s-window [{s_min}, {s_max}] must satisfy |s_min|, s_max >= 12"
        ));
    }
    if problems.is_empty() {
        let outside = window_mass_fraction(s_min, s_max);
        if outside > WINDOW_MASS_TOLERANCE {
            problems.push(format!(
                "s-window [{s_min}, {s_max}] too small: reference mass outside is {outside:e} V"
            ));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let width = 3.0 * lambda;
    let cheb = Chebyshev::new(nodes, width);
    let kappa = 4.0 * PI * PI;
    let weights: Vec<f64> = cheb
        .weights()
        .iter()
        .zip(cheb.nodes())
        .map(|(w, x)| kappa * 2.0 * x * w)
        .collect();
    let u0 = cheb
        .nodes()
        .iter()
        .map(|&x| {
            if x >= width {
                f64::INFINITY
            } else {
                -width * (1.0 - x / width).ln()
            }
        })
        .collect();
    let grid = Grid {
        nodes: cheb.nodes().to_vec(),
        weights,
    };
    Ok(Geometry::assemble(
        2,
        lambda,
        Backend::Radial,
        grid,
        cheb,
        Some(u0),
        Some((s_min, s_max)),
    ))
}

/// Fraction of the radial reference mass with `s` outside `[s_min, s_max]`.
pub fn window_mass_fraction(s_min: f64, s_max: f64) -> f64 {
    let sig = |s: f64| 1.0 / (1.0 + (-s).exp());
    let below = sig(s_min).powi(2);
    // 1 - sig^2 = (1 - sig)(1 + sig), with 1 - sig(s) = sig(-s)
    let above = sig(-s_max) * (1.0 + sig(s_max));
    below + above
}

fn check_common(lambda: f64, nodes: usize) -> Result<()> {
    let mut problems = Vec::new();
    if !(lambda > 0.0 && lambda <= 1.0) {
        problems.push(format!("lambda out of (0,1]: {lambda}"));
    }
    if nodes < 16 {
        problems.push(format!("node count must be >= 16: {nodes}"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

impl Geometry {
    fn assemble(
        n: usize,
        lambda: f64,
        backend: Backend,
        grid: Grid,
        cheb: Chebyshev,
        u0: Option<Vec<f64>>,
        s_window: Option<(f64, f64)>,
    ) -> Geometry {
        let width = cheb.width();
        let moment = cheb.nodes().to_vec();
        let a = moment.iter().map(|x| x * (width - x) / width).collect();
        let da = moment.iter().map(|x| 1.0 - 2.0 * x / width).collect();
        let zeta = cheb.angles().iter().map(|t| t.cos()).collect();
        let volume = (2.0 * PI * width).powi(n as i32);
        Geometry {
            n,
            lambda,
            volume,
            backend,
            grid,
            moment,
            width,
            u0,
            s_window,
            cheb,
            a,
            da,
            zeta,
        }
    }

    pub fn len(&self) -> usize {
        self.moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moment.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.grid.weights
    }

    pub fn cheb(&self) -> &Chebyshev {
        &self.cheb
    }

    /// `1 - 2x/P`; equals `cos(theta)` on the sphere.
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// `a(x) = x (P - x) / P = u0''(s)`.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Logarithmic radius of node `j` (infinite at the endpoints).
    pub fn s_coordinate(&self, j: usize) -> f64 {
        let x = self.moment[j];
        (x / (self.width - x)).ln()
    }

    /// Moment coordinate of a logarithmic radius.
    pub fn moment_of_s(&self, s: f64) -> f64 {
        self.width / (1.0 + (-s).exp())
    }

    /// Largest eigenvalue modulus of the linearised operator `phi -> R` at `phi = 0`.
    /// The collocation operator maps polynomials of degree `l` to themselves, so
    /// its spectrum is exactly `l (l + n) / P`.
    pub fn operator_radius(&self) -> f64 {
        let l = (self.len() - 1) as f64;
        l * (l + self.n as f64) / self.width
    }

    pub fn ratio(&self, phi: &[f64]) -> Result<Ratio> {
        self.check_len(phi)?;
        let (d1, d2) = self.cheb.derivatives(phi);
        let m = self.len();
        let mut g = vec![0.0; m];
        let mut gx = vec![0.0; m];
        for j in 0..m {
            g[j] = self.moment[j] + self.a[j] * d1[j];
            gx[j] = 1.0 + self.da[j] * d1[j] + self.a[j] * d2[j];
        }
        let r = match self.n {
            1 => gx.clone(),
            _ => (0..m)
                .map(|j| {
                    if j == 0 {
                        (1.0 + d1[0]) * gx[0]
                    } else {
                        g[j] / self.moment[j] * gx[j]
                    }
                })
                .collect(),
        };
        Ok(Ratio { r, dphi: d1, g, gx })
    }

    /// `omega_phi^n / omega_0^n`, rejecting non-positive values.
    pub fn volume_ratio(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let parts = self.ratio(phi)?;
        check_admissible(&parts)?;
        Ok(parts.r)
    }

    /// Relative eigenvalues of `omega_phi` with respect to `omega_0`.
    pub fn relative_eigenvalues(&self, parts: &Ratio) -> Vec<Vec<f64>> {
        match self.n {
            1 => vec![parts.r.clone()],
            _ => {
                let first = (0..self.len())
                    .map(|j| {
                        if j == 0 {
                            1.0 + parts.dphi[0]
                        } else {
                            parts.g[j] / self.moment[j]
                        }
                    })
                    .collect();
                vec![first, parts.gx.clone()]
            }
        }
    }

    /// `tr_{omega_0} omega_phi`.
    pub fn trace_ratio(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let parts = self.ratio(phi)?;
        check_admissible(&parts)?;
        Ok(self.trace_from(&parts))
    }

    pub fn trace_from(&self, parts: &Ratio) -> Vec<f64> {
        let ev = self.relative_eigenvalues(parts);
        (0..self.len())
            .map(|j| ev.iter().map(|e| e[j]).sum())
            .collect()
    }

    /// `|d f|^2` in the metric `omega_phi`, for a function of the moment coordinate.
    pub fn gradient_squared(&self, f: &[f64], parts: &Ratio) -> Vec<f64> {
        let df = self.cheb.derivative(f);
        (0..self.len())
            .map(|j| self.a[j] * df[j] * df[j] / parts.gx[j])
            .collect()
    }

    pub fn integrate(&self, f: &[f64], against: Measure<'_>) -> Result<f64> {
        self.check_len(f)?;
        let w = &self.grid.weights;
        Ok(match against {
            Measure::Reference => f.iter().zip(w).map(|(f, w)| f * w).sum(),
            Measure::Phi(r) => {
                self.check_len(r)?;
                f.iter().zip(w).zip(r).map(|((f, w), r)| f * r * w).sum()
            }
        })
    }

    /// `(1/V) int f dmu`.
    pub fn mean(&self, f: &[f64], against: Measure<'_>) -> Result<f64> {
        Ok(self.integrate(f, against)? / self.volume)
    }

    /// `log((1/V) int e^v dmu_0)` without overflow.
    pub fn log_mean_exp(&self, v: &[f64]) -> f64 {
        log_mean_exp(v, &self.grid.weights, self.volume)
    }

    /// Evaluates a node field at an arbitrary moment coordinate.
    pub fn interpolate(&self, f: &[f64], x: f64) -> f64 {
        let a = self.cheb.coefficients(f);
        self.cheb.evaluate(&a, x)
    }

    /// Samples `f(zeta)` with `zeta = 1 - 2x/P` at the nodes.
    pub fn sample_zeta(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.zeta.iter().map(|&z| f(z)).collect()
    }

    /// Samples a function of the logarithmic radius, using the end limits at the poles.
    pub fn sample_s(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.len()).map(|j| f(self.s_coordinate(j))).collect()
    }

    pub(crate) fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::Usage(format!(
                "field has {} values, grid has {} nodes",
                f.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Both relative eigenvalues must be positive; for `n = 2` positivity of
/// `g_x` forces positivity of `g / x` because `g(0) = 0`.
pub(crate) fn check_admissible(parts: &Ratio) -> Result<()> {
    let (min_r, node) = parts.min();
    if !(min_r > 0.0) || parts.r.iter().any(|r| !r.is_finite()) {
        return Err(Error::Inadmissible { min_r, node });
    }
    let (min_gx, node) = argmin(&parts.gx);
    if !(min_gx > 0.0) {
        return Err(Error::Inadmissible {
            min_r: min_gx,
            node,
        });
    }
    Ok(())
}

pub(crate) fn argmin(v: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (j, &x) in v.iter().enumerate() {
        if x < best.0 || x.is_nan() {
            best = (x, j);
            if x.is_nan() {
                break;
            }
        }
    }
    best
}

pub(crate) fn argmax(v: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, &x) in v.iter().enumerate() {
        if x > best.0 {
            best = (x, j);
        }
    }
    best
}

/// `log((1/V) sum_j w_j e^{v_j})`, shifted by the maximum.
pub fn log_mean_exp(v: &[f64], w: &[f64], volume: f64) -> f64 {
    let m = v
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().zip(w).map(|(v, w)| w * (v - m).exp()).sum();
    m + (s / volume).ln()
}

/// Reference Ricci potential, or a synthetic replacement, normalised so that
/// `(1/V) int e^h dmu_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistDatum {
    pub h: Vec<f64>,
}

impl TwistDatum {
    pub fn zero(geom: &Geometry) -> Self {
        TwistDatum {
            h: vec![0.0; geom.len()],
        }
    }

    /// Shifts `values` by a constant to satisfy the normalisation.
    pub fn normalized(geom: &Geometry, mut values: Vec<f64>) -> Result<Self> {
        geom.check_len(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("twist datum has non-finite values".into()));
        }
        let shift = geom.log_mean_exp(&values);
        values.iter_mut().for_each(|v| *v -= shift);
        Ok(TwistDatum { h: values })
    }

    /// `(kappa/2) log((zeta - cos(center))^2 + width^2)`, normalised. With
    /// `center = 0` and `kappa < 0` the weight `e^h` concentrates at the
    /// pole `x = 0` like `dist^(2 kappa)` down to the scale set by `width`.
    pub fn concentrated(geom: &Geometry, kappa: f64, width: f64, center: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Config(format!(
                "concentration width must be positive: {width}"
            )));
        }
        let zc = center.cos();
        let values = geom.sample_zeta(|z| 0.5 * kappa * ((z - zc).powi(2) + width * width).ln());
        Self::normalized(geom, values)
    }

    pub fn normalization_defect(&self, geom: &Geometry) -> f64 {
        geom.log_mean_exp(&self.h).exp_m1()
    }

    pub fn inf(&self) -> f64 {
        self.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volumes() {
        let g = build_sphere_geometry(1.0, 256).unwrap();
        assert!((g.volume - 4.0 * PI).abs() < 1e-12);
        let s: f64 = g.weights().iter().sum();
        assert!((s - g.volume).abs() < 1e-12 * g.volume);
        let g = build_sphere_geometry(0.5, 256).unwrap();
        assert!((g.volume - 2.0 * PI).abs() < 1e-12);
        let r = build_radial_geometry(0.5, 128, -20.0, 20.0).unwrap();
        let s: f64 = r.weights().iter().sum();
        assert!((s - r.volume).abs() < 1e-12 * r.volume);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(
            build_sphere_geometry(1.5, 256),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_sphere_geometry(0.5, 8),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_radial_geometry(0.5, 64, -12.0, 12.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_radial_geometry(0.5, 64, -5.0, 30.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reference_ratio_is_one() {
        for g in [
            build_sphere_geometry(0.7, 64).unwrap(),
            build_radial_geometry(0.7, 64, -20.0, 20.0).unwrap(),
        ] {
            for c in [0.0, 2.5] {
                let r = g.volume_ratio(&vec![c; g.len()]).unwrap();
                assert!(r.iter().all(|r| (r - 1.0).abs() < 1e-12));
                let tr = g.trace_ratio(&vec![c; g.len()]).unwrap();
                assert!(tr.iter().all(|t| (t - g.n as f64).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        let g = build_sphere_geometry(1.0, 32).unwrap();
        assert!(matches!(
            g.integrate(&[1.0; 3], Measure::Reference),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn concentrated_twist_is_normalized() {
        let g = build_sphere_geometry(0.5, 128).unwrap();
        let h = TwistDatum::concentrated(&g, -0.5, 0.01, 0.0).unwrap();
        assert!(h.normalization_defect(&g).abs() < 1e-12);
        assert!(h.h[0] > h.h[g.len() - 1]);
    }
}
