//! Mabuchi geodesics of symmetric potentials through Legendre duality.
//!
//! For a symmetric potential the full potential `U = u0 + phi` is a convex
//! function of the logarithmic radius `s`, with slope `g = U'` running over
//! the moment interval `[0, P]`. Its Legendre transform `U*(tau)` is finite on
//! the closed interval, and geodesics are straight lines of `U*`. We store the
//! relative dual `v = U* - u0*`, which is smooth and satisfies
//!
//! `v(tau) = K(x, tau) - phi(x)` where `g(x) = tau`,
//! `K(x, tau) = tau log(x / tau) + (P - tau) log((P - x) / (P - tau))`.
//!
//! Duals live on the same Chebyshev grid as potentials (`tau_j = x_j`).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::Normalization;
use crate::functionals::{energy_e, functional_f, integrability};
use crate::geometry::{argmax, check_admissible, Geometry, TwistDatum};

const NEWTON_TOLERANCE: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 200;

/// Legendre dual of `u0 + phi` on the moment interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualProfile {
    /// Moment nodes `tau_j`.
    pub tau: Vec<f64>,
    /// `U*(tau_j)`.
    pub values: Vec<f64>,
    /// `U*(tau_j) - u0*(tau_j)`.
    pub relative: Vec<f64>,
    /// Slopes of the relative dual at `tau = 0` and `tau = P`; the full dual
    /// has logarithmically infinite slopes there.
    pub endpoint_slopes: (f64, f64),
}

impl DualProfile {
    /// Dual of the zero potential, i.e. the reference dual itself.
    pub fn reference(geom: &Geometry) -> DualProfile {
        DualProfile::from_relative(geom, vec![0.0; geom.len()])
    }

    fn from_relative(geom: &Geometry, relative: Vec<f64>) -> DualProfile {
        let tau = geom.moment.clone();
        let values = tau
            .iter()
            .zip(&relative)
            .map(|(&t, v)| reference_dual(t, geom.width) + v)
            .collect();
        let d = geom.cheb().derivative(&relative);
        let endpoint_slopes = (d[0], d[d.len() - 1]);
        DualProfile {
            tau,
            values,
            relative,
            endpoint_slopes,
        }
    }

    /// Smallest discrete second difference of `U*` divided by the local spacing.
    pub fn min_second_difference(&self) -> f64 {
        let t = &self.tau;
        let u = &self.values;
        (1..t.len() - 1)
            .map(|j| {
                let l = (u[j] - u[j - 1]) / (t[j] - t[j - 1]);
                let r = (u[j + 1] - u[j]) / (t[j + 1] - t[j]);
                r - l
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `u0*(tau) = tau log tau + (P - tau) log(P - tau) - P log P`.
pub fn reference_dual(tau: f64, width: f64) -> f64 {
    xlogx(tau) + xlogx(width - tau) - xlogx(width)
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `tau log(x / tau) + (P - tau) log((P - x) / (P - tau))`, `<= 0` with equality at `x = tau`.
fn gibbs(x: f64, xc: f64, tau: f64, tauc: f64) -> f64 {
    let a = if tau > 0.0 { tau * (x / tau).ln() } else { 0.0 };
    let b = if tauc > 0.0 {
        tauc * (xc / tauc).ln()
    } else {
        0.0
    };
    a + b
}

/// `log(y / (P - y))` from `y` and `P - y`.
fn logit(y: f64, yc: f64) -> f64 {
    y.ln() - yc.ln()
}

/// Point of the moment interval with logit `sigma`, returned with its complement.
fn from_logit(sigma: f64, width: f64) -> (f64, f64) {
    let e = (-sigma.abs()).exp();
    let small = width * e / (1.0 + e);
    let large = width / (1.0 + e);
    if sigma >= 0.0 {
        (large, small)
    } else {
        (small, large)
    }
}

/// Complement `P - x_j` of node `j`, computed without cancellation.
fn node_complement(geom: &Geometry, j: usize) -> f64 {
    let th = geom.cheb().angles()[j];
    geom.width * (0.5 + 0.5 * th.cos())
}

/// Solves `f(sigma) = 0` for increasing `f` by Newton steps safeguarded with bisection.
fn monotone_root(f: impl Fn(f64) -> (f64, f64), guess: f64, radius: f64) -> Result<f64> {
    let mut lo = guess - radius;
    let mut hi = guess + radius;
    let mut expand = 0;
    while f(lo).0 > 0.0 {
        lo -= radius * 2f64.powi(expand);
        expand += 1;
        if expand > 60 {
            return Err(Error::Usage(
                "Legendre inversion failed to bracket a root".into(),
            ));
        }
    }
    expand = 0;
    while f(hi).0 < 0.0 {
        hi += radius * 2f64.powi(expand);
        expand += 1;
        if expand > 60 {
            return Err(Error::Usage(
                "Legendre inversion failed to bracket a root".into(),
            ));
        }
    }
    let mut x = guess.clamp(lo, hi);
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let (v, d) = f(x);
        let tol = NEWTON_TOLERANCE * (1.0 + x.abs());
        if v.abs() <= tol {
            return Ok(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let mut next = x - v / d;
        // Newton can cycle across a steep stretch or stall on a derivative spike
        let slow = v.abs() > 0.5 * last;
        if slow
            || !(next > lo && next < hi)
            || !d.is_finite()
            || d <= 0.0
            || (next - x).abs() <= tol
        {
            next = 0.5 * (lo + hi);
        }
        last = v.abs();
        x = next;
    }
    Ok(x)
}

/// Legendre dual of `u0 + phi`; `phi` must be admissible.
pub fn legendre_dual(geom: &Geometry, phi: &[f64]) -> Result<DualProfile> {
    let parts = geom.ratio(phi)?;
    check_admissible(&parts)?;
    let cheb = geom.cheb();
    let p = geom.width;
    let base = phi[0];
    let a0 = cheb.coefficients(&phi.iter().map(|v| v - base).collect::<Vec<_>>());
    let a1 = cheb.derivative_coefficients(&a0);
    let a2 = cheb.derivative_coefficients(&a1);
    let m = geom.len();
    // bound on |logit(g(x)) - logit(x)| from the nodal values
    let shift =
        |x: f64, xc: f64, d1: f64| ((1.0 + xc * d1 / p).ln() - (1.0 - x * d1 / p).ln()).abs();
    let radius = 1.0
        + (0..m)
            .map(|j| shift(geom.moment[j], node_complement(geom, j), parts.dphi[j]))
            .fold(0.0, f64::max);
    let relative = (0..m)
        .into_par_iter()
        .map(|j| {
            if j == 0 {
                return Ok(-phi[0]);
            }
            if j == m - 1 {
                return Ok(-phi[m - 1]);
            }
            let tau = geom.moment[j];
            let tauc = node_complement(geom, j);
            let target = logit(tau, tauc);
            // logit(g(x)) = logit(x) + log(g/x) - log((P-g)/(P-x)) is increasing in logit(x)
            let f = |sigma: f64| {
                let (x, xc) = from_logit(sigma, p);
                let d1 = cheb.evaluate(&a1, x);
                let d2 = cheb.evaluate(&a2, x);
                let gx_over_x = 1.0 + xc * d1 / p;
                let cg_over_cx = 1.0 - x * d1 / p;
                let val = sigma + gx_over_x.ln() - cg_over_cx.ln() - target;
                let a = x * xc / p;
                let g = x * gx_over_x;
                let gc = xc * cg_over_cx;
                let gxx = 1.0 + (1.0 - 2.0 * x / p) * d1 + a * d2;
                (val, a * gxx * p / (g * gc))
            };
            let sigma = monotone_root(f, target, radius)?;
            let (x, xc) = from_logit(sigma, p);
            Ok(gibbs(x, xc, tau, tauc) - cheb.evaluate(&a0, x) - base)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DualProfile::from_relative(geom, relative))
}

/// Potential whose dual is `dual`; inverse of [`legendre_dual`].
pub fn inverse_legendre(geom: &Geometry, dual: &DualProfile) -> Result<Vec<f64>> {
    inverse_relative(geom, &dual.relative)
}

fn inverse_relative(geom: &Geometry, v: &[f64]) -> Result<Vec<f64>> {
    geom.check_len(v)?;
    let cheb = geom.cheb();
    let p = geom.width;
    let base = v[0];
    let b0 = cheb.coefficients(&v.iter().map(|x| x - base).collect::<Vec<_>>());
    let b1 = cheb.derivative_coefficients(&b0);
    let b2 = cheb.derivative_coefficients(&b1);
    let m = geom.len();
    let dv = cheb.values(&b1);
    let radius = 1.0 + dv.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let phi = (0..m)
        .into_par_iter()
        .map(|j| {
            if j == 0 {
                return Ok(-v[0]);
            }
            if j == m - 1 {
                return Ok(-v[m - 1]);
            }
            let x = geom.moment[j];
            let xc = node_complement(geom, j);
            let target = logit(x, xc);
            // U*'(tau) = logit(tau) + v'(tau) = s(x)
            let f = |sigma: f64| {
                let (t, tc) = from_logit(sigma, p);
                let d1 = cheb.evaluate(&b1, t);
                let d2 = cheb.evaluate(&b2, t);
                (sigma + d1 - target, 1.0 + d2 * t * tc / p)
            };
            let sigma = monotone_root(f, target, radius)?;
            let (t, tc) = from_logit(sigma, p);
            Ok(gibbs(x, xc, t, tc) - cheb.evaluate(&b0, t) - base)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(phi)
}

/// `(mean |v0 - v1|^p)^(1/p)` against the normalised pushforward of the
/// reference measure to the moment interval.
pub fn dp_between_duals(geom: &Geometry, a: &DualProfile, b: &DualProfile, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Usage(format!("order must be >= 1: {p}")));
    }
    geom.check_len(&a.relative)?;
    geom.check_len(&b.relative)?;
    let diff: Vec<f64> = a
        .relative
        .iter()
        .zip(&b.relative)
        .map(|(x, y)| x - y)
        .collect();
    Ok(lp_norm(geom, &diff, p))
}

fn lp_norm(geom: &Geometry, f: &[f64], p: f64) -> f64 {
    let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let w = geom.weights();
    let s: f64 = f
        .iter()
        .zip(w)
        .map(|(v, w)| w * (v.abs() / scale).powf(p))
        .sum();
    scale * (s / geom.volume).powf(1.0 / p)
}

pub fn dp_distance(geom: &Geometry, phi0: &[f64], phi1: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Usage(format!("order must be >= 1: {p}")));
    }
    let a = legendre_dual(geom, phi0)?;
    let b = legendre_dual(geom, phi1)?;
    dp_between_duals(geom, &a, &b, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSegment {
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub dual0: DualProfile,
    pub dual1: DualProfile,
}

impl GeodesicSegment {
    pub fn new(geom: &Geometry, phi0: &[f64], phi1: &[f64]) -> Result<GeodesicSegment> {
        Ok(GeodesicSegment {
            phi0: phi0.to_vec(),
            phi1: phi1.to_vec(),
            dual0: legendre_dual(geom, phi0)?,
            dual1: legendre_dual(geom, phi1)?,
        })
    }

    /// Dual profile at parameter `s`; any real `s` is allowed here.
    pub fn dual_at(&self, geom: &Geometry, s: f64) -> DualProfile {
        let v = self
            .dual0
            .relative
            .iter()
            .zip(&self.dual1.relative)
            .map(|(a, b)| (1.0 - s) * a + s * b)
            .collect();
        DualProfile::from_relative(geom, v)
    }
}

/// Point of the segment at `s` in `[0, 1]`.
pub fn geodesic_point(geom: &Geometry, seg: &GeodesicSegment, s: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Usage(format!(
            "segment parameter outside [0, 1]: {s}"
        )));
    }
    if s == 0.0 {
        return Ok(seg.phi0.clone());
    }
    if s == 1.0 {
        return Ok(seg.phi1.clone());
    }
    inverse_legendre(geom, &seg.dual_at(geom, s))
}

/// Point at parameter `s >= 0` on the ray extending the segment.
pub fn ray_point(geom: &Geometry, seg: &GeodesicSegment, s: f64) -> Result<Vec<f64>> {
    if !(s >= 0.0) {
        return Err(Error::Usage(format!(
            "ray parameter must be nonnegative: {s}"
        )));
    }
    if s == 0.0 {
        return Ok(seg.phi0.clone());
    }
    inverse_legendre(geom, &seg.dual_at(geom, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RaySettings {
    /// Orders of the Cauchy defects.
    pub p_list: Vec<f64>,
    /// Points per segment for the `F` and slope samples.
    pub samples: usize,
    /// A ray is nontrivial when `d_2` grows faster than this per unit time.
    pub min_speed: f64,
    pub convexity_tolerance: f64,
}

impl Default for RaySettings {
    fn default() -> Self {
        RaySettings {
            p_list: vec![1.0, 2.0, 4.0],
            samples: 16,
            min_speed: 1e-3,
            convexity_tolerance: 1e-6,
        }
    }
}

/// Geodesic from the initial potential to one flow snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentFamily {
    pub t: f64,
    /// `d_2(phi_0, phi(t))`
    pub length: f64,
    /// `F` at equally spaced parameters.
    pub f_samples: Vec<f64>,
    pub f_min_second_difference: f64,
    pub f_convex: bool,
    /// Extremes over the segment of `sup_X (phi^a - phi^b) / (a - b)`, flow time as parameter.
    pub slope_min: f64,
    pub slope_max: f64,
    #[serde(skip)]
    pub segment: GeodesicSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyDefect {
    pub t_from: f64,
    pub t_to: f64,
    /// `(p, d_p)` between the two arc-length parametrised segments at `r_max`.
    pub defects: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayReport {
    pub times: Vec<f64>,
    /// `E(phi_0)` subtracted before building segments.
    pub energy_shift: f64,
    pub families: Vec<SegmentFamily>,
    /// Largest arc length shared by every segment.
    pub r_max: f64,
    pub defects: Vec<CauchyDefect>,
    /// `d_2` growth per unit flow time over the later half of the segments.
    pub speed: f64,
    pub nontrivial: bool,
    /// Slope bound measured on the trajectory, `max_j sup |phi(t_j) - phi_0| / t_j`.
    pub slope_bound: f64,
    pub slopes_within_bound: bool,
    pub f_convex: bool,
    /// Largest pointwise increase of the sup-normalised family at `r_max` between consecutive times (monotone limit: `<= 0`).
    pub monotonicity_defect: f64,
    /// Sup-normalised candidate `phi^r - sup(phi^r - phi_0)` from the last segment at `r_max`.
    #[serde(skip)]
    pub limit_candidate: Vec<f64>,
    /// The same point, E-normalised.
    #[serde(skip)]
    pub limit_candidate_energy: Vec<f64>,
}

/// Segments from `phi0` to the snapshots `(t_j, phi(t_j))`, with arc-length data.
pub fn asymptotic_ray(
    geom: &Geometry,
    h: &TwistDatum,
    phi0: &[f64],
    snapshots: &[(f64, Vec<f64>)],
    settings: &RaySettings,
) -> Result<RayReport> {
    if snapshots.len() < 3 {
        return Err(Error::Usage(format!(
            "ray needs at least 3 usable times, got {}",
            snapshots.len()
        )));
    }
    if snapshots.windows(2).any(|w| !(w[1].0 > w[0].0)) || !(snapshots[0].0 > 0.0) {
        return Err(Error::Usage(
            "ray times must be positive and increasing".into(),
        ));
    }
    if settings.samples < 2 {
        return Err(Error::Usage(
            "ray needs at least 2 samples per segment".into(),
        ));
    }
    let shift = energy_e(geom, phi0)?;
    let base: Vec<f64> = phi0.iter().map(|p| p - shift).collect();
    let targets: Vec<(f64, Vec<f64>)> = snapshots
        .iter()
        .map(|(t, p)| (*t, p.iter().map(|v| v - shift).collect()))
        .collect();
    let k = settings.samples;
    let families = targets
        .par_iter()
        .map(|(t, phi)| segment_family(geom, h, &base, *t, phi, k, settings.convexity_tolerance))
        .collect::<Result<Vec<_>>>()?;

    let r_max = families
        .iter()
        .map(|f| f.length)
        .fold(f64::INFINITY, f64::min);
    let direction = |f: &SegmentFamily| -> Vec<f64> {
        let seg = &f.segment;
        seg.dual0
            .relative
            .iter()
            .zip(&seg.dual1.relative)
            .map(|(a, b)| {
                if f.length > 0.0 {
                    (b - a) / f.length
                } else {
                    0.0
                }
            })
            .collect()
    };
    let dirs: Vec<Vec<f64>> = families.iter().map(direction).collect();
    let mut defects = Vec::new();
    for j in 0..families.len() - 1 {
        let diff: Vec<f64> = dirs[j]
            .iter()
            .zip(&dirs[j + 1])
            .map(|(a, b)| r_max * (a - b))
            .collect();
        let list = settings
            .p_list
            .iter()
            .map(|&p| {
                if !(p >= 1.0) {
                    return Err(Error::Usage(format!("order must be >= 1: {p}")));
                }
                Ok((p, lp_norm(geom, &diff, p)))
            })
            .collect::<Result<Vec<_>>>()?;
        defects.push(CauchyDefect {
            t_from: families[j].t,
            t_to: families[j + 1].t,
            defects: list,
        });
    }
    // later half only, so the early transient does not count as growth
    let first = &families[(families.len() - 1) / 2];
    let last = &families[families.len() - 1];
    let speed = (last.length - first.length) / (last.t - first.t);
    let nontrivial = speed > settings.min_speed;

    let slope_bound = targets
        .iter()
        .map(|(t, p)| {
            p.iter()
                .zip(&base)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / t
        })
        .fold(0.0, f64::max);
    let tol = 1e-6 * (1.0 + slope_bound);
    let slopes_within_bound = families
        .iter()
        .all(|f| f.slope_min >= -slope_bound - tol && f.slope_max <= slope_bound + tol);

    // points at the common arc length r_max
    let points = families
        .par_iter()
        .map(|f| {
            if f.length > 0.0 {
                ray_point(geom, &f.segment, r_max / f.length)
            } else {
                Ok(f.segment.phi0.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized: Vec<Vec<f64>> = points.iter().map(|p| sup_normalize(p, &base)).collect();
    let monotonicity_defect = normalized
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(b, a)| b - a)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RayReport {
        times: families.iter().map(|f| f.t).collect(),
        energy_shift: shift,
        f_convex: families.iter().all(|f| f.f_convex),
        r_max,
        defects,
        speed,
        nontrivial,
        slope_bound,
        slopes_within_bound,
        monotonicity_defect,
        limit_candidate: normalized.last().cloned().unwrap_or_default(),
        limit_candidate_energy: points.last().cloned().unwrap_or_default(),
        families,
    })
}

/// `phi - sup(phi - base)`.
fn sup_normalize(phi: &[f64], base: &[f64]) -> Vec<f64> {
    let diff: Vec<f64> = phi.iter().zip(base).map(|(a, b)| a - b).collect();
    let (m, _) = argmax(&diff);
    phi.iter().map(|p| p - m).collect()
}

fn segment_family(
    geom: &Geometry,
    h: &TwistDatum,
    base: &[f64],
    t: f64,
    phi: &[f64],
    k: usize,
    tolerance: f64,
) -> Result<SegmentFamily> {
    let segment = GeodesicSegment::new(geom, base, phi)?;
    let length = dp_between_duals(geom, &segment.dual0, &segment.dual1, 2.0)?;
    let points = (0..=k)
        .map(|i| geodesic_point(geom, &segment, i as f64 / k as f64))
        .collect::<Result<Vec<_>>>()?;
    let f_samples = points
        .iter()
        .map(|p| functional_f(geom, p, h))
        .collect::<Result<Vec<_>>>()?;
    let f_min_second_difference = f_samples
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::INFINITY, f64::min);
    let da = t / k as f64;
    let mut slope_min = f64::INFINITY;
    let mut slope_max = f64::NEG_INFINITY;
    for w in points.windows(2) {
        let q = w[1]
            .iter()
            .zip(&w[0])
            .map(|(b, a)| (b - a) / da)
            .fold(f64::NEG_INFINITY, f64::max);
        slope_min = slope_min.min(q);
        slope_max = slope_max.max(q);
    }
    Ok(SegmentFamily {
        t,
        length,
        f_samples,
        f_min_second_difference,
        f_convex: f_min_second_difference >= -tolerance,
        slope_min,
        slope_max,
        segment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthClass {
    Bounded,
    LogLinear,
    SuperLinear,
}

impl GrowthClass {
    pub fn name(self) -> &'static str {
        match self {
            GrowthClass::Bounded => "bounded",
            GrowthClass::LogLinear => "log-linear",
            GrowthClass::SuperLinear => "super-linear",
        }
    }
}

/// Log-integral increase below which a sequence counts as bounded.
pub const BOUNDED_LOG_INCREASE: f64 = 0.05;

/// Classifies the growth of `log I` against the parameter `r`.
pub fn classify_growth(r: &[f64], log_values: &[f64]) -> GrowthClass {
    let n = r.len();
    if n < 3 {
        return GrowthClass::Bounded;
    }
    let span = log_values[n - 1] - log_values[0];
    let rise = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - log_values[0];
    if span < BOUNDED_LOG_INCREASE && rise < BOUNDED_LOG_INCREASE {
        return GrowthClass::Bounded;
    }
    let third = (n / 3).max(2);
    let slope = |xs: &[f64], ys: &[f64]| crate::diagnostics::least_squares(xs, ys).slope;
    let early = slope(&r[..third], &log_values[..third]);
    let late = slope(&r[n - third..], &log_values[n - third..]);
    if late > 0.0 && late > 1.5 * early.max(0.0) {
        GrowthClass::SuperLinear
    } else {
        GrowthClass::LogLinear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaGrowth {
    pub alpha: f64,
    pub r: Vec<f64>,
    /// `log (1/V) int e^{-alpha (phi^r - sup(phi^r - phi_0))} dmu_0`
    pub log_sup: Vec<f64>,
    /// Same with the E-normalised ray (no shift).
    pub log_energy: Vec<f64>,
    pub class_sup: GrowthClass,
    pub class_energy: GrowthClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitIntegrabilityReport {
    pub explanation: String,
    pub per_alpha: Vec<AlphaGrowth>,
    /// Least `alpha` with growth under the sup normalisation.
    pub crossover: Option<f64>,
    /// `n / (n + 1)`
    pub threshold: f64,
}

/// Integrability along the last segment of the ray, extended in arc length.
pub fn ray_limit_integrability(
    geom: &Geometry,
    ray: &RayReport,
    alphas: &[f64],
    points: usize,
) -> Result<LimitIntegrabilityReport> {
    let threshold = geom.n as f64 / (geom.n as f64 + 1.0);
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Usage(
            "integrability exponents must be positive".into(),
        ));
    }
    if !ray.nontrivial {
        return Ok(LimitIntegrabilityReport {
            explanation: "trivial ray: the segment lengths do not grow".into(),
            per_alpha: alphas
                .iter()
                .map(|&alpha| AlphaGrowth {
                    alpha,
                    r: Vec::new(),
                    log_sup: Vec::new(),
                    log_energy: Vec::new(),
                    class_sup: GrowthClass::Bounded,
                    class_energy: GrowthClass::Bounded,
                })
                .collect(),
            crossover: None,
            threshold,
        });
    }
    let last = ray
        .families
        .last()
        .ok_or_else(|| Error::Usage("empty ray".into()))?;
    let points = points.max(3);
    let r: Vec<f64> = (0..points)
        .map(|i| last.length * i as f64 / (points - 1) as f64)
        .collect();
    let base = &last.segment.phi0;
    let phis = r
        .par_iter()
        .map(|&ri| ray_point(geom, &last.segment, ri / last.length))
        .collect::<Result<Vec<_>>>()?;
    let per_alpha = alphas
        .iter()
        .map(|&alpha| {
            let mut log_sup = Vec::with_capacity(points);
            let mut log_energy = Vec::with_capacity(points);
            for p in &phis {
                let ns = sup_normalize(p, base);
                log_sup.push(integrability(geom, &ns, alpha, Normalization::None)?.log);
                log_energy.push(integrability(geom, p, alpha, Normalization::None)?.log);
            }
            Ok(AlphaGrowth {
                alpha,
                class_sup: classify_growth(&r, &log_sup),
                class_energy: classify_growth(&r, &log_energy),
                r: r.clone(),
                log_sup,
                log_energy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let crossover = per_alpha
        .iter()
        .filter(|a| a.class_sup != GrowthClass::Bounded)
        .map(|a| a.alpha)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))));
    Ok(LimitIntegrabilityReport {
        explanation: String::new(),
        per_alpha,
        crossover,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_radial_geometry, build_sphere_geometry};

    #[test]
    fn root_survives_newton_cycles() {
        // plain Newton on atan diverges from |x| > 1.39
        let f = |x: f64| (x.atan(), 1.0 / (1.0 + x * x));
        for guess in [-3.0, 1.5, 10.0] {
            assert!(monotone_root(f, guess, 1.0).unwrap().abs() < 1e-12);
        }
        let f = |x: f64| {
            (
                (20.0 * (x - 0.3)).tanh() + 0.01 * x,
                20.0 / (20.0 * (x - 0.3)).cosh().powi(2) + 0.01,
            )
        };
        let r = monotone_root(f, -2.0, 1.0).unwrap();
        assert!(f(r).0.abs() < 1e-12, "{r}");
    }

    #[test]
    fn reference_dual_of_zero() {
        let g = build_sphere_geometry(0.5, 64).unwrap();
        let d = legendre_dual(&g, &vec![0.0; g.len()]).unwrap();
        assert!(d.relative.iter().all(|v| v.abs() < 1e-13));
        assert!(d.min_second_difference() > 0.0);
    }

    #[test]
    fn involution_on_smooth_potential() {
        for g in [
            build_sphere_geometry(0.5, 128).unwrap(),
            build_radial_geometry(0.5, 128, -20.0, 20.0).unwrap(),
        ] {
            let phi = g.sample_zeta(|z| 0.1 * z + 0.05 * z * z * z);
            let d = legendre_dual(&g, &phi).unwrap();
            let back = inverse_legendre(&g, &d).unwrap();
            for (a, b) in phi.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{a} {b}");
            }
        }
    }

    #[test]
    fn parameter_checks() {
        let g = build_sphere_geometry(0.5, 32).unwrap();
        let z = vec![0.0; g.len()];
        let seg = GeodesicSegment::new(&g, &z, &z).unwrap();
        assert!(geodesic_point(&g, &seg, 1.5).is_err());
        assert!(dp_distance(&g, &z, &z, 0.5).is_err());
    }
}
