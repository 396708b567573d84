//! Energy functionals, integrability integrals and the per-sample record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{normalizing_constant, FlowState};
use crate::geodesics;
use crate::geometry::{argmax, argmin, check_admissible, Geometry, Measure, Ratio, TwistDatum};

/// Number of Gauss–Legendre points for the path integral defining `E`.
pub const ENERGY_QUADRATURE_POINTS: usize = 16;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm) = if m == 1 { (z, 1.0) } else { (p1, p0) };
            dp = m as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[m - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[m - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

/// Volume ratio of `s phi` from the derivatives of `phi`.
fn scaled_ratio(geom: &Geometry, parts: &Ratio, s: f64) -> Vec<f64> {
    let x = &geom.moment;
    let a = geom.a();
    (0..geom.len())
        .map(|j| {
            let gx = 1.0 + s * (parts.gx[j] - 1.0);
            if geom.n == 1 {
                gx
            } else if j == 0 {
                (1.0 + s * parts.dphi[0]) * gx
            } else {
                (x[j] + s * a[j] * parts.dphi[j]) / x[j] * gx
            }
        })
        .collect()
}

fn admissible_parts(geom: &Geometry, phi: &[f64]) -> Result<Ratio> {
    let parts = geom.ratio(phi)?;
    check_admissible(&parts)?;
    Ok(parts)
}

/// Monge–Ampère energy, `E(phi) = int_0^1 (1/V) int phi R(s phi) dmu_0 ds`.
pub fn energy_e(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    let parts = admissible_parts(geom, phi)?;
    Ok(energy_from(geom, phi, &parts))
}

pub(crate) fn energy_from(geom: &Geometry, phi: &[f64], parts: &Ratio) -> f64 {
    let (sx, sw) = gauss_legendre(ENERGY_QUADRATURE_POINTS);
    let w = geom.weights();
    let mut total = 0.0;
    for (s, ws) in sx.iter().zip(&sw) {
        let r = scaled_ratio(geom, parts, *s);
        let inner: f64 = (0..geom.len()).map(|j| phi[j] * r[j] * w[j]).sum();
        total += ws * inner;
    }
    total / geom.volume
}

/// Closed form valid for curves: `(1/2V) int phi (1 + R) dmu_0`.
pub fn energy_closed_form_curve(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    if geom.n != 1 {
        return Err(Error::Usage(
            "closed-form energy is only defined for n = 1".into(),
        ));
    }
    let r = geom.volume_ratio(phi)?;
    let f: Vec<f64> = phi
        .iter()
        .zip(&r)
        .map(|(p, r)| 0.5 * p * (1.0 + r))
        .collect();
    geom.mean(&f, Measure::Reference)
}

/// `I(phi) = (1/V) int phi (1 - R) dmu_0`.
pub fn functional_i(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    let parts = admissible_parts(geom, phi)?;
    Ok(i_from(geom, phi, &parts.r))
}

fn i_from(geom: &Geometry, phi: &[f64], r: &[f64]) -> f64 {
    let w = geom.weights();
    (0..geom.len())
        .map(|j| phi[j] * (1.0 - r[j]) * w[j])
        .sum::<f64>()
        / geom.volume
}

/// `J(phi) = (1/V) int phi dmu_0 - E(phi)`.
pub fn functional_j(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    let parts = admissible_parts(geom, phi)?;
    Ok(geom.mean(phi, Measure::Reference)? - energy_from(geom, phi, &parts))
}

/// `F(phi) = c(phi) - E(phi)`.
pub fn functional_f(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<f64> {
    Ok(normalizing_constant(geom, phi, h)? - energy_e(geom, phi)?)
}

/// `(1/V) int R log R dmu_0`.
pub fn entropy(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    let parts = admissible_parts(geom, phi)?;
    Ok(entropy_from(geom, &parts.r))
}

fn entropy_from(geom: &Geometry, r: &[f64]) -> f64 {
    let w = geom.weights();
    (0..geom.len())
        .map(|j| r[j] * r[j].ln() * w[j])
        .sum::<f64>()
        / geom.volume
}

/// Mabuchi functional `entropy - (1/V) int h dmu_phi - (I - J)`.
pub fn mabuchi_m(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<f64> {
    geom.check_len(&h.h)?;
    let parts = admissible_parts(geom, phi)?;
    let e = energy_from(geom, phi, &parts);
    Ok(mabuchi_from(geom, phi, h, &parts.r, e))
}

fn mabuchi_from(geom: &Geometry, phi: &[f64], h: &TwistDatum, r: &[f64], e: f64) -> f64 {
    let w = geom.weights();
    let mean0: f64 = (0..geom.len()).map(|j| phi[j] * w[j]).sum::<f64>() / geom.volume;
    let hphi: f64 = (0..geom.len()).map(|j| h.h[j] * r[j] * w[j]).sum::<f64>() / geom.volume;
    let i = i_from(geom, phi, r);
    let j = mean0 - e;
    entropy_from(geom, r) - hphi - (i - j)
}

/// Surrogate for `d_1(0, phi)`.
pub fn d1_proxy(geom: &Geometry, phi: &[f64]) -> Result<f64> {
    functional_j(geom, phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `phi - sup phi`
    Sup,
    /// `phi - (1/V) int phi dmu_0`
    Mean0,
    /// `phi - (1/V) int phi dmu_phi`
    MeanPhi,
    /// `phi` itself
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrability {
    pub alpha: f64,
    pub normalization: Normalization,
    /// Subtracted constant.
    pub reference: f64,
    pub value: f64,
    pub log: f64,
}

/// `(1/V) int exp(-alpha (phi - ref)) dmu_0`.
pub fn integrability(
    geom: &Geometry,
    phi: &[f64],
    alpha: f64,
    normalization: Normalization,
) -> Result<Integrability> {
    if !(alpha > 0.0) {
        return Err(Error::Usage(format!("exponent must be positive: {alpha}")));
    }
    geom.check_len(phi)?;
    let reference = match normalization {
        Normalization::Sup => argmax(phi).0,
        Normalization::Mean0 => geom.mean(phi, Measure::Reference)?,
        Normalization::MeanPhi => {
            let r = geom.volume_ratio(phi)?;
            geom.mean(phi, Measure::Phi(&r))?
        }
        Normalization::None => 0.0,
    };
    Ok(integrability_with(
        geom,
        phi,
        alpha,
        normalization,
        reference,
    ))
}

fn integrability_with(
    geom: &Geometry,
    phi: &[f64],
    alpha: f64,
    normalization: Normalization,
    reference: f64,
) -> Integrability {
    let v: Vec<f64> = phi.iter().map(|p| -alpha * (p - reference)).collect();
    let log = geom.log_mean_exp(&v);
    Integrability {
        alpha,
        normalization,
        reference,
        value: log.exp(),
        log,
    }
}

/// What to evaluate besides the fixed columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSettings {
    /// Exponents for the integrability columns.
    pub alphas: Vec<f64>,
    /// Exponents `p` for `(1/V) int e^{-p phi} dmu_0`.
    pub powers: Vec<f64>,
    /// Orders of the exact distances `d_p(0, phi)`.
    pub dp_orders: Vec<f64>,
    pub seed: u64,
}

impl Default for RecordSettings {
    fn default() -> Self {
        RecordSettings {
            alphas: vec![0.5, 0.95, 1.0],
            powers: vec![1.0, 2.0],
            dp_orders: vec![1.0, 2.0],
            seed: 0,
        }
    }
}

/// One time sample. The first twelve fields and the `ialpha` columns form the
/// fixed CSV prefix; the rest feed the monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalRecord {
    pub t: f64,
    pub c: f64,
    pub e: f64,
    pub i: f64,
    pub j: f64,
    pub f: f64,
    pub m: f64,
    pub sup: f64,
    pub inf: f64,
    pub osc: f64,
    pub entropy: f64,
    pub residual: f64,
    /// `(alpha, (1/V) int e^{-alpha (phi - sup phi)} dmu_0)`
    pub ialpha: Vec<(f64, f64)>,
    pub mean0: f64,
    pub meanphi: f64,
    pub min_rho: f64,
    /// `(1/V) int e^rho dmu_phi - 1`
    pub norm_defect: f64,
    /// `(1/V) int h dmu_phi`
    pub h_meanphi: f64,
    pub inf_h: f64,
    pub log_trace_max: f64,
    /// `-(1/V) int (e^rho - 1)^2 dmu_phi`
    pub fdot: f64,
    /// `-(1/V) int |d rho|^2 e^rho dmu_phi`
    pub mdot: f64,
    pub d1_proxy: f64,
    /// `(p, (1/V) int e^{-p phi} dmu_0)`
    pub ipow: Vec<(f64, f64)>,
    /// `(alpha, value)` with the reference-mean normalisation.
    pub imean0: Vec<(f64, f64)>,
    /// `(alpha, value)` with the `omega_phi`-mean normalisation.
    pub imeanphi: Vec<(f64, f64)>,
    /// `(p, d_p(0, phi))`
    pub dp: Vec<(f64, f64)>,
    /// Node where `phi` is smallest.
    pub argmin: usize,
    /// Log-slope of `phi` against distance around `argmin`.
    pub lelong: f64,
    pub lelong_spread: f64,
    pub steps: u64,
    pub rejected: u64,
}

/// Quantities shared by the record and the derivative identities.
#[derive(Debug, Clone)]
pub struct StateQuantities {
    pub e: f64,
    pub f: f64,
    pub m: f64,
    pub i: f64,
    pub j: f64,
    pub entropy: f64,
    pub mean0: f64,
    pub meanphi: f64,
    pub fdot: f64,
    pub mdot: f64,
    pub norm_defect: f64,
    pub h_meanphi: f64,
}

pub fn state_quantities(
    geom: &Geometry,
    h: &TwistDatum,
    state: &FlowState,
) -> Result<StateQuantities> {
    let phi = &state.phi;
    let parts = admissible_parts(geom, phi)?;
    let r = &parts.r;
    let e = energy_from(geom, phi, &parts);
    let mean0 = geom.mean(phi, Measure::Reference)?;
    let meanphi = geom.mean(phi, Measure::Phi(r))?;
    let i = i_from(geom, phi, r);
    let j = mean0 - e;
    let entropy = entropy_from(geom, r);
    let h_meanphi = geom.mean(&h.h, Measure::Phi(r))?;
    let m = entropy - h_meanphi - (i - j);
    let er: Vec<f64> = state.rho.iter().map(|x| x.exp()).collect();
    let sq: Vec<f64> = er.iter().map(|e| (e - 1.0).powi(2)).collect();
    let fdot = -geom.mean(&sq, Measure::Phi(r))?;
    let grad = geom.gradient_squared(&state.rho, &parts);
    let ge: Vec<f64> = grad.iter().zip(&er).map(|(g, e)| g * e).collect();
    let mdot = -geom.mean(&ge, Measure::Phi(r))?;
    let norm_defect = geom.mean(&er, Measure::Phi(r))? - 1.0;
    Ok(StateQuantities {
        e,
        f: state.c - e,
        m,
        i,
        j,
        entropy,
        mean0,
        meanphi,
        fdot,
        mdot,
        norm_defect,
        h_meanphi,
    })
}

impl FunctionalRecord {
    pub fn evaluate(
        geom: &Geometry,
        h: &TwistDatum,
        state: &FlowState,
        settings: &RecordSettings,
    ) -> Result<FunctionalRecord> {
        let phi = &state.phi;
        let q = state_quantities(geom, h, state)?;
        let parts = admissible_parts(geom, phi)?;
        let (sup, _) = argmax(phi);
        let (inf, imin) = argmin(phi);
        let residual = state
            .rho
            .iter()
            .map(|r| (1.0 - r.exp()).abs())
            .fold(0.0, f64::max);
        let ialpha = settings
            .alphas
            .iter()
            .map(|&a| {
                (
                    a,
                    integrability_with(geom, phi, a, Normalization::Sup, sup).value,
                )
            })
            .collect();
        let imean0 = settings
            .alphas
            .iter()
            .map(|&a| {
                (
                    a,
                    integrability_with(geom, phi, a, Normalization::Mean0, q.mean0).value,
                )
            })
            .collect();
        let imeanphi = settings
            .alphas
            .iter()
            .map(|&a| {
                (
                    a,
                    integrability_with(geom, phi, a, Normalization::MeanPhi, q.meanphi).value,
                )
            })
            .collect();
        let ipow = settings
            .powers
            .iter()
            .map(|&p| {
                (
                    p,
                    integrability_with(geom, phi, p, Normalization::None, 0.0).value,
                )
            })
            .collect();
        let trace = geom.trace_from(&parts);
        let log_trace_max = trace
            .iter()
            .map(|t| t.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let dp = if settings.dp_orders.is_empty() {
            Vec::new()
        } else {
            let zero = geodesics::DualProfile::reference(geom);
            let dual = geodesics::legendre_dual(geom, phi)?;
            settings
                .dp_orders
                .iter()
                .map(|&p| Ok((p, geodesics::dp_between_duals(geom, &zero, &dual, p)?)))
                .collect::<Result<Vec<_>>>()?
        };
        let (lelong, lelong_spread) =
            local_log_slope(geom, phi, imin, settings.seed ^ state.steps_taken);
        Ok(FunctionalRecord {
            t: state.t,
            c: state.c,
            e: q.e,
            i: q.i,
            j: q.j,
            f: q.f,
            m: q.m,
            sup,
            inf,
            osc: sup - inf,
            entropy: q.entropy,
            residual,
            ialpha,
            mean0: q.mean0,
            meanphi: q.meanphi,
            min_rho: argmin(&state.rho).0,
            norm_defect: q.norm_defect,
            h_meanphi: q.h_meanphi,
            inf_h: h.inf(),
            log_trace_max,
            fdot: q.fdot,
            mdot: q.mdot,
            d1_proxy: q.j,
            ipow,
            imean0,
            imeanphi,
            dp,
            argmin: imin,
            lelong,
            lelong_spread,
            steps: state.steps_taken,
            rejected: state.rejected_steps,
        })
    }
}

/// Nodes used on each side of the minimum for the log-slope fit.
const SLOPE_NEIGHBOURS: usize = 8;
const SLOPE_RESAMPLES: usize = 64;

/// Least-squares slope of `phi` against `log(angular distance)` near node `k`,
/// with a bootstrap standard deviation.
pub fn local_log_slope(geom: &Geometry, phi: &[f64], k: usize, seed: u64) -> (f64, f64) {
    let th = geom.cheb().angles();
    let pts: Vec<(f64, f64)> = (1..=SLOPE_NEIGHBOURS)
        .flat_map(|d| {
            [
                k.checked_sub(d),
                k.checked_add(d).filter(|&j| j < phi.len()),
            ]
        })
        .flatten()
        .map(|j| ((th[j] - th[k]).abs().ln(), phi[j]))
        .collect();
    let fit = |sample: &[(f64, f64)]| -> f64 {
        let n = sample.len() as f64;
        let mx = sample.iter().map(|p| p.0).sum::<f64>() / n;
        let my = sample.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = sample.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = sample.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let slope = fit(&pts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(SLOPE_RESAMPLES);
    let mut sample = vec![(0.0, 0.0); pts.len()];
    for _ in 0..SLOPE_RESAMPLES {
        for s in sample.iter_mut() {
            *s = pts[rng.gen_range(0..pts.len())];
        }
        draws.push(fit(&sample));
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    (slope, var.sqrt())
}

/// Defects of the time-derivative identities between two consecutive states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub dt: f64,
    /// `Delta E / dt` (theory: 0)
    pub e_rate: f64,
    /// `Delta F / dt + (1/V) int (e^rho - 1)^2 dmu_phi`
    pub f_defect: f64,
    /// `Delta M / dt + (1/V) int |d rho|^2 e^rho dmu_phi`
    pub m_defect: f64,
    /// `Delta c / dt` (theory: `<= 0`)
    pub c_rate: f64,
    pub delta_f: f64,
    pub delta_m: f64,
    pub delta_c: f64,
}

pub fn flow_derivative_identities(
    geom: &Geometry,
    h: &TwistDatum,
    state: &FlowState,
    next: &FlowState,
    dt: f64,
) -> Result<DerivativeReport> {
    if next.steps_taken != state.steps_taken + 1
        || ((next.t - state.t) - dt).abs() > 1e-12 * dt.max(1.0)
    {
        return Err(Error::Usage(format!(
            "states are not consecutive: steps {} -> {}, t {} -> {} with dt {}",
            state.steps_taken, next.steps_taken, state.t, next.t, dt
        )));
    }
    let a = state_quantities(geom, h, state)?;
    let b = state_quantities(geom, h, next)?;
    Ok(DerivativeReport {
        dt,
        e_rate: (b.e - a.e) / dt,
        f_defect: (b.f - a.f) / dt - a.fdot,
        m_defect: (b.m - a.m) / dt - a.mdot,
        c_rate: (next.c - state.c) / dt,
        delta_f: b.f - a.f,
        delta_m: b.m - a.m,
        delta_c: next.c - state.c,
    })
}

/// Second derivative of `F` along the flow as displayed for the weighted
/// measure `dmu = e^rho omega_phi^n`, with the mean of `e^rho - 1` taken
/// with the same `(1/V)` factor.
pub fn f_second_derivative(geom: &Geometry, state: &FlowState) -> Result<f64> {
    let parts = admissible_parts(geom, &state.phi)?;
    let w: Vec<f64> = state
        .rho
        .iter()
        .zip(&parts.r)
        .map(|(p, r)| p.exp() * r)
        .collect();
    let u: Vec<f64> = state.rho.iter().map(|p| p.exp() - 1.0).collect();
    let mean = geom.mean(&u, Measure::Phi(&w))?;
    let ft: Vec<f64> = u.iter().map(|v| v - mean).collect();
    let grad = geom.gradient_squared(&ft, &parts);
    let integrand: Vec<f64> = grad.iter().zip(&ft).map(|(g, f)| g - f * f).collect();
    Ok(2.0 * geom.mean(&integrand, Measure::Phi(&w))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub min_second_difference: f64,
    pub violations: Vec<(f64, f64)>,
    /// `c(t) - c(0) - t c'(0)` minimum over the samples.
    pub tangent_slack: f64,
}

/// Discrete convexity of `F` from equally spaced samples `(t, F, c)`;
/// `cdot0` is the exact initial slope of `c`.
pub fn f_convexity_check(
    samples: &[(f64, f64, f64)],
    cdot0: f64,
    tolerance: f64,
) -> Result<ConvexityReport> {
    if samples.len() < 3 {
        return Err(Error::Usage("need at least three samples".into()));
    }
    let h0 = samples[1].0 - samples[0].0;
    for w in samples.windows(2) {
        let hk = w[1].0 - w[0].0;
        if (hk - h0).abs() > 1e-9 * h0.abs().max(1.0) {
            return Err(Error::Usage(format!(
                "samples are not equally spaced near t = {}",
                w[0].0
            )));
        }
    }
    let mut min_sd = f64::INFINITY;
    let mut violations = Vec::new();
    for w in samples.windows(3) {
        let sd = w[2].1 - 2.0 * w[1].1 + w[0].1;
        min_sd = min_sd.min(sd);
        if sd < -tolerance {
            violations.push((w[1].0, sd));
        }
    }
    let (t0, _, c0) = samples[0];
    let tangent_slack = samples
        .iter()
        .map(|(t, _, c)| c - c0 - (t - t0) * cdot0)
        .fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        min_second_difference: min_sd,
        violations,
        tangent_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_sphere_geometry;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(31)).sum();
        assert!((s - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn constants() {
        let g = build_sphere_geometry(0.5, 64).unwrap();
        let h = TwistDatum::zero(&g);
        let phi = vec![1.7; g.len()];
        assert!((energy_e(&g, &phi).unwrap() - 1.7).abs() < 1e-12);
        assert!(functional_i(&g, &phi).unwrap().abs() < 1e-12);
        assert!(functional_j(&g, &phi).unwrap().abs() < 1e-12);
        assert!(functional_f(&g, &phi, &h).unwrap().abs() < 1e-12);
        assert!(mabuchi_m(&g, &phi, &h).unwrap().abs() < 1e-12);
        let ig = integrability(&g, &phi, 0.7, Normalization::Sup).unwrap();
        assert!((ig.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convexity_check_needs_three_samples() {
        assert!(f_convexity_check(&[(0.0, 1.0, 0.0), (1.0, 0.5, 0.0)], 0.0, 1e-6).is_err());
        let r = f_convexity_check(
            &[(0.0, 1.0, 0.0), (1.0, 0.5, 0.0), (2.0, 0.1, 0.0)],
            0.0,
            1e-6,
        )
        .unwrap();
        assert!(r.violations.is_empty());
        assert!((r.min_second_difference - 0.1).abs() < 1e-12);
    }
}
