//! Time integration of `phi_t = 1 - e^rho`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{energy_e, FunctionalRecord, RecordSettings};
use crate::geometry::{argmax, check_admissible, Geometry, Ratio, TwistDatum};

/// RKC damping parameter.
const RKC_DAMPING: f64 = 2.0 / 13.0;
/// Safety factor on the spectral radius estimate.
const STIFFNESS_SAFETY: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Second-order Runge–Kutta–Chebyshev with stage count set by the stiffness.
    Rkc,
    /// Classical RK4, sub-stepped to stay inside its stability interval.
    Rk4,
    /// Forward Euler, sub-stepped likewise.
    Euler,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rkc => "rkc",
            Scheme::Rk4 => "rk4",
            Scheme::Euler => "euler",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub phi: Vec<f64>,
    pub c: f64,
    pub rho: Vec<f64>,
    pub r: Vec<f64>,
    pub steps_taken: u64,
    pub rejected_steps: u64,
}

impl FlowState {
    pub fn new(geom: &Geometry, h: &TwistDatum, phi: Vec<f64>, t: f64) -> Result<FlowState> {
        let ev = evaluate(geom, &phi, h)?;
        Ok(FlowState {
            t,
            phi,
            c: ev.c,
            rho: ev.rho,
            r: ev.parts.r,
            steps_taken: 0,
            rejected_steps: 0,
        })
    }

    pub fn residual(&self) -> f64 {
        self.rho
            .iter()
            .map(|r| (1.0 - r.exp()).abs())
            .fold(0.0, f64::max)
    }
}

/// Everything computed by one right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rhs: Vec<f64>,
    pub rho: Vec<f64>,
    pub c: f64,
    pub parts: Ratio,
}

/// `c = -log((1/V) int e^{h - phi} dmu_0)`.
pub fn normalizing_constant(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<f64> {
    geom.check_len(phi)?;
    geom.check_len(&h.h)?;
    let v: Vec<f64> = h.h.iter().zip(phi).map(|(h, p)| h - p).collect();
    Ok(-geom.log_mean_exp(&v))
}

pub fn evaluate(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<Evaluation> {
    let c = normalizing_constant(geom, phi, h)?;
    let parts = geom.ratio(phi)?;
    check_admissible(&parts)?;
    let rho: Vec<f64> = (0..geom.len())
        .map(|j| h.h[j] - phi[j] + c - parts.r[j].ln())
        .collect();
    let rhs = rho.iter().map(|r| -r.exp_m1()).collect();
    Ok(Evaluation { rhs, rho, c, parts })
}

/// `rho = h - phi + c - log R`.
pub fn ricci_potential(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<Vec<f64>> {
    Ok(evaluate(geom, phi, h)?.rho)
}

/// `1 - e^rho`.
pub fn flow_rhs(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<Vec<f64>> {
    Ok(evaluate(geom, phi, h)?.rhs)
}

/// `sup |1 - e^rho|`.
pub fn fixed_point_residual(geom: &Geometry, phi: &[f64], h: &TwistDatum) -> Result<f64> {
    Ok(evaluate(geom, phi, h)?
        .rhs
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max))
}

/// Upper estimate of the spectral radius of the linearised right-hand side.
pub fn stiffness(geom: &Geometry, ev: &Evaluation) -> f64 {
    let p = &ev.parts;
    let mut fac: f64 = 0.0;
    let mut emax: f64 = 0.0;
    for j in 0..geom.len() {
        let e = ev.rho[j].exp();
        emax = emax.max(e);
        let local = if geom.n == 1 {
            e / p.r[j]
        } else {
            let first = if j == 0 {
                1.0 + p.dphi[0]
            } else {
                p.g[j] / geom.moment[j]
            };
            e * (1.0 / p.gx[j]).max(1.0 / first)
        };
        fac = fac.max(local);
    }
    STIFFNESS_SAFETY * (fac * geom.operator_radius() + 2.0 * emax)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub scheme: Scheme,
    pub dt_floor: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            scheme: Scheme::Rkc,
            dt_floor: 1e-8,
        }
    }
}

/// Advances one step of size `dt`. A step whose stages leave the admissible
/// set is replaced by two half steps, recursively, down to `dt_floor`.
pub fn step(
    geom: &Geometry,
    h: &TwistDatum,
    state: &FlowState,
    dt: f64,
    opts: &StepOptions,
) -> Result<FlowState> {
    if !(dt > 0.0) {
        return Err(Error::Usage(format!("time step must be positive: {dt}")));
    }
    let mut rejected = 0;
    let phi = advance(geom, h, &state.phi, state.t, dt, opts, &mut rejected)?;
    let ev = evaluate(geom, &phi, h)?;
    Ok(FlowState {
        t: state.t + dt,
        phi,
        c: ev.c,
        rho: ev.rho,
        r: ev.parts.r,
        steps_taken: state.steps_taken + 1,
        rejected_steps: state.rejected_steps + rejected,
    })
}

fn advance(
    geom: &Geometry,
    h: &TwistDatum,
    phi: &[f64],
    t: f64,
    dt: f64,
    opts: &StepOptions,
    rejected: &mut u64,
) -> Result<Vec<f64>> {
    let attempt = single_step(geom, h, phi, dt, opts.scheme)
        .and_then(|next| evaluate(geom, &next, h).map(|_| next));
    match attempt {
        Ok(next) => Ok(next),
        Err(Error::Inadmissible { min_r, node }) => {
            *rejected += 1;
            let half = 0.5 * dt;
            if half < opts.dt_floor {
                return Err(Error::IntegrationFailure { t, min_r, node });
            }
            let mid = advance(geom, h, phi, t, half, opts, rejected)?;
            advance(geom, h, &mid, t + half, half, opts, rejected)
        }
        Err(e) => Err(e),
    }
}

fn single_step(
    geom: &Geometry,
    h: &TwistDatum,
    phi: &[f64],
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<f64>> {
    let ev0 = evaluate(geom, phi, h)?;
    let sprad = stiffness(geom, &ev0);
    match scheme {
        Scheme::Rkc => rkc_step(geom, h, phi, ev0.rhs, dt, sprad),
        Scheme::Rk4 => {
            let k = substeps(dt * sprad, 2.78);
            let sub = dt / k as f64;
            let mut y = phi.to_vec();
            let mut f0 = ev0.rhs;
            for i in 0..k {
                if i > 0 {
                    f0 = evaluate(geom, &y, h)?.rhs;
                }
                y = rk4_step(geom, h, &y, &f0, sub)?;
            }
            Ok(y)
        }
        Scheme::Euler => {
            let k = substeps(dt * sprad, 2.0);
            let sub = dt / k as f64;
            let mut y = phi.to_vec();
            let mut f = ev0.rhs;
            for i in 0..k {
                if i > 0 {
                    f = evaluate(geom, &y, h)?.rhs;
                }
                axpy(&mut y, sub, &f);
            }
            Ok(y)
        }
    }
}

fn substeps(z: f64, limit: f64) -> usize {
    ((z / limit).ceil() as usize).max(1)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn rk4_step(geom: &Geometry, h: &TwistDatum, y: &[f64], k1: &[f64], dt: f64) -> Result<Vec<f64>> {
    let stage =
        |k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + c * dt * k).collect() };
    let k2 = evaluate(geom, &stage(k1, 0.5), h)?.rhs;
    let k3 = evaluate(geom, &stage(&k2, 0.5), h)?.rhs;
    let k4 = evaluate(geom, &stage(&k3, 1.0), h)?.rhs;
    Ok((0..y.len())
        .map(|j| y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect())
}

/// Number of RKC stages for `dt * sprad`.
pub fn rkc_stages(z: f64) -> usize {
    (1 + (1.0 + 1.54 * z).sqrt().floor() as usize).max(2)
}

fn rkc_step(
    geom: &Geometry,
    h: &TwistDatum,
    y0: &[f64],
    f0: Vec<f64>,
    dt: f64,
    sprad: f64,
) -> Result<Vec<f64>> {
    let s = rkc_stages(dt * sprad);
    let sf = s as f64;
    let w0 = 1.0 + RKC_DAMPING / (sf * sf);
    // Chebyshev polynomials and derivatives at w0
    let mut t = vec![0.0; s + 1];
    let mut tp = vec![0.0; s + 1];
    let mut tpp = vec![0.0; s + 1];
    t[0] = 1.0;
    t[1] = w0;
    tp[1] = 1.0;
    for j in 2..=s {
        t[j] = 2.0 * w0 * t[j - 1] - t[j - 2];
        tp[j] = 2.0 * t[j - 1] + 2.0 * w0 * tp[j - 1] - tp[j - 2];
        tpp[j] = 4.0 * tp[j - 1] + 2.0 * w0 * tpp[j - 1] - tpp[j - 2];
    }
    let w1 = tp[s] / tpp[s];
    let mut b = vec![0.0; s + 1];
    for j in 2..=s {
        b[j] = tpp[j] / (tp[j] * tp[j]);
    }
    b[0] = b[2];
    b[1] = b[2];
    let a: Vec<f64> = (0..=s).map(|j| 1.0 - b[j] * t[j]).collect();

    let mut prev2 = y0.to_vec();
    let mut prev1: Vec<f64> = y0
        .iter()
        .zip(&f0)
        .map(|(y, f)| y + b[1] * w1 * dt * f)
        .collect();
    for j in 2..=s {
        let mu = 2.0 * b[j] * w0 / b[j - 1];
        let nu = -b[j] / b[j - 2];
        let mut_ = 2.0 * b[j] * w1 / b[j - 1];
        let gt = -a[j - 1] * mut_;
        let fj = evaluate(geom, &prev1, h)?.rhs;
        let next: Vec<f64> = (0..y0.len())
            .map(|k| {
                (1.0 - mu - nu) * y0[k]
                    + mu * prev1[k]
                    + nu * prev2[k]
                    + mut_ * dt * fj[k]
                    + gt * dt * f0[k]
            })
            .collect();
        prev2 = std::mem::replace(&mut prev1, next);
    }
    Ok(prev1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSettings {
    pub dt: f64,
    pub dt_floor: f64,
    pub t_max: f64,
    pub residual_threshold: f64,
    pub scheme: Scheme,
    pub sample_every: u64,
    pub checkpoint_every: u64,
    /// Shift `phi` by a constant after every step so that `E` keeps its initial value.
    pub project_energy: bool,
    pub record: RecordSettings,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            dt: 1e-2,
            dt_floor: 1e-8,
            t_max: 50.0,
            residual_threshold: 1e-6,
            scheme: Scheme::Rkc,
            sample_every: 1,
            checkpoint_every: 500,
            project_energy: true,
            record: RecordSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cause", rename_all = "kebab-case")]
pub enum Termination {
    TMax,
    Residual,
    Failure { t: f64, min_r: f64, node: usize },
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::TMax => "t_max",
            Termination::Residual => "residual",
            Termination::Failure { .. } => "failure",
        }
    }
}

/// Restartable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub c: f64,
    pub phi: Vec<f64>,
    pub steps_taken: u64,
    pub rejected_steps: u64,
    /// Accumulated energy-projection shift.
    pub energy_shift: f64,
}

impl Snapshot {
    pub fn of(state: &FlowState, energy_shift: f64) -> Snapshot {
        Snapshot {
            t: state.t,
            c: state.c,
            phi: state.phi.clone(),
            steps_taken: state.steps_taken,
            rejected_steps: state.rejected_steps,
            energy_shift,
        }
    }

    pub fn state(&self, geom: &Geometry, h: &TwistDatum) -> Result<FlowState> {
        let mut s = FlowState::new(geom, h, self.phi.clone(), self.t)?;
        s.steps_taken = self.steps_taken;
        s.rejected_steps = self.rejected_steps;
        Ok(s)
    }
}

/// Receives samples and checkpoints while a run progresses.
pub trait TrajectorySink {
    fn record(&mut self, record: &FunctionalRecord) -> Result<()>;
    fn checkpoint(&mut self, snapshot: &Snapshot) -> Result<()>;
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub records: Vec<FunctionalRecord>,
    pub checkpoints: Vec<Snapshot>,
    pub termination: Option<Termination>,
    pub energy_shift: f64,
}

impl TrajectorySink for Trajectory {
    fn record(&mut self, record: &FunctionalRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn checkpoint(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.checkpoints.push(snapshot.clone());
        Ok(())
    }
}

/// Runs from `phi0` at `t = 0`; an inadmissible `phi0` is rejected up front.
pub fn run_flow(
    geom: &Geometry,
    h: &TwistDatum,
    phi0: &[f64],
    settings: &FlowSettings,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    let outcome = run_flow_into(geom, h, phi0, settings, &mut traj)?;
    traj.termination = Some(outcome.termination);
    traj.energy_shift = outcome.energy_shift;
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub termination: Termination,
    pub final_state: FlowState,
    pub energy_shift: f64,
}

pub fn run_flow_into(
    geom: &Geometry,
    h: &TwistDatum,
    phi0: &[f64],
    settings: &FlowSettings,
    sink: &mut dyn TrajectorySink,
) -> Result<RunOutcome> {
    validate_settings(settings)?;
    let state = FlowState::new(geom, h, phi0.to_vec(), 0.0)?;
    let e0 = energy_e(geom, phi0)?;
    sink.record(&FunctionalRecord::evaluate(
        geom,
        h,
        &state,
        &settings.record,
    )?)?;
    if settings.checkpoint_every > 0 {
        sink.checkpoint(&Snapshot::of(&state, 0.0))?;
    }
    continue_flow(geom, h, state, e0, 0.0, settings, sink)
}

/// Continues from a checkpoint; samples after the checkpoint are reproduced exactly.
pub fn resume_flow(
    geom: &Geometry,
    h: &TwistDatum,
    phi0: &[f64],
    snapshot: &Snapshot,
    settings: &FlowSettings,
    sink: &mut dyn TrajectorySink,
) -> Result<RunOutcome> {
    validate_settings(settings)?;
    let e0 = energy_e(geom, phi0)?;
    let state = snapshot.state(geom, h)?;
    continue_flow(geom, h, state, e0, snapshot.energy_shift, settings, sink)
}

fn validate_settings(s: &FlowSettings) -> Result<()> {
    let mut problems = Vec::new();
    if !(s.dt > 0.0) {
        problems.push(format!("dt must be positive: {}", s.dt));
    }
    if !(s.dt_floor > 0.0 && s.dt_floor <= s.dt) {
        problems.push(format!("dt_floor must lie in (0, dt]: {}", s.dt_floor));
    }
    if !(s.t_max >= 0.0) {
        problems.push(format!("t_max must be nonnegative: {}", s.t_max));
    }
    if s.sample_every == 0 {
        problems.push("sample_every must be at least 1".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

fn continue_flow(
    geom: &Geometry,
    h: &TwistDatum,
    mut state: FlowState,
    e0: f64,
    mut energy_shift: f64,
    settings: &FlowSettings,
    sink: &mut dyn TrajectorySink,
) -> Result<RunOutcome> {
    let total = (settings.t_max / settings.dt).round() as u64;
    let opts = StepOptions {
        scheme: settings.scheme,
        dt_floor: settings.dt_floor,
    };
    let termination = loop {
        if state.residual() < settings.residual_threshold && state.steps_taken > 0 {
            break Termination::Residual;
        }
        if state.steps_taken >= total {
            break Termination::TMax;
        }
        let mut next = match step(geom, h, &state, settings.dt, &opts) {
            Ok(s) => s,
            Err(Error::IntegrationFailure { t, min_r, node }) => {
                break Termination::Failure { t, min_r, node };
            }
            Err(e) => return Err(e),
        };
        next.t = next.steps_taken as f64 * settings.dt;
        if settings.project_energy {
            let shift = e0 - energy_e(geom, &next.phi)?;
            if shift != 0.0 {
                // rebuild from phi alone so that a resumed run sees identical bits
                let phi: Vec<f64> = next.phi.iter().map(|p| p + shift).collect();
                let (steps, rejected) = (next.steps_taken, next.rejected_steps);
                next = FlowState::new(geom, h, phi, next.t)?;
                next.steps_taken = steps;
                next.rejected_steps = rejected;
                energy_shift += shift;
            }
        }
        state = next;
        let k = state.steps_taken;
        let last = k >= total || state.residual() < settings.residual_threshold;
        if k % settings.sample_every == 0 || last {
            sink.record(&FunctionalRecord::evaluate(
                geom,
                h,
                &state,
                &settings.record,
            )?)?;
        }
        if settings.checkpoint_every > 0 && k % settings.checkpoint_every == 0 {
            sink.checkpoint(&Snapshot::of(&state, energy_shift))?;
        }
    };
    Ok(RunOutcome {
        termination,
        final_state: state,
        energy_shift,
    })
}

/// `sup phi`, for the discrete form of `phi <= t + A_1`.
pub fn sup(phi: &[f64]) -> f64 {
    argmax(phi).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_sphere_geometry;

    #[test]
    fn fixed_point_is_exact() {
        let g = build_sphere_geometry(0.5, 64).unwrap();
        let h = TwistDatum::zero(&g);
        let s = FlowState::new(&g, &h, vec![0.0; g.len()], 0.0).unwrap();
        for scheme in [Scheme::Rkc, Scheme::Rk4, Scheme::Euler] {
            let n = step(
                &g,
                &h,
                &s,
                0.1,
                &StepOptions {
                    scheme,
                    dt_floor: 1e-6,
                },
            )
            .unwrap();
            assert!(n.phi.iter().all(|p| p.abs() < 1e-15));
        }
    }

    #[test]
    fn rkc_stage_count_grows_with_stiffness() {
        assert_eq!(rkc_stages(0.0), 2);
        assert!(rkc_stages(1e4) > rkc_stages(1e2));
        let s = rkc_stages(1e4) as f64;
        // stability interval of damped RKC is about 0.65 s^2
        assert!(0.65 * s * s >= 1e4);
    }
}
