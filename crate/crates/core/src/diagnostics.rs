//! Monitors over stored trajectories. Every monitor is a pure function of
//! the functional records, so rerunning it on a saved CSV gives the same report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::FunctionalRecord;
use crate::geodesics::{classify_growth, GrowthClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    HoldsWithFittedConstant,
    Violated,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Converging,
    Diverging,
    Undecided,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Converging => "converging",
            Classification::Diverging => "diverging",
            Classification::Undecided => "undecided",
        }
    }
}

/// One inequality evaluated at every sample; slack `>= -tolerance` means it holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub slacks: Vec<f64>,
    pub min_slack: f64,
    pub worst_t: f64,
    pub tolerance: f64,
    pub holds: bool,
}

impl Check {
    pub fn new(name: &str, times: &[f64], slacks: Vec<f64>, tolerance: f64) -> Check {
        let mut min_slack = f64::INFINITY;
        let mut worst_t = f64::NAN;
        for (t, s) in times.iter().zip(&slacks) {
            if *s < min_slack || s.is_nan() {
                min_slack = *s;
                worst_t = *t;
            }
        }
        let holds = slacks.iter().all(|s| *s >= -tolerance);
        Check {
            name: name.to_string(),
            slacks,
            min_slack,
            worst_t,
            tolerance,
            holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub monitor: String,
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub constants: BTreeMap<String, f64>,
    pub fit_residuals: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl MonitorReport {
    fn from_checks(
        monitor: &str,
        checks: Vec<Check>,
        constants: BTreeMap<String, f64>,
    ) -> MonitorReport {
        let verdict = if checks.iter().all(|c| c.holds) {
            Verdict::Holds
        } else {
            Verdict::Violated
        };
        MonitorReport {
            monitor: monitor.to_string(),
            verdict,
            checks,
            constants,
            fit_residuals: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

/// Tolerances and thresholds shared by the monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Slack tolerance for the a priori, c-sandwich and alpha inequalities.
    pub slack: f64,
    /// Slack tolerance for the lower bound on the phi-mean.
    pub mean_bound: f64,
    /// Growth needs a slope larger than this many standard errors.
    pub growth_sigma: f64,
    /// ... and larger than this absolute rate per unit time.
    pub min_slope: f64,
    /// Integral value counted as blown up.
    pub blowup: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            slack: 1e-6,
            mean_bound: 1e-8,
            growth_sigma: 3.0,
            min_slope: 1e-3,
            blowup: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub slope_se: f64,
    /// Root mean square residual.
    pub rms: f64,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len().min(y.len());
    let nf = n as f64;
    if n == 0 {
        return LinearFit {
            slope: 0.0,
            intercept: 0.0,
            slope_se: 0.0,
            rms: 0.0,
        };
    }
    let mx = x[..n].iter().sum::<f64>() / nf;
    let my = y[..n].iter().sum::<f64>() / nf;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_se = if n > 2 && sxx > 0.0 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
        rms: (sse / nf).sqrt(),
    }
}

fn column(records: &[FunctionalRecord], f: impl Fn(&FunctionalRecord) -> f64) -> Vec<f64> {
    records.iter().map(f).collect()
}

fn lookup(pairs: &[(f64, f64)], key: f64) -> Option<f64> {
    pairs
        .iter()
        .find(|(k, _)| (k - key).abs() <= 1e-12 * key.abs().max(1.0))
        .map(|(_, v)| *v)
}

fn require(records: &[FunctionalRecord], min: usize, monitor: &str) -> Result<()> {
    if records.len() < min {
        return Err(Error::Usage(format!(
            "{monitor} needs at least {min} samples, got {}",
            records.len()
        )));
    }
    Ok(())
}

/// `sup phi <= t + sup phi_0`, `min rho >= -t + c(t) + A_2`, the phi-mean
/// bound and the c-sandwich, with the constants taken from the first record.
pub fn apriori_monitor(
    n: usize,
    records: &[FunctionalRecord],
    th: &Thresholds,
) -> Result<MonitorReport> {
    require(records, 2, "apriori monitor")?;
    let r0 = &records[0];
    let nf = n as f64;
    let t = column(records, |r| r.t);
    let a1 = r0.sup;
    let a2 = r0.min_rho - r0.c;
    let cdot0 = r0.fdot;
    let e0 = r0.e;
    let sup_bound = column(records, |r| a1 + (r.t - r0.t) - r.sup);
    let rho_bound = column(records, |r| r.min_rho - (-(r.t - r0.t) + r.c + a2));
    let mean_bound = column(records, |r| nf * r.sup - (nf + 1.0) * e0 + r.meanphi);
    let c_lower = column(records, |r| r.c - (r0.c + (r.t - r0.t) * cdot0));
    let c_upper = column(records, |r| r.sup - r.inf_h - r.c);
    let checks = vec![
        Check::new("sup-bound", &t, sup_bound, th.slack),
        Check::new("rho-lower-bound", &t, rho_bound, th.slack),
        Check::new("mean-bound", &t, mean_bound, th.mean_bound),
        Check::new("c-tangent", &t, c_lower, th.slack),
        Check::new("c-ceiling", &t, c_upper, th.slack),
    ];
    let constants = BTreeMap::from([
        ("A1".to_string(), a1),
        ("A2".to_string(), a2),
        ("cdot0".to_string(), cdot0),
        ("E0".to_string(), e0),
    ]);
    Ok(MonitorReport::from_checks("apriori", checks, constants))
}

/// `((n+1) alpha - n) sup phi + (n+1)(1 - alpha) E(phi_0)
///   <= M(phi_0) - F + (1/V) int h dmu_phi + c + log (1/V) int e^{-alpha (phi - sup phi)} dmu_0`.
pub fn alpha_monitor(
    n: usize,
    records: &[FunctionalRecord],
    alphas: &[f64],
    th: &Thresholds,
) -> Result<MonitorReport> {
    require(records, 1, "alpha monitor")?;
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Usage(format!("alpha must be positive: {a}")));
    }
    let r0 = &records[0];
    let nf = n as f64;
    let t = column(records, |r| r.t);
    let mut checks = Vec::new();
    let mut constants = BTreeMap::new();
    let mut notes = Vec::new();
    for &alpha in alphas {
        let mut slacks = Vec::with_capacity(records.len());
        let mut ceiling = f64::NEG_INFINITY;
        for r in records {
            let value = lookup(&r.ialpha, alpha).ok_or_else(|| {
                Error::Usage(format!(
                    "records lack the ialpha column for alpha = {alpha}"
                ))
            })?;
            let rhs = (r0.m - r.f) + r.h_meanphi + r.c + value.ln();
            let coeff = (nf + 1.0) * alpha - nf;
            let lhs = coeff * r.sup + (nf + 1.0) * (1.0 - alpha) * r0.e;
            slacks.push(rhs - lhs);
            if coeff > 0.0 {
                ceiling = ceiling.max((rhs - (nf + 1.0) * (1.0 - alpha) * r0.e) / coeff);
            }
        }
        if alpha > 1.0 {
            notes.push(format!(
                "alpha = {alpha} exceeds 1; the inequality is only derived for alpha <= 1"
            ));
        }
        if ceiling.is_finite() {
            let observed = records
                .iter()
                .map(|r| r.sup)
                .fold(f64::NEG_INFINITY, f64::max);
            constants.insert(format!("sup_ceiling_{alpha}"), ceiling);
            constants.insert(format!("sup_observed_{alpha}"), observed);
        }
        checks.push(Check::new(&format!("alpha_{alpha}"), &t, slacks, th.slack));
    }
    let mut report = MonitorReport::from_checks("alpha", checks, constants);
    report.notes = notes;
    Ok(report)
}

/// Fit of `||phi||_C0 <= M (t + 1)` and a tail test on the ratio.
pub fn linear_growth_monitor(
    records: &[FunctionalRecord],
    th: &Thresholds,
) -> Result<MonitorReport> {
    require(records, 10, "linear growth monitor")?;
    let t = column(records, |r| r.t);
    let norm = column(records, |r| r.sup.abs().max(r.inf.abs()));
    let sxy: f64 = t.iter().zip(&norm).map(|(t, y)| (t + 1.0) * y).sum();
    let sxx: f64 = t.iter().map(|t| (t + 1.0).powi(2)).sum();
    let m_fit = sxy / sxx;
    let rms = (t
        .iter()
        .zip(&norm)
        .map(|(t, y)| (y - m_fit * (t + 1.0)).powi(2))
        .sum::<f64>()
        / t.len() as f64)
        .sqrt();
    let ratio: Vec<f64> = t.iter().zip(&norm).map(|(t, y)| y / (t + 1.0)).collect();
    let max_ratio = ratio.iter().cloned().fold(0.0, f64::max);
    let k = tail_start(t.len());
    let tail = least_squares(&t[k..], &ratio[k..]);
    let non_increasing =
        !(tail.slope > th.growth_sigma * tail.slope_se && tail.slope > th.min_slope);
    let verdict = if m_fit.is_finite() && non_increasing {
        Verdict::HoldsWithFittedConstant
    } else {
        Verdict::Undecided
    };
    let checks = vec![Check::new(
        "ratio-below-max",
        &t,
        ratio.iter().map(|r| max_ratio - r).collect(),
        0.0,
    )];
    Ok(MonitorReport {
        monitor: "linear-growth".into(),
        verdict,
        checks,
        constants: BTreeMap::from([
            ("M".to_string(), m_fit),
            ("max_ratio".to_string(), max_ratio),
            ("tail_ratio_slope".to_string(), tail.slope),
            ("tail_ratio_slope_se".to_string(), tail.slope_se),
        ]),
        fit_residuals: BTreeMap::from([("M".to_string(), rms)]),
        notes: if non_increasing {
            Vec::new()
        } else {
            vec!["ratio ||phi||/(t+1) still increasing over the last third".into()]
        },
    })
}

fn tail_start(n: usize) -> usize {
    n - (n / 3).max(2).min(n)
}

/// `max log Tr <= C + A osc + t - inf phi` with `A = 1` and `C` fitted on the
/// first half of the samples, then checked on all of them.
pub fn trace_monitor(records: &[FunctionalRecord], th: &Thresholds) -> Result<MonitorReport> {
    require(records, 2, "trace monitor")?;
    let a = 1.0;
    let t = column(records, |r| r.t);
    let excess = column(records, |r| r.log_trace_max - a * r.osc - r.t + r.inf);
    let half = records.len().div_ceil(2);
    let c = excess[..half]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let slacks = excess.iter().map(|e| c - e).collect();
    let check = Check::new("trace", &t, slacks, th.slack);
    let verdict = if check.holds {
        Verdict::HoldsWithFittedConstant
    } else {
        Verdict::Violated
    };
    Ok(MonitorReport {
        monitor: "trace".into(),
        verdict,
        checks: vec![check],
        constants: BTreeMap::from([("A".to_string(), a), ("C".to_string(), c)]),
        fit_residuals: BTreeMap::new(),
        notes: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Indicator {
    pub item: usize,
    pub name: String,
    pub slope: f64,
    pub slope_se: f64,
    pub growing: bool,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub classification: Classification,
    pub indicators: Vec<Indicator>,
    /// All nine indicators give the same answer.
    pub agreement: bool,
    pub residual_decreasing: bool,
    pub notes: Vec<String>,
}

/// Tail growth of the nine boundedness indicators.
pub fn convergence_classifier(
    n: usize,
    records: &[FunctionalRecord],
    th: &Thresholds,
) -> Result<ClassifierReport> {
    require(records, 3, "classifier")?;
    let threshold = n as f64 / (n as f64 + 1.0);
    let r0 = &records[0];
    let power = r0
        .ipow
        .iter()
        .map(|p| p.0)
        .filter(|p| *p > 1.0)
        .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.min(p))))
        .ok_or_else(|| Error::Usage("records lack an ipow column with p > 1".into()))?;
    let alpha = r0
        .ialpha
        .iter()
        .map(|p| p.0)
        .filter(|a| *a > threshold)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))))
        .ok_or_else(|| {
            Error::Usage(format!(
                "records lack an ialpha column with alpha > {threshold}"
            ))
        })?;
    let d1_available = lookup(&r0.dp, 1.0).is_some();
    if lookup(&r0.dp, 2.0).is_none() {
        return Err(Error::Usage("records lack the d2 column".into()));
    }
    let get = |pairs: &[(f64, f64)], k: f64| lookup(pairs, k).unwrap_or(f64::NAN);
    let series: Vec<(usize, String, Vec<f64>)> = vec![
        (1, "sup".into(), column(records, |r| r.sup)),
        (2, "mean0".into(), column(records, |r| r.mean0)),
        (
            3,
            if d1_available {
                "d1".into()
            } else {
                "J".into()
            },
            column(
                records,
                |r| if d1_available { get(&r.dp, 1.0) } else { r.j },
            ),
        ),
        (4, "I".into(), column(records, |r| r.i)),
        (
            5,
            format!("log_ipow_{power}"),
            column(records, |r| get(&r.ipow, power).ln()),
        ),
        (
            6,
            format!("log_ialpha_{alpha}"),
            column(records, |r| get(&r.ialpha, alpha).ln()),
        ),
        (7, "osc".into(), column(records, |r| r.osc)),
        (8, "minus_inf".into(), column(records, |r| -r.inf)),
        (9, "d2".into(), column(records, |r| get(&r.dp, 2.0))),
    ];
    let t = column(records, |r| r.t);
    let k = tail_start(t.len());
    let mut indicators = Vec::new();
    let mut notes = Vec::new();
    for (item, name, y) in series {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage(format!(
                "indicator {name} has non-finite values"
            )));
        }
        let fit = least_squares(&t[k..], &y[k..]);
        let growing = fit.slope > th.growth_sigma * fit.slope_se && fit.slope > th.min_slope;
        indicators.push(Indicator {
            item,
            name,
            slope: fit.slope,
            slope_se: fit.slope_se,
            growing,
            last: *y.last().unwrap_or(&f64::NAN),
        });
    }
    let j_growing = {
        let y = column(records, |r| r.j);
        let fit = least_squares(&t[k..], &y[k..]);
        fit.slope > th.growth_sigma * fit.slope_se && fit.slope > th.min_slope
    };
    if d1_available && j_growing != indicators[2].growing {
        notes.push("J proxy and exact d1 disagree on growth".into());
    }
    let first = records[0].residual;
    let last = records[records.len() - 1].residual;
    let residual_decreasing = last <= first;
    let any = indicators.iter().any(|i| i.growing);
    let all = indicators.iter().all(|i| i.growing);
    let classification = if any {
        Classification::Diverging
    } else if residual_decreasing {
        Classification::Converging
    } else {
        Classification::Undecided
    };
    Ok(ClassifierReport {
        classification,
        agreement: all || !any,
        indicators,
        residual_decreasing,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupSeries {
    pub alpha: f64,
    /// `log (1/V) int e^{-alpha psi_t} dmu_0` per sample.
    pub log_values: Vec<f64>,
    pub class: GrowthClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub explanation: String,
    pub times: Vec<f64>,
    pub mean0: Vec<BlowupSeries>,
    pub meanphi: Vec<BlowupSeries>,
    /// Least alpha whose integral exceeds the threshold, per sample.
    pub alpha_crit_mean0: Vec<Option<f64>>,
    pub alpha_crit_meanphi: Vec<Option<f64>>,
    pub alpha_crit_non_increasing: bool,
    /// The two normalisations give different critical exponents somewhere.
    pub normalizations_disagree: bool,
    pub threshold: f64,
    /// Node of the minimum of `phi` at the last sample and its angle parameter.
    pub concentration_node: Option<usize>,
    pub concentration_angle: Option<f64>,
    pub lelong: Option<f64>,
    pub lelong_spread: Option<f64>,
}

/// Integrability blow-up of `psi_t = phi_t - mean` for the exponents stored in the records.
/// `angles` maps node indices to the angle parameter of the grid.
pub fn blowup_detector(
    n: usize,
    records: &[FunctionalRecord],
    classification: Classification,
    angles: &[f64],
    th: &Thresholds,
) -> Result<BlowupReport> {
    let threshold = n as f64 / (n as f64 + 1.0);
    let empty = |why: &str| BlowupReport {
        explanation: why.to_string(),
        times: Vec::new(),
        mean0: Vec::new(),
        meanphi: Vec::new(),
        alpha_crit_mean0: Vec::new(),
        alpha_crit_meanphi: Vec::new(),
        alpha_crit_non_increasing: true,
        normalizations_disagree: false,
        threshold,
        concentration_node: None,
        concentration_angle: None,
        lelong: None,
        lelong_spread: None,
    };
    if classification != Classification::Diverging {
        return Ok(empty("run is not classified as diverging"));
    }
    require(records, 3, "blow-up detector")?;
    let t = column(records, |r| r.t);
    let alphas: Vec<f64> = records[0].imean0.iter().map(|p| p.0).collect();
    let series = |pick: &dyn Fn(&FunctionalRecord) -> &[(f64, f64)]| -> Result<Vec<BlowupSeries>> {
        alphas
            .iter()
            .map(|&a| {
                let log_values = records
                    .iter()
                    .map(|r| {
                        lookup(pick(r), a).map(f64::ln).ok_or_else(|| {
                            Error::Usage(format!("missing integrability column for alpha = {a}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BlowupSeries {
                    alpha: a,
                    class: classify_growth(&t, &log_values),
                    log_values,
                })
            })
            .collect()
    };
    let mean0 = series(&|r| &r.imean0)?;
    let meanphi = series(&|r| &r.imeanphi)?;
    let log_thr = th.blowup.ln();
    let crit = |s: &[BlowupSeries]| -> Vec<Option<f64>> {
        (0..records.len())
            .map(|k| {
                s.iter()
                    .filter(|b| b.log_values[k] > log_thr)
                    .map(|b| b.alpha)
                    .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))))
            })
            .collect()
    };
    let alpha_crit_mean0 = crit(&mean0);
    let alpha_crit_meanphi = crit(&meanphi);
    let non_inc = |c: &[Option<f64>]| {
        c.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => b <= a,
            (Some(_), None) => false,
            _ => true,
        })
    };
    let last = &records[records.len() - 1];
    Ok(BlowupReport {
        explanation: String::new(),
        times: t,
        alpha_crit_non_increasing: non_inc(&alpha_crit_mean0) && non_inc(&alpha_crit_meanphi),
        normalizations_disagree: alpha_crit_mean0 != alpha_crit_meanphi,
        mean0,
        meanphi,
        alpha_crit_mean0,
        alpha_crit_meanphi,
        threshold,
        concentration_node: Some(last.argmin),
        concentration_angle: angles.get(last.argmin).copied(),
        lelong: Some(last.lelong),
        lelong_spread: Some(last.lelong_spread),
    })
}

/// Every monitor for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub apriori: MonitorReport,
    pub alpha: MonitorReport,
    pub linear_growth: Option<MonitorReport>,
    pub trace: MonitorReport,
    pub classifier: ClassifierReport,
    pub blowup: BlowupReport,
}

impl Diagnosis {
    /// 0 holds, 2 violated, 3 undecided.
    pub fn exit_status(&self) -> i32 {
        let reports = [&self.apriori, &self.alpha, &self.trace];
        if reports.iter().any(|r| r.verdict == Verdict::Violated) {
            2
        } else if self.classifier.classification == Classification::Undecided {
            3
        } else {
            0
        }
    }
}

pub fn diagnose(
    n: usize,
    records: &[FunctionalRecord],
    alphas: &[f64],
    angles: &[f64],
    th: &Thresholds,
) -> Result<Diagnosis> {
    let classifier = convergence_classifier(n, records, th)?;
    Ok(Diagnosis {
        apriori: apriori_monitor(n, records, th)?,
        alpha: alpha_monitor(n, records, alphas, th)?,
        linear_growth: if records.len() >= 10 {
            Some(linear_growth_monitor(records, th)?)
        } else {
            None
        },
        trace: trace_monitor(records, th)?,
        blowup: blowup_detector(n, records, classifier.classification, angles, th)?,
        classifier,
    })
}
