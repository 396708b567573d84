//! The `run`, `geodesic`, `diagnose` and `sweep` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use toml::{Table, Value};

use crate::diagnostics::{diagnose, Diagnosis, Thresholds};
use crate::error::{Error, Result};
use crate::flow::{resume_flow, run_flow_into, RunOutcome, Termination};
use crate::geodesics::{
    asymptotic_ray, dp_distance, ray_limit_integrability, LimitIntegrabilityReport, RayReport,
    RaySettings,
};

use super::archive::{fmt_float, Archive, ArchiveWriter, TerminationRecord};
use super::config::{config_from_table, set_key, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INTEGRATION_FAILURE: i32 = 4;

/// Exit status for an error that stopped a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::IntegrationFailure { .. } => EXIT_INTEGRATION_FAILURE,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub archive: Archive,
    pub termination: TerminationRecord,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn exit_status(&self) -> i32 {
        if self.termination.failure.is_some() {
            EXIT_INTEGRATION_FAILURE
        } else {
            EXIT_OK
        }
    }
}

fn termination_record(outcome: &RunOutcome) -> TerminationRecord {
    let s = &outcome.final_state;
    TerminationRecord {
        cause: outcome.termination.name().to_string(),
        t: s.t,
        steps: s.steps_taken,
        rejected: s.rejected_steps,
        energy_shift: outcome.energy_shift,
        failure: match outcome.termination {
            Termination::Failure { .. } => Some(outcome.termination.clone()),
            _ => None,
        },
    }
}

/// Integrates `config` into a fresh archive at `out`.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    let geom = config.geometry()?;
    let h = config.twist(&geom)?;
    let phi0 = config.initial_potential(&geom)?;
    let settings = config.flow_settings();
    let mut stored = config.clone();
    stored.output = Some(out.to_path_buf());
    let mut writer = ArchiveWriter::create(out, &stored)?;
    let start = Instant::now();
    let outcome = run_flow_into(&geom, &h, &phi0, &settings, &mut writer)?;
    let wall = start.elapsed().as_secs_f64();
    let termination = termination_record(&outcome);
    let archive = writer.finish(&termination, wall, false)?;
    Ok(RunSummary {
        archive,
        termination,
        wall_seconds: wall,
    })
}

/// Continues an archive from its last checkpoint.
pub fn cmd_resume(dir: &Path) -> Result<RunSummary> {
    let archive = Archive::open(dir)?;
    let config = archive.config()?;
    let checkpoint = archive.rewind()?;
    let geom = config.geometry()?;
    let h = config.twist(&geom)?;
    let phi0 = config.initial_potential(&geom)?;
    let settings = config.flow_settings();
    let mut writer = ArchiveWriter::append(&archive, &config)?;
    let start = Instant::now();
    let outcome = resume_flow(
        &geom,
        &h,
        &phi0,
        &checkpoint.snapshot,
        &settings,
        &mut writer,
    )?;
    let wall = start.elapsed().as_secs_f64();
    let termination = termination_record(&outcome);
    let archive = writer.finish(&termination, wall, true)?;
    Ok(RunSummary {
        archive,
        termination,
        wall_seconds: wall,
    })
}

fn require_complete(archive: &Archive) -> Result<()> {
    if archive.termination()?.is_none() {
        return Err(Error::Usage(format!(
            "{}: run has not finished",
            archive.dir.display()
        )));
    }
    archive.verify_checksum()
}

#[derive(Debug, Clone)]
pub struct GeodesicOutput {
    pub ray: RayReport,
    pub limit: LimitIntegrabilityReport,
    /// `(t, [(p, d_p(phi_0, phi(t)))])`
    pub dp_table: Vec<(f64, Vec<(f64, f64)>)>,
}

/// Builds the ray from checkpointed potentials. Without `times` every checkpoint after
/// `t = 0` is used.
pub fn cmd_geodesic(
    dir: &Path,
    times: Option<&[f64]>,
    p_list: Option<&[f64]>,
) -> Result<GeodesicOutput> {
    let archive = Archive::open(dir)?;
    require_complete(&archive)?;
    let config = archive.config()?;
    let geom = config.geometry()?;
    let h = config.twist(&geom)?;
    let phi0 = config.initial_potential(&geom)?;
    let available: Vec<(f64, Vec<f64>)> = archive
        .checkpoints()?
        .into_iter()
        .map(|(_, c)| (c.snapshot.t, c.snapshot.phi))
        .filter(|(t, _)| *t > 0.0)
        .collect();
    let snapshots = match times {
        None => available,
        Some(times) => {
            let mut found = Vec::new();
            let mut missing = Vec::new();
            for &t in times {
                match available
                    .iter()
                    .find(|(s, _)| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
                {
                    Some(hit) => found.push(hit.clone()),
                    None => missing.push(fmt_float(t)),
                }
            }
            if !missing.is_empty() {
                let have: Vec<String> = available.iter().map(|(t, _)| fmt_float(*t)).collect();
                return Err(Error::Usage(format!(
                    "times not among the checkpoints: {} (available: {})",
                    missing.join(", "),
                    have.join(", ")
                )));
            }
            found
        }
    };
    let settings = RaySettings {
        p_list: p_list
            .map(|p| p.to_vec())
            .unwrap_or_else(|| config.p_list.clone()),
        ..RaySettings::default()
    };
    let ray = asymptotic_ray(&geom, &h, &phi0, &snapshots, &settings)?;
    let limit = ray_limit_integrability(&geom, &ray, &config.record_alphas(), 9)?;
    let dp_table = snapshots
        .par_iter()
        .map(|(t, phi)| {
            let row = settings
                .p_list
                .iter()
                .map(|&p| Ok((p, dp_distance(&geom, &phi0, phi, p)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((*t, row))
        })
        .collect::<Result<Vec<_>>>()?;

    write_json(&archive.path("ray.json"), &ray)?;
    write_json(&archive.path("limit.json"), &limit)?;
    let mut csv = String::from("t");
    for p in &settings.p_list {
        csv.push_str(&format!(",dp_{p}"));
    }
    csv.push('\n');
    for (t, row) in &dp_table {
        csv.push_str(&fmt_float(*t));
        for (_, d) in row {
            csv.push(',');
            csv.push_str(&fmt_float(*d));
        }
        csv.push('\n');
    }
    fs::write(archive.path("dp_table.csv"), csv)?;
    Ok(GeodesicOutput {
        ray,
        limit,
        dp_table,
    })
}

pub fn thresholds(config: &RunConfig) -> Thresholds {
    Thresholds {
        blowup: config.blowup_threshold,
        ..Thresholds::default()
    }
}

/// Runs every monitor on the stored trajectory and writes `diagnosis.json`.
pub fn cmd_diagnose(dir: &Path) -> Result<Diagnosis> {
    let archive = Archive::open(dir)?;
    let config = archive.config()?;
    let records = archive.records()?;
    let geom = config.geometry()?;
    let d = diagnose(
        config.n,
        &records,
        &config.record_alphas(),
        geom.cheb().angles(),
        &thresholds(&config),
    )?;
    write_json(&archive.path("diagnosis.json"), &d)?;
    Ok(d)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// One swept parameter: a (possibly dotted) key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<Value>,
}

/// Parses `key=v1,v2,...`.
pub fn parse_grid_axis(spec: &str) -> Result<GridAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("grid axis must look like key=v1,v2: {spec}")))?;
    let key = key.trim();
    if key.is_empty() || values.trim().is_empty() {
        return Err(Error::Usage(format!(
            "grid axis must look like key=v1,v2: {spec}"
        )));
    }
    Ok(GridAxis {
        key: key.to_string(),
        values: values
            .split(',')
            .map(|v| super::config::parse_scalar(v.trim()))
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub dir: PathBuf,
    pub values: Vec<(String, String)>,
    pub config_hash: Option<String>,
    pub cause: Option<String>,
    pub classification: Option<String>,
    pub exit_status: i32,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolutionGroup {
    /// Axis values other than `N`.
    pub values: Vec<(String, String)>,
    pub nodes: Vec<String>,
    pub classifications: Vec<String>,
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    pub resolution_groups: Vec<ResolutionGroup>,
    pub warnings: Vec<String>,
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs the template at every grid point, concurrently, one archive per point.
pub fn cmd_sweep(
    template: &Table,
    base: &Path,
    axes: &[GridAxis],
    out: &Path,
) -> Result<SweepSummary> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Ok(SweepSummary {
            points: Vec::new(),
            resolution_groups: Vec::new(),
            warnings: vec!["empty parameter grid: nothing to run".into()],
        });
    }
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (0..axis.values.len()).map(move |k| {
                    let mut next = c.clone();
                    next.push(k);
                    next
                })
            })
            .collect();
    }
    fs::create_dir_all(out)?;
    let points: Vec<SweepPoint> = combos
        .par_iter()
        .enumerate()
        .map(|(index, combo)| {
            let dir = out.join(format!("point_{index:03}"));
            let values: Vec<(String, String)> = axes
                .iter()
                .zip(combo)
                .map(|(a, &k)| (a.key.clone(), value_text(&a.values[k])))
                .collect();
            let mut point = SweepPoint {
                index,
                dir: dir.clone(),
                values,
                config_hash: None,
                cause: None,
                classification: None,
                exit_status: EXIT_OK,
                error: None,
            };
            let result = (|| -> Result<()> {
                let mut table = template.clone();
                for (a, &k) in axes.iter().zip(combo) {
                    set_key(&mut table, &a.key, a.values[k].clone())?;
                }
                let config = config_from_table(&table, base)?;
                point.config_hash = Some(config.hash());
                let run = cmd_run(&config, &dir)?;
                point.cause = Some(run.termination.cause.clone());
                point.exit_status = run.exit_status();
                let d = cmd_diagnose(&dir)?;
                point.classification = Some(d.classifier.classification.name().to_string());
                if point.exit_status == EXIT_OK {
                    point.exit_status = d.exit_status();
                }
                Ok(())
            })();
            if let Err(e) = result {
                point.exit_status = exit_code(&e);
                point.error = Some(e.to_string());
            }
            point
        })
        .collect();

    let mut groups: BTreeMap<Vec<(String, String)>, Vec<&SweepPoint>> = BTreeMap::new();
    for p in &points {
        let key: Vec<(String, String)> =
            p.values.iter().filter(|(k, _)| k != "N").cloned().collect();
        groups.entry(key).or_default().push(p);
    }
    let resolution_groups: Vec<ResolutionGroup> = if axes.iter().any(|a| a.key == "N") {
        groups
            .into_iter()
            .map(|(values, members)| {
                let nodes = members
                    .iter()
                    .map(|p| {
                        p.values
                            .iter()
                            .find(|(k, _)| k == "N")
                            .map(|v| v.1.clone())
                            .unwrap_or_default()
                    })
                    .collect();
                let classifications: Vec<String> = members
                    .iter()
                    .map(|p| p.classification.clone().unwrap_or_else(|| "failed".into()))
                    .collect();
                let agree = classifications.windows(2).all(|w| w[0] == w[1]);
                ResolutionGroup {
                    values,
                    nodes,
                    classifications,
                    agree,
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let summary = SweepSummary {
        points,
        resolution_groups,
        warnings: Vec::new(),
    };
    write_sweep_tables(out, axes, &summary)?;
    Ok(summary)
}

fn write_sweep_tables(out: &Path, axes: &[GridAxis], s: &SweepSummary) -> Result<()> {
    let mut csv = String::from("point");
    for a in axes {
        csv.push(',');
        csv.push_str(&a.key);
    }
    csv.push_str(",config_hash,cause,classification,exit_status,error\n");
    for p in &s.points {
        csv.push_str(&format!("{:03}", p.index));
        for (_, v) in &p.values {
            csv.push(',');
            csv.push_str(v);
        }
        let error = p
            .error
            .clone()
            .unwrap_or_default()
            .replace([',', '\n'], ";");
        csv.push_str(&format!(
            ",{},{},{},{},{}\n",
            p.config_hash.clone().unwrap_or_default(),
            p.cause.clone().unwrap_or_default(),
            p.classification.clone().unwrap_or_default(),
            p.exit_status,
            error
        ));
    }
    fs::write(out.join("summary.csv"), csv)?;
    if !s.resolution_groups.is_empty() {
        let mut csv = String::from("group,values,N,classifications,agree\n");
        for (i, g) in s.resolution_groups.iter().enumerate() {
            let values: Vec<String> = g.values.iter().map(|(k, v)| format!("{k}={v}")).collect();
            csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                values.join(" "),
                g.nodes.join(" "),
                g.classifications.join(" "),
                g.agree
            ));
        }
        fs::write(out.join("resolution_agreement.csv"), csv)?;
    }
    Ok(())
}
