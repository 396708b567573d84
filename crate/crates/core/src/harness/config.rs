//! Run configuration: TOML parsing, validation, environment overrides and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::flow::{FlowSettings, Scheme};
use crate::functionals::RecordSettings;
use crate::geometry::{
    build_radial_geometry, build_sphere_geometry, Backend, Geometry, TwistDatum,
};

/// Prefix of the environment variables that override configuration keys.
pub const ENV_PREFIX: &str = "IMAFLOW_";

/// Initial potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Phi0Spec {
    Zero,
    /// `eps * zeta` (`eps cos(theta)` on the sphere).
    CosMode {
        eps: f64,
    },
    /// `sum_k c_k T_k(zeta)`.
    Fourier {
        coefficients: Vec<f64>,
    },
    /// Whitespace-separated node values.
    File {
        path: PathBuf,
    },
}

/// Twist datum `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HSpec {
    Zero,
    Concentrated { kappa: f64, width: f64, center: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: Backend,
    pub n: usize,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub nodes: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub phi0: Phi0Spec,
    pub h: HSpec,
    pub dt: f64,
    pub dt_floor: f64,
    pub t_max: f64,
    pub residual_threshold: f64,
    pub scheme: Scheme,
    pub sample_every: u64,
    pub checkpoint_every: u64,
    pub project_energy: bool,
    pub alpha_grid: Vec<f64>,
    pub p_list: Vec<f64>,
    pub dp_orders: Vec<f64>,
    pub blowup_threshold: f64,
    pub seed: u64,
    /// Not part of the hash.
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: Backend::Sphere,
            n: 1,
            lambda: 1.0,
            nodes: 256,
            s_min: -20.0,
            s_max: 20.0,
            phi0: Phi0Spec::Zero,
            h: HSpec::Zero,
            dt: 1e-2,
            dt_floor: 1e-8,
            t_max: 50.0,
            residual_threshold: 1e-6,
            scheme: Scheme::Rk4,
            sample_every: 1,
            checkpoint_every: 500,
            project_energy: true,
            alpha_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            p_list: vec![1.0, 2.0, 4.0],
            dp_orders: vec![1.0, 2.0],
            blowup_threshold: 1e6,
            seed: 0,
            output: None,
        }
    }
}

const KEYS: &[&str] = &[
    "backend",
    "n",
    "lambda",
    "N",
    "s_min",
    "s_max",
    "phi0",
    "h",
    "dt",
    "dt_floor",
    "t_max",
    "residual_threshold",
    "scheme",
    "sample_every",
    "checkpoint_every",
    "project_energy",
    "alpha_grid",
    "p_list",
    "dp_orders",
    "blowup_threshold",
    "seed",
    "output",
];

/// Reads a TOML file and validates it.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let table = parse_table(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    config_from_table(&table, base)
}

/// Parses TOML text; duplicate keys are reported by name.
pub fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Config(e.message().to_string()))
}

/// Applies `IMAFLOW_<KEY>` overrides from `vars`. `IMAFLOW_NODES` sets `N`.
pub fn apply_env_overrides(
    table: &mut Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut problems = Vec::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = match rest {
            "NODES" => "N".to_string(),
            "CONFIG" | "OUT" | "PRESET" | "RESUME" | "TIMES" | "P" | "GRID"
            | "ACCEPTANCE_STRICT" => continue,
            other => other.to_ascii_lowercase(),
        };
        if !KEYS.contains(&key.as_str()) {
            problems.push(format!("unknown override {name}"));
            continue;
        }
        table.insert(key, parse_scalar(&raw));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

/// Reads `raw` as a TOML value, falling back to a string.
pub fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets a possibly dotted key (`phi0.eps`) in `table`.
pub fn set_key(table: &mut Table, key: &str, value: Value) -> Result<()> {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
            Ok(())
        }
        Some((head, tail)) => {
            let entry = table
                .entry(head.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => set_key(t, tail, value),
                _ => Err(Error::Config(format!("{head} is not a table"))),
            }
        }
    }
}

struct Reader<'a> {
    table: &'a Table,
    prefix: &'a str,
    problems: Vec<String>,
}

impl<'a> Reader<'a> {
    fn name(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.table.get(key) {
            None => default,
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                let name = self.name(key);
                self.problems
                    .push(format!("{name} must be a number, got {}", other.type_str()));
                default
            }
        }
    }

    fn uint(&mut self, key: &str, default: u64) -> u64 {
        match self.table.get(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= 0 => *v as u64,
            Some(other) => {
                let name = self.name(key);
                self.problems
                    .push(format!("{name} must be a nonnegative integer, got {other}"));
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.table.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                let name = self.name(key);
                self.problems
                    .push(format!("{name} must be a boolean, got {other}"));
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.table.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                let name = self.name(key);
                self.problems
                    .push(format!("{name} must be a string, got {other}"));
                None
            }
        }
    }

    fn floats(&mut self, key: &str, default: Vec<f64>) -> Vec<f64> {
        let values = match self.table.get(key) {
            None => return default,
            Some(Value::Array(a)) => a,
            // `IMAFLOW_ALPHA_GRID=0.5` and sweep points give a bare number
            Some(Value::Float(v)) => return vec![*v],
            Some(Value::Integer(v)) => return vec![*v as f64],
            Some(other) => {
                let name = self.name(key);
                self.problems
                    .push(format!("{name} must be a list of numbers, got {other}"));
                return default;
            }
        };
        let mut out = Vec::with_capacity(values.len());
        for v in values {
            match v {
                Value::Float(x) => out.push(*x),
                Value::Integer(x) => out.push(*x as f64),
                other => {
                    let name = self.name(key);
                    self.problems
                        .push(format!("{name} must contain numbers, got {other}"));
                    return default;
                }
            }
        }
        out
    }

    fn unknown(&mut self, allowed: &[&str]) {
        for key in self.table.keys() {
            if !allowed.contains(&key.as_str()) {
                let name = self.name(key);
                self.problems.push(format!("unknown key {name}"));
            }
        }
    }
}

/// Validates a parsed table; every violation is listed.
pub fn config_from_table(table: &Table, base: &Path) -> Result<RunConfig> {
    let d = RunConfig::default();
    let mut r = Reader {
        table,
        prefix: "",
        problems: Vec::new(),
    };
    r.unknown(KEYS);

    let backend = match r.string("backend").as_deref() {
        None | Some("sphere") => Backend::Sphere,
        Some("radial") => Backend::Radial,
        Some(other) => {
            r.problems
                .push(format!("backend must be sphere or radial, got {other}"));
            Backend::Sphere
        }
    };
    let implied_n = match backend {
        Backend::Sphere => 1,
        Backend::Radial => 2,
    };
    let n = r.uint("n", implied_n as u64) as usize;
    if n != implied_n {
        r.problems.push(format!(
            "n = {n} does not match backend {} (n = {implied_n})",
            backend.name()
        ));
    }
    let lambda = r.float("lambda", d.lambda);
    if !(lambda > 0.0 && lambda <= 1.0) {
        r.problems.push(format!("lambda out of (0,1]: {lambda}"));
    }
    let nodes = r.uint("N", d.nodes as u64) as usize;
    if nodes < 16 {
        r.problems.push(format!("N must be at least 16: {nodes}"));
    }
    let s_min = r.float("s_min", d.s_min);
    let s_max = r.float("s_max", d.s_max);
    let dt = r.float("dt", d.dt);
    if !(dt > 0.0) {
        r.problems.push(format!("dt must be positive: {dt}"));
    }
    let dt_floor = r.float("dt_floor", d.dt_floor);
    if !(dt_floor > 0.0 && dt_floor <= dt) {
        r.problems
            .push(format!("dt_floor must lie in (0, dt]: {dt_floor}"));
    }
    let t_max = r.float("t_max", d.t_max);
    if !(t_max >= 0.0 && t_max.is_finite()) {
        r.problems
            .push(format!("t_max must be finite and nonnegative: {t_max}"));
    }
    let residual_threshold = r.float("residual_threshold", d.residual_threshold);
    if !(residual_threshold >= 0.0) {
        r.problems.push(format!(
            "residual_threshold must be nonnegative: {residual_threshold}"
        ));
    }
    let scheme = match r.string("scheme").as_deref() {
        None => d.scheme,
        Some("rk4") => Scheme::Rk4,
        Some("euler") => Scheme::Euler,
        Some("rkc") => Scheme::Rkc,
        Some(other) => {
            r.problems
                .push(format!("scheme must be rk4, euler or rkc, got {other}"));
            d.scheme
        }
    };
    let sample_every = r.uint("sample_every", d.sample_every);
    if sample_every == 0 {
        r.problems.push("sample_every must be at least 1".into());
    }
    let checkpoint_every = r.uint("checkpoint_every", d.checkpoint_every);
    let project_energy = r.boolean("project_energy", d.project_energy);
    let alpha_grid = r.floats("alpha_grid", d.alpha_grid.clone());
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        r.problems
            .push("alpha_grid entries must lie in (0,1]".into());
    }
    let p_list = r.floats("p_list", d.p_list.clone());
    if p_list.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
        r.problems
            .push("p_list entries must be finite and >= 1".into());
    }
    let dp_orders = r.floats("dp_orders", d.dp_orders.clone());
    if dp_orders.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
        r.problems
            .push("dp_orders entries must be finite and >= 1".into());
    }
    let blowup_threshold = r.float("blowup_threshold", d.blowup_threshold);
    if !(blowup_threshold > 1.0) {
        r.problems.push(format!(
            "blowup_threshold must exceed 1: {blowup_threshold}"
        ));
    }
    let seed = r.uint("seed", d.seed);
    let output = r.string("output").map(PathBuf::from);

    let phi0 = match table.get("phi0") {
        None => Phi0Spec::Zero,
        Some(Value::Table(t)) => phi0_spec(t, base, &mut r.problems),
        Some(other) => {
            r.problems
                .push(format!("phi0 must be a table, got {other}"));
            Phi0Spec::Zero
        }
    };
    let h = match table.get("h") {
        None => HSpec::Zero,
        Some(Value::Table(t)) => h_spec(t, base, &mut r.problems),
        Some(other) => {
            r.problems.push(format!("h must be a table, got {other}"));
            HSpec::Zero
        }
    };

    let problems = r.problems;
    if problems.is_empty() {
        Ok(RunConfig {
            backend,
            n,
            lambda,
            nodes,
            s_min,
            s_max,
            phi0,
            h,
            dt,
            dt_floor,
            t_max,
            residual_threshold,
            scheme,
            sample_every,
            checkpoint_every,
            project_energy,
            alpha_grid,
            p_list,
            dp_orders,
            blowup_threshold,
            seed,
            output,
        })
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

fn resolve(base: &Path, p: String) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn phi0_spec(t: &Table, base: &Path, problems: &mut Vec<String>) -> Phi0Spec {
    let mut r = Reader {
        table: t,
        prefix: "phi0",
        problems: Vec::new(),
    };
    let kind = r.string("kind").unwrap_or_else(|| "zero".into());
    let spec = match kind.as_str() {
        "zero" => {
            r.unknown(&["kind"]);
            Phi0Spec::Zero
        }
        "cos-mode" => {
            r.unknown(&["kind", "eps"]);
            Phi0Spec::CosMode {
                eps: r.float("eps", 0.0),
            }
        }
        "fourier" => {
            r.unknown(&["kind", "coefficients"]);
            Phi0Spec::Fourier {
                coefficients: r.floats("coefficients", Vec::new()),
            }
        }
        "file" => {
            r.unknown(&["kind", "path"]);
            match r.string("path") {
                Some(p) => Phi0Spec::File {
                    path: resolve(base, p),
                },
                None => {
                    r.problems
                        .push("phi0.path is required for kind = file".into());
                    Phi0Spec::Zero
                }
            }
        }
        other => {
            r.problems.push(format!(
                "phi0.kind must be zero, cos-mode, fourier or file, got {other}"
            ));
            Phi0Spec::Zero
        }
    };
    problems.extend(r.problems);
    spec
}

fn h_spec(t: &Table, base: &Path, problems: &mut Vec<String>) -> HSpec {
    let mut r = Reader {
        table: t,
        prefix: "h",
        problems: Vec::new(),
    };
    let kind = r.string("kind").unwrap_or_else(|| "zero".into());
    let spec = match kind.as_str() {
        "zero" => {
            r.unknown(&["kind"]);
            HSpec::Zero
        }
        "concentrated" => {
            r.unknown(&["kind", "kappa", "width", "center"]);
            let kappa = r.float("kappa", 0.0);
            let width = r.float("width", 1e-2);
            let center = r.float("center", 0.0);
            if !(width > 0.0) {
                r.problems
                    .push(format!("h.width must be positive: {width}"));
            }
            HSpec::Concentrated {
                kappa,
                width,
                center,
            }
        }
        "file" => {
            r.unknown(&["kind", "path"]);
            match r.string("path") {
                Some(p) => HSpec::File {
                    path: resolve(base, p),
                },
                None => {
                    r.problems.push("h.path is required for kind = file".into());
                    HSpec::Zero
                }
            }
        }
        other => {
            r.problems.push(format!(
                "h.kind must be zero, concentrated or file, got {other}"
            ));
            HSpec::Zero
        }
    };
    problems.extend(r.problems);
    spec
}

fn read_node_values(path: &Path, len: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let values = text
        .split_whitespace()
        .map(|w| {
            w.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: not a number: {w}", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != len {
        return Err(Error::Config(format!(
            "{}: expected {len} node values, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form (sorted keys, `output` removed).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output");
        }
        // serde_json maps are ordered by key
        let canonical = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn geometry(&self) -> Result<Geometry> {
        match self.backend {
            Backend::Sphere => build_sphere_geometry(self.lambda, self.nodes),
            Backend::Radial => {
                build_radial_geometry(self.lambda, self.nodes, self.s_min, self.s_max)
            }
        }
    }

    pub fn initial_potential(&self, geom: &Geometry) -> Result<Vec<f64>> {
        match &self.phi0 {
            Phi0Spec::Zero => Ok(vec![0.0; geom.len()]),
            Phi0Spec::CosMode { eps } => Ok(geom.sample_zeta(|z| eps * z)),
            Phi0Spec::Fourier { coefficients } => {
                Ok(geom.sample_zeta(|z| chebyshev_sum(coefficients, z)))
            }
            Phi0Spec::File { path } => read_node_values(path, geom.len()),
        }
    }

    pub fn twist(&self, geom: &Geometry) -> Result<TwistDatum> {
        match &self.h {
            HSpec::Zero => Ok(TwistDatum::zero(geom)),
            HSpec::Concentrated {
                kappa,
                width,
                center,
            } => TwistDatum::concentrated(geom, *kappa, *width, *center),
            HSpec::File { path } => {
                TwistDatum::normalized(geom, read_node_values(path, geom.len())?)
            }
        }
    }

    /// Exponents stored in the trajectory: the grid plus `n/(n+1)`, 0.9, 0.95 and 1.
    pub fn record_alphas(&self) -> Vec<f64> {
        let mut a = self.alpha_grid.clone();
        a.extend([self.n as f64 / (self.n as f64 + 1.0), 0.9, 0.95, 1.0]);
        a.sort_by(f64::total_cmp);
        a.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        a
    }

    pub fn flow_settings(&self) -> FlowSettings {
        FlowSettings {
            dt: self.dt,
            dt_floor: self.dt_floor,
            t_max: self.t_max,
            residual_threshold: self.residual_threshold,
            scheme: self.scheme,
            sample_every: self.sample_every,
            checkpoint_every: self.checkpoint_every,
            project_energy: self.project_energy,
            record: RecordSettings {
                alphas: self.record_alphas(),
                powers: vec![1.0, 2.0],
                dp_orders: self.dp_orders.clone(),
                seed: self.seed,
            },
        }
    }
}

/// `sum_k c_k T_k(z)` by the three-term recurrence.
fn chebyshev_sum(c: &[f64], z: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, z);
    let mut sum = 0.0;
    for (k, ck) in c.iter().enumerate() {
        let tk = match k {
            0 => t0,
            1 => t1,
            _ => {
                let t2 = 2.0 * z * t1 - t0;
                t0 = t1;
                t1 = t2;
                t2
            }
        };
        sum += ck * tk;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        config_from_table(&parse_table(text)?, Path::new("."))
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.dt, 1e-2);
        assert_eq!(c.nodes, 256);
        assert_eq!(c.scheme, Scheme::Rk4);
    }

    #[test]
    fn lambda_out_of_range() {
        let e = parse("lambda = 1.5").unwrap_err().to_string();
        assert!(e.contains("lambda out of (0,1]"), "{e}");
    }

    #[test]
    fn duplicate_key_is_named() {
        let e = parse("dt = 0.1\ndt = 0.2").unwrap_err().to_string();
        assert!(e.contains("dt"), "{e}");
    }

    #[test]
    fn all_violations_listed() {
        let e =
            parse("lambda = 2.0\nbogus = 1\ndt = -1.0\n[phi0]\nkind = \"cos-mode\"\nepsilon = 0.1")
                .unwrap_err()
                .to_string();
        for part in [
            "lambda",
            "unknown key bogus",
            "dt must be positive",
            "unknown key phi0.epsilon",
        ] {
            assert!(e.contains(part), "{part} missing from {e}");
        }
    }

    #[test]
    fn hash_ignores_key_order_and_output() {
        let a = parse(
            "lambda = 0.5\ndt = 0.01\n[h]\nkind = \"concentrated\"\nkappa = -0.5\nwidth = 0.01",
        )
        .unwrap();
        let b = parse("output = \"x\"\n[h]\nwidth = 0.01\nkappa = -0.5\nkind = \"concentrated\"\n[phi0]\nkind = \"zero\"")
            .unwrap();
        let b = RunConfig { lambda: 0.5, ..b };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            dt: 0.02,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn env_overrides() {
        let mut t = parse_table("dt = 0.1").unwrap();
        apply_env_overrides(
            &mut t,
            vec![
                ("IMAFLOW_DT".to_string(), "0.05".to_string()),
                ("IMAFLOW_NODES".to_string(), "64".to_string()),
                ("IMAFLOW_SCHEME".to_string(), "rkc".to_string()),
                ("OTHER".to_string(), "1".to_string()),
            ],
        )
        .unwrap();
        let c = config_from_table(&t, Path::new(".")).unwrap();
        assert_eq!((c.dt, c.nodes, c.scheme), (0.05, 64, Scheme::Rkc));
    }

    #[test]
    fn record_alphas_include_threshold() {
        let c = parse("backend = \"radial\"\nalpha_grid = [0.5]").unwrap();
        let a = c.record_alphas();
        assert!(a.iter().any(|x| (x - 2.0 / 3.0).abs() < 1e-15));
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn fourier_matches_cos_mode() {
        assert!((chebyshev_sum(&[0.0, 0.3], 0.7) - 0.21).abs() < 1e-15);
        assert!(
            (chebyshev_sum(&[1.0, 0.0, 2.0], 0.5) - (1.0 + 2.0 * (2.0 * 0.25 - 1.0))).abs() < 1e-15
        );
    }
}
