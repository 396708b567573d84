//! Named experiments.

use std::path::Path;

use crate::error::{Error, Result};

use super::config::{config_from_table, parse_table, RunConfig};

pub const PRESETS: &[(&str, &str)] = &[
    (
        "fixed-point",
        r#"# phi0 = 0 with h = 0 is a fixed point at every lambda
backend = "sphere"
lambda = 0.5
N = 256
dt = 1e-2
t_max = 10.0
residual_threshold = 0.0
scheme = "rkc"
sample_every = 10
checkpoint_every = 500
"#,
    ),
    (
        "stationary",
        r#"backend = "sphere"
lambda = 1.0
N = 64
dt = 1e-2
t_max = 1.0
residual_threshold = 0.0
scheme = "rkc"
sample_every = 10
checkpoint_every = 25
"#,
    ),
    (
        "ke-converge",
        r#"backend = "sphere"
lambda = 0.5
N = 256
dt = 1e-2
t_max = 50.0
residual_threshold = 1e-6
scheme = "rkc"
sample_every = 1
checkpoint_every = 500

[phi0]
kind = "cos-mode"
eps = 0.3
"#,
    ),
    (
        "ke-converge-radial",
        r#"backend = "radial"
lambda = 0.5
N = 256
s_min = -20.0
s_max = 20.0
dt = 1e-2
t_max = 50.0
residual_threshold = 1e-6
scheme = "rkc"
sample_every = 1
checkpoint_every = 500

[phi0]
kind = "cos-mode"
eps = 0.05
"#,
    ),
    (
        "diverge-h",
        r#"# the residual test is off so the run always covers [0, t_max]
backend = "sphere"
lambda = 0.5
N = 256
dt = 1e-2
t_max = 50.0
residual_threshold = 0.0
scheme = "rkc"
sample_every = 10
checkpoint_every = 500
alpha_grid = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]

[h]
kind = "concentrated"
kappa = -0.5
width = 1e-3
center = 0.0
"#,
    ),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            Error::Usage(format!(
                "unknown preset {name}; known: {}",
                preset_names().join(", ")
            ))
        })
}

pub fn preset(name: &str) -> Result<RunConfig> {
    config_from_table(&parse_table(preset_text(name)?)?, Path::new("."))
}
