//! Configuration, run archives and the commands behind the `imaflow` binary.

pub mod archive;
pub mod commands;
pub mod config;
pub mod presets;

pub use archive::{Archive, ArchiveWriter, Checkpoint, TerminationRecord};
pub use commands::{
    cmd_diagnose, cmd_geodesic, cmd_resume, cmd_run, cmd_sweep, exit_code, parse_grid_axis,
    GridAxis,
};
pub use config::{
    apply_env_overrides, config_from_table, parse_config, parse_table, HSpec, Phi0Spec, RunConfig,
};
pub use presets::{preset, preset_names, preset_text};
