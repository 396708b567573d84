use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use imaflow::harness::{
    apply_env_overrides, cmd_diagnose, cmd_geodesic, cmd_resume, cmd_run, cmd_sweep,
    config_from_table, exit_code, parse_grid_axis, parse_table, preset_names, preset_text,
};
use imaflow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "imaflow",
    version,
    about = "Inverse Monge-Ampere flow laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML run configuration.
    #[arg(long, env = "IMAFLOW_CONFIG", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset (see `imaflow presets`).
    #[arg(long, env = "IMAFLOW_PRESET")]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the flow into a run archive.
    Run {
        #[command(flatten)]
        source: Source,
        /// Archive directory.
        #[arg(long, env = "IMAFLOW_OUT", required_unless_present = "resume")]
        out: Option<PathBuf>,
        /// Continue an existing archive from its last checkpoint.
        #[arg(long, conflicts_with_all = ["config", "preset", "out"])]
        resume: Option<PathBuf>,
    },
    /// Build geodesic segments and the asymptotic ray from checkpointed potentials.
    Geodesic {
        archive: PathBuf,
        /// Checkpoint times, comma separated (default: every checkpoint after t = 0).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Orders of the d_p distances, comma separated.
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<f64>>,
    },
    /// Run every monitor on a stored trajectory; the exit status encodes the verdict.
    Diagnose { archive: PathBuf },
    /// Run a template configuration over a parameter grid.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Axis `key=v1,v2,...`; repeat for more axes.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long, env = "IMAFLOW_OUT")]
        out: PathBuf,
    },
    /// List the named presets.
    Presets,
}

fn load_table(source: &Source) -> Result<(toml::Table, PathBuf)> {
    let (text, base) = match (&source.config, &source.preset) {
        (Some(path), _) => (
            std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        (None, Some(name)) => (preset_text(name)?.to_string(), PathBuf::from(".")),
        (None, None) => {
            return Err(Error::Usage(
                "one of --config or --preset is required".into(),
            ))
        }
    };
    let mut table = parse_table(&text)?;
    apply_env_overrides(&mut table, std::env::vars())?;
    Ok((table, base))
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            source,
            out,
            resume,
        } => {
            let summary = match resume {
                Some(dir) => cmd_resume(&dir)?,
                None => {
                    let (table, base) = load_table(&source)?;
                    let config = config_from_table(&table, &base)?;
                    let out = out.expect("clap enforces --out");
                    cmd_run(&config, &out)?
                }
            };
            let t = &summary.termination;
            println!(
                "{}: cause={} t={} steps={} rejected={} wall={:.2}s",
                summary.archive.dir.display(),
                t.cause,
                t.t,
                t.steps,
                t.rejected,
                summary.wall_seconds
            );
            Ok(summary.exit_status())
        }
        Command::Geodesic { archive, times, p } => {
            let out = cmd_geodesic(&archive, times.as_deref(), p.as_deref())?;
            let ray = &out.ray;
            println!(
                "ray over {} times: nontrivial={} speed={:e} r_max={:e} f_convex={}",
                ray.times.len(),
                ray.nontrivial,
                ray.speed,
                ray.r_max,
                ray.f_convex
            );
            for (t, row) in &out.dp_table {
                let cells: Vec<String> = row.iter().map(|(p, d)| format!("d_{p}={d:e}")).collect();
                println!("t={t} {}", cells.join(" "));
            }
            Ok(0)
        }
        Command::Diagnose { archive } => {
            let d = cmd_diagnose(&archive)?;
            println!("classification: {}", d.classifier.classification.name());
            for r in [&d.apriori, &d.alpha, &d.trace]
                .into_iter()
                .chain(d.linear_growth.as_ref())
            {
                println!("{}: {:?}", r.monitor, r.verdict);
            }
            Ok(d.exit_status())
        }
        Command::Sweep { source, grid, out } => {
            let (table, base) = load_table(&source)?;
            let axes = grid
                .iter()
                .map(|g| parse_grid_axis(g))
                .collect::<Result<Vec<_>>>()?;
            let summary = cmd_sweep(&table, &base, &axes, &out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for p in &summary.points {
                println!(
                    "point {:03} {:?}: {} {}",
                    p.index,
                    p.values,
                    p.classification.as_deref().unwrap_or("-"),
                    p.error.as_deref().unwrap_or("")
                );
            }
            for g in &summary.resolution_groups {
                println!(
                    "N group {:?}: {:?} agree={}",
                    g.values, g.classifications, g.agree
                );
            }
            Ok(0)
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("imaflow: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
