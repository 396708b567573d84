//! Run archives: `config.json`, `trajectory.csv` with its checksum,
//! `checkpoints/*.json`, `termination.json` and `metadata.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{Snapshot, Termination, TrajectorySink};
use crate::functionals::FunctionalRecord;

use super::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKSUM_FILE: &str = "trajectory.csv.sha256";
pub const TERMINATION_FILE: &str = "termination.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const FIXED_COLUMNS: [&str; 12] = [
    "t", "c", "E", "I", "J", "F", "M", "sup", "inf", "osc", "entropy", "residual",
];
const SCALAR_TAIL: [&str; 10] = [
    "mean0",
    "meanphi",
    "min_rho",
    "norm_defect",
    "h_meanphi",
    "inf_h",
    "log_trace_max",
    "fdot",
    "mdot",
    "d1_proxy",
];
const INDEX_TAIL: [&str; 5] = ["argmin", "lelong", "lelong_spread", "steps", "rejected"];

/// Shortest round-trip representation, in exponent form outside `[1e-4, 1e16)`.
pub fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn label(prefix: &str, x: f64) -> String {
    format!("{prefix}_{x}")
}

/// Column names for records carrying the given exponent lists.
pub fn csv_header(alphas: &[f64], powers: &[f64], dp_orders: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(alphas.iter().map(|a| label("ialpha", *a)));
    h.extend(SCALAR_TAIL.iter().map(|s| s.to_string()));
    h.extend(powers.iter().map(|p| label("ipow", *p)));
    h.extend(alphas.iter().map(|a| label("imean0", *a)));
    h.extend(alphas.iter().map(|a| label("imeanphi", *a)));
    h.extend(dp_orders.iter().map(|p| label("dp", *p)));
    h.extend(INDEX_TAIL.iter().map(|s| s.to_string()));
    h
}

pub fn header_of(r: &FunctionalRecord) -> Vec<String> {
    let firsts = |v: &[(f64, f64)]| v.iter().map(|p| p.0).collect::<Vec<_>>();
    csv_header(&firsts(&r.ialpha), &firsts(&r.ipow), &firsts(&r.dp))
}

pub fn csv_row(r: &FunctionalRecord) -> String {
    let mut f: Vec<String> = [
        r.t, r.c, r.e, r.i, r.j, r.f, r.m, r.sup, r.inf, r.osc, r.entropy, r.residual,
    ]
    .iter()
    .map(|v| fmt_float(*v))
    .collect();
    f.extend(r.ialpha.iter().map(|p| fmt_float(p.1)));
    f.extend(
        [
            r.mean0,
            r.meanphi,
            r.min_rho,
            r.norm_defect,
            r.h_meanphi,
            r.inf_h,
            r.log_trace_max,
            r.fdot,
            r.mdot,
            r.d1_proxy,
        ]
        .iter()
        .map(|v| fmt_float(*v)),
    );
    for list in [&r.ipow, &r.imean0, &r.imeanphi, &r.dp] {
        f.extend(list.iter().map(|p| fmt_float(p.1)));
    }
    f.push(r.argmin.to_string());
    f.push(fmt_float(r.lelong));
    f.push(fmt_float(r.lelong_spread));
    f.push(r.steps.to_string());
    f.push(r.rejected.to_string());
    f.join(",")
}

/// Rebuilds records from CSV text (comment lines start with `#`).
pub fn parse_csv(text: &str) -> Result<Vec<FunctionalRecord>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Io("trajectory has no header".into()))?
        .split(',')
        .collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Io(format!("trajectory lacks column {name}")))
    };
    let listed = |prefix: &str| -> Result<Vec<(f64, usize)>> {
        let p = format!("{prefix}_");
        header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(&p).map(|x| (x, i)))
            .map(|(x, i)| {
                x.parse::<f64>()
                    .map(|v| (v, i))
                    .map_err(|_| Error::Io(format!("bad column label {prefix}_{x}")))
            })
            .collect()
    };
    let fixed = FIXED_COLUMNS
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let scalars = SCALAR_TAIL
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let index = INDEX_TAIL
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let (ialpha, ipow, imean0, imeanphi, dp) = (
        listed("ialpha")?,
        listed("ipow")?,
        listed("imean0")?,
        listed("imeanphi")?,
        listed("dp")?,
    );
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Io(format!(
                "trajectory row {} has {} cells, expected {}",
                row + 1,
                cells.len(),
                header.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i].parse::<f64>().map_err(|_| {
                Error::Io(format!(
                    "trajectory row {}: bad number {}",
                    row + 1,
                    cells[i]
                ))
            })
        };
        let int = |i: usize| -> Result<u64> {
            cells[i].parse::<u64>().map_err(|_| {
                Error::Io(format!(
                    "trajectory row {}: bad integer {}",
                    row + 1,
                    cells[i]
                ))
            })
        };
        let pairs = |cols: &[(f64, usize)]| -> Result<Vec<(f64, f64)>> {
            cols.iter().map(|(x, i)| Ok((*x, num(*i)?))).collect()
        };
        let v = fixed.iter().map(|i| num(*i)).collect::<Result<Vec<_>>>()?;
        let s = scalars
            .iter()
            .map(|i| num(*i))
            .collect::<Result<Vec<_>>>()?;
        out.push(FunctionalRecord {
            t: v[0],
            c: v[1],
            e: v[2],
            i: v[3],
            j: v[4],
            f: v[5],
            m: v[6],
            sup: v[7],
            inf: v[8],
            osc: v[9],
            entropy: v[10],
            residual: v[11],
            ialpha: pairs(&ialpha)?,
            mean0: s[0],
            meanphi: s[1],
            min_rho: s[2],
            norm_defect: s[3],
            h_meanphi: s[4],
            inf_h: s[5],
            log_trace_max: s[6],
            fdot: s[7],
            mdot: s[8],
            d1_proxy: s[9],
            ipow: pairs(&ipow)?,
            imean0: pairs(&imean0)?,
            imeanphi: pairs(&imeanphi)?,
            dp: pairs(&dp)?,
            argmin: int(index[0])? as usize,
            lelong: num(index[1])?,
            lelong_spread: num(index[2])?,
            steps: int(index[3])?,
            rejected: int(index[4])?,
        });
    }
    Ok(out)
}

/// Checkpoint file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationRecord {
    pub cause: String,
    pub t: f64,
    pub steps: u64,
    pub rejected: u64,
    pub energy_shift: f64,
    /// Integration failures only.
    pub failure: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub wall_seconds: f64,
    pub resumed: bool,
    pub version: String,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// A run directory on disk.
#[derive(Debug, Clone)]
pub struct Archive {
    pub dir: PathBuf,
}

impl Archive {
    pub fn open(dir: &Path) -> Result<Archive> {
        if !dir.join(CONFIG_FILE).is_file() {
            return Err(Error::Usage(format!(
                "{} is not a run archive (no {CONFIG_FILE})",
                dir.display()
            )));
        }
        Ok(Archive {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> Result<RunConfig> {
        read_json(&self.path(CONFIG_FILE))
    }

    /// Trajectory records after the checksum has been verified.
    pub fn records(&self) -> Result<Vec<FunctionalRecord>> {
        self.verify_checksum()?;
        let text = fs::read_to_string(self.path(TRAJECTORY_FILE))?;
        parse_csv(&text)
    }

    pub fn verify_checksum(&self) -> Result<()> {
        let sum_path = self.path(CHECKSUM_FILE);
        let stored = fs::read_to_string(&sum_path).map_err(|_| {
            Error::Checksum(format!(
                "{} (missing {CHECKSUM_FILE}; run incomplete?)",
                TRAJECTORY_FILE
            ))
        })?;
        let stored = stored.split_whitespace().next().unwrap_or("");
        let actual = sha256_file(&self.path(TRAJECTORY_FILE))?;
        if stored == actual {
            Ok(())
        } else {
            Err(Error::Checksum(format!(
                "{TRAJECTORY_FILE}: stored {stored}, actual {actual}"
            )))
        }
    }

    pub fn termination(&self) -> Result<Option<TerminationRecord>> {
        let p = self.path(TERMINATION_FILE);
        if p.is_file() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Checkpoints ordered by step.
    pub fn checkpoints(&self) -> Result<Vec<(PathBuf, Checkpoint)>> {
        let dir = self.path(CHECKPOINT_DIR);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            // a checkpoint cut short by a kill is skipped
            if let Ok(c) = read_json::<Checkpoint>(&path) {
                out.push((path, c));
            }
        }
        out.sort_by_key(|(_, c)| c.snapshot.steps_taken);
        Ok(out)
    }

    /// Cuts the archive back to its last checkpoint and returns it:
    /// later rows, checkpoints, the checksum and the termination record are removed.
    pub fn rewind(&self) -> Result<Checkpoint> {
        let config = self.config()?;
        let hash = config.hash();
        let checkpoints = self.checkpoints()?;
        let (keep, last) = checkpoints
            .iter()
            .rev()
            .find(|(_, c)| c.config_hash == hash)
            .cloned()
            .ok_or_else(|| Error::Usage(format!("{}: no usable checkpoint", self.dir.display())))?;
        for (path, c) in &checkpoints {
            if c.snapshot.steps_taken > last.snapshot.steps_taken
                || (c.config_hash != hash && *path != keep)
            {
                fs::remove_file(path)?;
            }
        }
        let text = fs::read_to_string(self.path(TRAJECTORY_FILE))?;
        let mut kept = String::new();
        let mut steps_col = None;
        for line in text.split_inclusive('\n') {
            if !line.ends_with('\n') {
                break;
            }
            let body = line.trim_end_matches('\n');
            if body.starts_with('#') {
                kept.push_str(line);
                continue;
            }
            match steps_col {
                None => {
                    steps_col = body.split(',').position(|h| h == "steps");
                    if steps_col.is_none() {
                        return Err(Error::Io("trajectory lacks column steps".into()));
                    }
                    kept.push_str(line);
                }
                Some(col) => {
                    let steps = body.split(',').nth(col).and_then(|s| s.parse::<u64>().ok());
                    match steps {
                        Some(s) if s <= last.snapshot.steps_taken => kept.push_str(line),
                        _ => break,
                    }
                }
            }
        }
        fs::write(self.path(TRAJECTORY_FILE), kept)?;
        for name in [CHECKSUM_FILE, TERMINATION_FILE] {
            let p = self.path(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(last)
    }
}

/// Streams samples and checkpoints of a running flow into an archive.
pub struct ArchiveWriter {
    archive: Archive,
    csv: BufWriter<File>,
    hash: String,
    seed: u64,
    header_written: bool,
}

impl ArchiveWriter {
    /// Starts a fresh archive in `dir`, replacing any previous run there.
    pub fn create(dir: &Path, config: &RunConfig) -> Result<ArchiveWriter> {
        fs::create_dir_all(dir)?;
        for name in [
            TRAJECTORY_FILE,
            CHECKSUM_FILE,
            TERMINATION_FILE,
            METADATA_FILE,
        ] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        let ck = dir.join(CHECKPOINT_DIR);
        if ck.is_dir() {
            fs::remove_dir_all(&ck)?;
        }
        fs::create_dir_all(&ck)?;
        write_json(&dir.join(CONFIG_FILE), config)?;
        let hash = config.hash();
        let mut csv = BufWriter::new(File::create(dir.join(TRAJECTORY_FILE))?);
        writeln!(csv, "# imaflow trajectory config_hash={hash}")?;
        Ok(ArchiveWriter {
            archive: Archive {
                dir: dir.to_path_buf(),
            },
            csv,
            hash,
            seed: config.seed,
            header_written: false,
        })
    }

    /// Appends to an archive that has been rewound to a checkpoint.
    pub fn append(archive: &Archive, config: &RunConfig) -> Result<ArchiveWriter> {
        let path = archive.path(TRAJECTORY_FILE);
        let header_written = BufReader::new(File::open(&path)?)
            .lines()
            .map_while(|l| l.ok())
            .any(|l| !l.starts_with('#'));
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(ArchiveWriter {
            archive: archive.clone(),
            csv: BufWriter::new(file),
            hash: config.hash(),
            seed: config.seed,
            header_written,
        })
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    /// Writes the termination record, metadata and checksum.
    pub fn finish(
        mut self,
        termination: &TerminationRecord,
        wall_seconds: f64,
        resumed: bool,
    ) -> Result<Archive> {
        self.csv.flush()?;
        write_json(&self.archive.path(TERMINATION_FILE), termination)?;
        write_json(
            &self.archive.path(METADATA_FILE),
            &Metadata {
                config_hash: self.hash.clone(),
                wall_seconds,
                resumed,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        )?;
        let sum = sha256_file(&self.archive.path(TRAJECTORY_FILE))?;
        fs::write(
            self.archive.path(CHECKSUM_FILE),
            format!("{sum}  {TRAJECTORY_FILE}\n"),
        )?;
        Ok(self.archive)
    }
}

impl TrajectorySink for ArchiveWriter {
    fn record(&mut self, record: &FunctionalRecord) -> Result<()> {
        if !self.header_written {
            writeln!(self.csv, "{}", header_of(record).join(","))?;
            self.header_written = true;
        }
        writeln!(self.csv, "{}", csv_row(record))?;
        self.csv.flush()?;
        Ok(())
    }

    fn checkpoint(&mut self, snapshot: &Snapshot) -> Result<()> {
        let name = format!("step_{:010}.json", snapshot.steps_taken);
        let ck = Checkpoint {
            config_hash: self.hash.clone(),
            seed: self.seed,
            snapshot: snapshot.clone(),
        };
        let path = self.archive.path(CHECKPOINT_DIR).join(name);
        let tmp = path.with_extension("tmp");
        write_json(&tmp, &ck)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}
