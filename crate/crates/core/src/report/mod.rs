//! Report plumbing shared by the CLI subcommands: input discovery and
//! loading, output files, and the run manifest.

pub mod commands;
pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::capture::{read_capture, CaptureStats};
use crate::flow::{apply_labels, assemble_biflows, load_label_map, Biflow};
use crate::markov::InputDigest;

pub use config::Config;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CAPTURE_EXTENSIONS: [&str; 3] = ["pcap", "pcapng", "cap"];

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad flags, missing inputs, violated input contracts.
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

impl RunError {
    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        RunError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        2
    }
}

/// Successful run; any warning turns the exit code into 1.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    /// Human-readable result lines for the terminal.
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.warnings.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub timings: Vec<StageTiming>,
    pub counters: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

/// Collects outputs, timings, counters and warnings for one run and
/// writes them next to the reports.
#[derive(Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub command: String,
    pub config: Config,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    pub timings: Vec<StageTiming>,
    pub counters: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    pub summary: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, config: &Config) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::stage("output", format!("{}: {e}", dir.display())))?;
        Ok(Run {
            dir: dir.to_owned(),
            command: command.to_string(),
            config: config.clone(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            timings: Vec::new(),
            counters: BTreeMap::new(),
            warnings: Vec::new(),
            outputs: Vec::new(),
            summary: Vec::new(),
        })
    }

    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis: t.elapsed().as_secs_f64() * 1e3,
        });
        r
    }

    pub fn count(&mut self, key: impl Into<String>, n: u64) {
        *self.counters.entry(key.into()).or_default() += n;
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::debug!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
        RunError::stage("output", format!("{}: {e}", path.display()))
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), RunError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Self::io_err(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| Self::io_err(&path, e))?;
        }
        w.flush().map_err(|e| Self::io_err(&path, e))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Self::io_err(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Self::io_err(&path, e))
    }

    pub fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<(), RunError> {
        let path = self.path(name);
        fs::write(&path, data).map_err(|e| Self::io_err(&path, e))
    }

    /// Records an output written by other code.
    pub fn output_path(&mut self, name: &str) -> PathBuf {
        self.path(name)
    }

    pub fn finish(mut self) -> Result<Outcome, RunError> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            inputs: std::mem::take(&mut self.inputs),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            timings: std::mem::take(&mut self.timings),
            counters: std::mem::take(&mut self.counters),
            warnings: self.warnings.clone(),
            outputs: self.outputs.clone(),
        };
        let path = self.dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Self::io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Self::io_err(&path, e))?;
        Ok(Outcome {
            out_dir: self.dir,
            warnings: self.warnings,
            outputs: self.outputs,
            summary: self.summary,
        })
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn is_capture(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| CAPTURE_EXTENSIONS.iter().any(|c| c.eq_ignore_ascii_case(e)))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else if is_capture(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Expands directories into the capture files below them, sorted.
pub fn discover_captures(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, RunError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found = Vec::new();
            walk(p, &mut found).map_err(|e| RunError::Usage(format!("{}: {e}", p.display())))?;
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(RunError::Usage(format!("{}: no such file or directory", p.display())));
        }
    }
    if out.is_empty() {
        return Err(RunError::Usage("no captures found".into()));
    }
    Ok(out)
}

/// `x.labels.toml` or `x.pcap.labels.toml` next to capture `x.pcap`.
pub fn sidecar_for(capture: &Path) -> Option<PathBuf> {
    let stem = capture.with_extension("labels.toml");
    let full = PathBuf::from(format!("{}.labels.toml", capture.display()));
    [stem, full].into_iter().find(|p| p.is_file())
}

#[derive(Debug, Clone)]
pub struct LoadedCapture {
    pub path: String,
    pub sha256: String,
    pub stats: CaptureStats,
    pub flows: Vec<Biflow>,
    pub labels: Option<PathBuf>,
}

fn load_one(path: &Path, require_labels: bool) -> Result<LoadedCapture, RunError> {
    let sha256 = sha256_file(path).map_err(|e| RunError::stage("ingest", format!("{}: {e}", path.display())))?;
    let trace = read_capture(path).map_err(|e| RunError::stage("ingest", e))?;
    let mut flows = assemble_biflows(&trace);
    let labels = sidecar_for(path);
    match &labels {
        Some(lp) => {
            let map = load_label_map(lp).map_err(|e| RunError::stage("labels", e))?;
            apply_labels(&mut flows, &map);
        }
        None if require_labels => {
            return Err(RunError::Usage(format!(
                "{}: no label file found (looked for {})",
                path.display(),
                path.with_extension("labels.toml").display()
            )))
        }
        None => {}
    }
    Ok(LoadedCapture {
        path: path.display().to_string(),
        sha256,
        stats: trace.stats,
        flows,
        labels,
    })
}

/// Reads, assembles and labels every capture on `jobs` threads. Results
/// keep the input order.
pub fn load_captures(run: &mut Run, paths: &[PathBuf]) -> Result<Vec<LoadedCapture>, RunError> {
    let require = run.config.require_labels;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.config.jobs)
        .build()
        .map_err(|e| RunError::stage("ingest", e))?;
    let loaded: Vec<Result<LoadedCapture, RunError>> =
        run.time("ingest", || pool.install(|| paths.par_iter().map(|p| load_one(p, require)).collect()));
    let loaded: Vec<LoadedCapture> = loaded.into_iter().collect::<Result<_, _>>()?;
    for c in &loaded {
        run.inputs.push(InputDigest {
            path: c.path.clone(),
            sha256: c.sha256.clone(),
        });
        if let Some(l) = &c.labels {
            if let Ok(sha256) = sha256_file(l) {
                run.inputs.push(InputDigest {
                    path: l.display().to_string(),
                    sha256,
                });
            }
        } else {
            run.warn(format!("{}: no label file; flows are labeled UNK", c.path));
        }
        run.count("capture.frames", c.stats.total_frames);
        run.count("capture.decoded", c.stats.decoded);
        run.count("capture.truncated_packets", c.stats.truncated_packets);
        for (reason, n) in &c.stats.skipped {
            run.count(reason.code(), *n);
        }
        run.count("flow.biflows", c.flows.len() as u64);
    }
    Ok(loaded)
}

/// Safe file-name fragment.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
