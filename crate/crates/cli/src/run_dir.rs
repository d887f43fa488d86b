//! On-disk layout of one training run.
//!
//! ```text
//! <output_dir>/<run_id>/
//!   config.toml        snapshot, written before epoch 0
//!   metrics.jsonl      append-only records, one JSON object per line
//!   checkpoints/       latest.ckpt (every epoch) and final.ckpt
//!   plot-data/         whitespace-separated series for `ham plot`
//!   reports/           CSV and JSON tables
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LATEST_CHECKPOINT: &str = "checkpoints/latest.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.ckpt";

/// Fields excluded when comparing logs across runs.
pub const TIMING_FIELDS: [&str; 2] = ["timestamp", "wall_seconds"];

#[derive(Debug)]
pub struct RunDirectory {
    root: PathBuf,
    metrics: File,
}

impl RunDirectory {
    /// Creates a fresh run directory and writes the config snapshot.
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        if root.join(CONFIG_FILE).exists() {
            bail!(
                "{} already holds a run; pass --resume to continue it or choose another --out",
                root.display()
            );
        }
        for sub in ["checkpoints", "plot-data", "reports"] {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        fs::write(root.join(CONFIG_FILE), config.to_toml()).context("writing config snapshot")?;
        let metrics = File::create(root.join(METRICS_FILE)).context("creating metrics log")?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
        })
    }

    /// Opens an existing run for appending.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(CONFIG_FILE).is_file() {
            bail!("{} is not a run directory (no {CONFIG_FILE})", root.display());
        }
        let metrics = OpenOptions::new()
            .append(true)
            .open(root.join(METRICS_FILE))
            .with_context(|| format!("opening {}", root.join(METRICS_FILE).display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            metrics,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn load_config(root: &Path) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::load(&root.join(CONFIG_FILE))?)
    }

    /// Appends `{"kind": kind, "epoch": epoch, "timestamp": now, ...fields}`.
    pub fn record<S: Serialize>(&mut self, kind: &str, epoch: Option<usize>, fields: &S) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::from(kind));
        obj.insert("epoch".into(), epoch.map_or(Value::Null, Value::from));
        obj.insert("timestamp".into(), Value::from(chrono::Utc::now().to_rfc3339()));
        match serde_json::to_value(fields)? {
            Value::Object(extra) => {
                for (k, v) in extra {
                    obj.entry(k).or_insert(v);
                }
            }
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        let line = serde_json::to_string(&Value::Object(obj))?;
        writeln!(self.metrics, "{line}")?;
        self.metrics.flush()?;
        Ok(())
    }
}

/// Metrics log with timing fields removed, one value per record.
pub fn read_metrics_without_timing(path: &Path) -> Result<Vec<Value>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let mut v: Value = serde_json::from_str(&line?)?;
        strip_timing(&mut v);
        out.push(v);
    }
    Ok(out)
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for f in TIMING_FIELDS {
                map.remove(f);
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
