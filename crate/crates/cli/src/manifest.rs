//! Run manifests: a JSON record of what a command did, written next to its
//! output so the run can be repeated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;
use vle_core::recordio::atomic_write;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    /// Resolved configuration, after defaults, flags and `VLE_SEED`.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_secs: 0.0,
            metrics: BTreeMap::new(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn metric(&mut self, name: &str, value: impl Into<serde_json::Value>) {
        self.metrics.insert(name.to_owned(), value.into());
    }

    pub fn write(mut self, path: &Path, started: Instant) -> Result<()> {
        self.wall_clock_secs = started.elapsed().as_secs_f64();
        let mut text = serde_json::to_vec_pretty(&self)?;
        text.push(b'\n');
        atomic_write(path, |w| {
            w.write_all(&text).map_err(|source| vle_core::Error::Io {
                path: path.to_path_buf(),
                source,
            })
        })?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

/// Manifest path for a single-file output: `<out>.manifest.json`.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
