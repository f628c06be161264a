//! Output directory handling: files, the echoed config and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use vascmech::config::RunConfig;

use crate::CliError;

pub fn internal(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{}: {e}", path.display()))
}

/// Output directory of one stage.
#[derive(Debug)]
pub struct OutDir {
    pub root: PathBuf,
    stage: &'static str,
    started: Instant,
    timings: Vec<(String, f64)>,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    stage: &'a str,
    threads: usize,
    timings_s: Vec<(String, f64)>,
    total_s: f64,
    files: &'a [String],
    details: T,
}

impl OutDir {
    pub fn create(root: &Path, stage: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(internal(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            stage,
            started: Instant::now(),
            timings: Vec::new(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(internal(parent))?;
        }
        fs::write(&p, bytes).map_err(internal(&p))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Runs `f` into a buffer and writes it to `name`.
    pub fn write_with<E: std::fmt::Display>(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::Internal(format!("{name}: {e}")))?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Echoes the effective configuration as `config.txt`.
    pub fn write_config(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        self.write("config.txt", cfg.to_text().as_bytes())
    }

    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push((label.to_string(), t.elapsed().as_secs_f64()));
        out
    }

    /// Writes `manifest.json` with stage, version, timings and the file list.
    pub fn finish<T: Serialize>(mut self, threads: usize, details: T) -> Result<(), CliError> {
        self.files.sort();
        let m = Manifest {
            tool: "vascmech",
            version: env!("CARGO_PKG_VERSION"),
            stage: self.stage,
            threads,
            timings_s: self.timings.clone(),
            total_s: self.started.elapsed().as_secs_f64(),
            files: &self.files,
            details,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        let p = self.path("manifest.json");
        fs::write(&p, text).map_err(internal(&p))
    }
}
