//! Output directory bookkeeping, key-value reports and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dynqueue::output::format_f64;
use dynqueue::{CriticalPoint, StabilityConstants};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";

/// Writes files under one root and remembers what was written.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        // a stale manifest would mark a half-written run as complete
        let stale = root.join(MANIFEST);
        if stale.exists() {
            fs::remove_file(&stale).with_context(|| format!("removing {}", stale.display()))?;
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Opens `rel` for writing, runs `body`, and flushes.
    pub fn write_with<F>(&mut self, rel: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        write_file(&self.root, rel, body)?;
        self.record(rel);
        Ok(())
    }

    /// Lists a file written elsewhere under the root.
    pub fn record(&mut self, rel: &str) {
        self.files.push(rel.to_string());
    }

    pub fn write_str(&mut self, rel: &str, text: &str) -> Result<()> {
        self.write_with(rel, |w| w.write_all(text.as_bytes()))
    }

    /// Writes the manifest; call after everything else is on disk.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        self.files.sort();
        manifest.files = std::mem::take(&mut self.files);
        let json = serde_json::to_string_pretty(&manifest)?;
        let path = self.root.join(MANIFEST);
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn write_file<F>(root: &Path, rel: &str, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Ordered `key=value` lines.
#[derive(Debug, Default, Clone)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn text(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.text(key, format_f64(value))
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct Constants {
    pub x_min: f64,
    pub x_tilde: f64,
    pub x_l1: f64,
    pub x_l2: f64,
    pub x_u1: f64,
    pub x_u2: f64,
    pub x_lower: f64,
    pub x_upper: f64,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
}

impl From<&StabilityConstants> for Constants {
    fn from(k: &StabilityConstants) -> Self {
        Constants {
            x_min: k.x_min,
            x_tilde: k.x_tilde,
            x_l1: k.x_l1,
            x_l2: k.x_l2,
            x_u1: k.x_u1,
            x_u2: k.x_u2,
            x_lower: k.x_lower,
            x_upper: k.x_upper,
            c1: k.c1,
            c2: k.c2,
            c: k.c,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Derived {
    pub tau: f64,
    pub lambda_eq_max: f64,
    pub x_th: f64,
    pub degenerate: bool,
    pub gap_at_min: f64,
    pub constants: Option<Constants>,
}

impl Derived {
    pub fn new(critical: &CriticalPoint, constants: Option<&StabilityConstants>) -> Self {
        Derived {
            tau: critical.tau,
            lambda_eq_max: critical.lambda_eq_max,
            x_th: critical.x_th,
            degenerate: critical.degenerate,
            gap_at_min: critical.gap_at_min,
            constants: constants.map(Constants::from),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub lambda: f64,
    pub policy: String,
    pub verdict: String,
    pub max_queue: u64,
    pub growth_rate: Option<f64>,
    pub dir: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub command: String,
    /// Resolved configuration; feeding it back reproduces the run.
    pub config: String,
    pub derived: Derived,
    pub runs: Vec<RunRecord>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: String, derived: Derived) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            derived,
            runs: Vec::new(),
            files: Vec::new(),
        }
    }
}
