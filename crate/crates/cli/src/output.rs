use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub const MANIFEST_SCHEMA: u32 = 1;

/// Artifact directory that records every file it writes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Artifacts { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut body = header.join(",");
        body.push('\n');
        for row in rows {
            let _ = writeln!(body, "{}", row.join(","));
        }
        self.write_with(name, |w| Ok(w.write_all(body.as_bytes())?))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            Ok(w.write_all(b"\n")?)
        })
    }

    /// Writes `manifest.json` listing every artifact including itself.
    pub fn finish(mut self, config: &RunConfig, experiment: &str, seed: u64, threads: usize) -> Result<()> {
        self.files.push("manifest.json".into());
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA,
            experiment,
            seed,
            threads,
            versions: Versions { rough_llg: rough_llg::VERSION, cli: env!("CARGO_PKG_VERSION") },
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
            files: self.files.clone(),
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Serialize)]
struct Versions {
    rough_llg: &'static str,
    cli: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    experiment: &'a str,
    seed: u64,
    threads: usize,
    versions: Versions,
    created_unix: u64,
    config: &'a RunConfig,
    files: Vec<String>,
}

/// Shortest round-trip decimal form, stable across runs.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, requirement: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), value, requirement: requirement.into(), pass }
    }

    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check::new(name, value, format!("<= {limit:e}"), value <= limit)
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub all_pass: bool,
    pub results: serde_json::Value,
}

impl Summary {
    pub fn new(experiment: &str, seed: u64, checks: Vec<Check>, results: serde_json::Value) -> Self {
        let all_pass = checks.iter().all(|c| c.pass);
        Summary { experiment: experiment.into(), seed, checks, all_pass, results }
    }

    pub fn print(&self) {
        for c in &self.checks {
            println!("{}: {} (value {}, required {})", c.name, if c.pass { "PASS" } else { "FAIL" }, num(c.value), c.requirement);
        }
        println!("{}: {}", self.experiment, if self.all_pass { "all checks pass" } else { "some checks fail" });
    }
}
