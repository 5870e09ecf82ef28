//! Report assembly: assertions, JSON summary, CSV tables and binary field dumps.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use exitset_core::ScalarField;
use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    /// The statement the assertion checks.
    pub claim: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub tag: String,
    pub config: ExperimentConfig,
    pub constants: Value,
    pub assertions: Vec<Assertion>,
    pub data: serde_json::Map<String, Value>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    out_dir: PathBuf,
}

impl Report {
    pub fn new(tag: &str, config: &ExperimentConfig, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        let constants = serde_json::to_value(exitset_core::bubbles::InteractionConstants::closed_form(config.grid.dim))?;
        Ok(Report {
            tag: tag.to_string(),
            config: config.clone(),
            constants,
            assertions: Vec::new(),
            data: serde_json::Map::new(),
            artifacts: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn check(&mut self, name: &str, claim: &str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion { name: name.into(), claim: claim.into(), pass, detail: detail.into() });
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.data.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let file = format!("{name}.csv");
        let mut w = csv::Writer::from_path(self.out_dir.join(&file))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        self.artifacts.push(file);
        Ok(())
    }

    /// Write a file through a custom serializer.
    pub fn raw(&mut self, file: &str, write: impl FnOnce(BufWriter<File>) -> exitset_core::Result<()>) -> Result<()> {
        let f = File::create(self.out_dir.join(file))?;
        write(BufWriter::new(f))?;
        self.artifacts.push(file.to_string());
        Ok(())
    }

    pub fn field(&mut self, name: &str, field: &ScalarField) -> Result<()> {
        self.raw(&format!("{name}.field"), |w| field.write_to(w))
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.assertions
            .iter()
            .map(|a| format!("{} {}: {} ({})", if a.pass { "PASS" } else { "FAIL" }, a.name, a.claim, a.detail))
            .collect()
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out_dir.join("report.json");
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), self)?;
        Ok(path)
    }
}

/// Machine-readable record of a run that ended in an error.
#[derive(Debug, Serialize)]
pub struct FailureRecord<'a> {
    pub tag: &'a str,
    pub error: String,
    pub chain: Vec<String>,
}

pub fn write_failure(out_dir: &Path, tag: &str, error: &anyhow::Error) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let record = FailureRecord { tag, error: error.to_string(), chain: error.chain().map(|e| e.to_string()).collect() };
    serde_json::to_writer_pretty(File::create(out_dir.join("failure.json"))?, &record)?;
    Ok(())
}
