//! Append-only JSONL records.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use snn_dep::dep::DepDiagnostic;

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    /// Mean training loss over the epoch's optimizer steps; absent for the initial record.
    pub train_loss: Option<f64>,
    pub test_acc_clean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_acc_fgsm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_acc_pgd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub poison: bool,
    pub loss: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dep: Vec<DepDiagnostic>,
}

/// Hessian report row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRecord {
    pub step: usize,
    pub batch_id: String,
    pub rho: f64,
    pub top5: Vec<f64>,
    pub pr: f64,
    pub converged_flags: Vec<bool>,
}

pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("bad metrics line"))
        .collect()
}
