//! Run telemetry and its CSV / JSON exports.
//!
//! A CSV export is a directory holding `epochs.csv`, `steps.csv` and
//! `log.json` (config echo, counters, phase marks). A JSON export is a
//! single `metrics.json` with the same content. Column orders are fixed by
//! [`EPOCH_COLUMNS`] and [`STEP_COLUMNS`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::Split;
use crate::error::{Error, Result};

pub const EPOCH_COLUMNS: [&str; 10] = [
    "epoch",
    "steps",
    "oracle_calls",
    "train_loss",
    "train_acc",
    "test_acc",
    "weight_norm",
    "distance_to_init",
    "predator_train_acc",
    "predator_test_acc",
];

pub const STEP_COLUMNS: [&str; 7] = [
    "step",
    "loss",
    "step_norm",
    "distance_to_init",
    "d_t",
    "p_d_t",
    "predator_step_norm",
];

/// Evaluated once per epoch, after all of its batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Main-loop steps so far.
    pub steps: u64,
    /// Gradient evaluations so far, pre-training included.
    pub oracle_calls: u64,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub weight_norm: f64,
    pub distance_to_init: f64,
    pub predator_train_acc: Option<f64>,
    pub predator_test_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub loss: f64,
    /// `‖m̂/(√v̂+ε)‖` of the (prey) update.
    pub step_norm: f64,
    pub distance_to_init: f64,
    pub d_t: Option<f64>,
    pub p_d_t: Option<f64>,
    pub predator_step_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub config: ExperimentConfig,
    pub steps_per_epoch: u64,
    /// Prey-only steps taken before the main loop (agent variants).
    pub pretrain_steps: u64,
    pub total_steps: u64,
    pub oracle_calls: u64,
    pub initial_weight_norm: f64,
    pub memorization_epoch: Option<u64>,
    pub generalization_epoch: Option<u64>,
    /// Oracle calls spent when the test threshold was first crossed.
    pub generalization_oracle_calls: Option<u64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRow>,
}

impl MetricsLog {
    pub fn new(config: ExperimentConfig, steps_per_epoch: u64, initial_weight_norm: f64) -> Self {
        MetricsLog {
            config,
            steps_per_epoch,
            pretrain_steps: 0,
            total_steps: 0,
            oracle_calls: 0,
            initial_weight_norm,
            memorization_epoch: None,
            generalization_epoch: None,
            generalization_oracle_calls: None,
            epochs: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Refresh the phase marks from the epoch series.
    pub fn update_phases(&mut self) {
        self.memorization_epoch = detect_phase(&self.epochs, self.config.train_threshold, Split::Train);
        self.generalization_epoch = detect_phase(&self.epochs, self.config.test_threshold, Split::Test);
        self.generalization_oracle_calls = self
            .generalization_epoch
            .map(|e| self.epochs[(e - 1) as usize].oracle_calls);
    }
}

/// First epoch (1-based) whose accuracy on `split` reaches `threshold`.
pub fn detect_phase(epochs: &[EpochRecord], threshold: f64, split: Split) -> Option<u64> {
    epochs
        .iter()
        .find(|e| {
            let acc = match split {
                Split::Train => e.train_acc,
                Split::Test => e.test_acc,
            };
            acc.is_some_and(|a| a >= threshold)
        })
        .map(|e| e.epoch)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct Summary {
    config: ExperimentConfig,
    steps_per_epoch: u64,
    pretrain_steps: u64,
    total_steps: u64,
    oracle_calls: u64,
    initial_weight_norm: f64,
    memorization_epoch: Option<u64>,
    generalization_epoch: Option<u64>,
    generalization_oracle_calls: Option<u64>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            offset: 0,
            message: format!("{}: {other:?}", path.display()),
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let got = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Format {
            offset: 0,
            message: format!("{}: unexpected header {:?}", path.display(), got),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Write `log` under directory `dir` and return the files written.
pub fn export_metrics(log: &MetricsLog, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ExportFormat::Csv => {
            let epochs = dir.join("epochs.csv");
            let steps = dir.join("steps.csv");
            let summary = dir.join("log.json");
            write_rows(&epochs, &EPOCH_COLUMNS, &log.epochs)?;
            write_rows(&steps, &STEP_COLUMNS, &log.steps)?;
            let s = Summary {
                config: log.config.clone(),
                steps_per_epoch: log.steps_per_epoch,
                pretrain_steps: log.pretrain_steps,
                total_steps: log.total_steps,
                oracle_calls: log.oracle_calls,
                initial_weight_norm: log.initial_weight_norm,
                memorization_epoch: log.memorization_epoch,
                generalization_epoch: log.generalization_epoch,
                generalization_oracle_calls: log.generalization_oracle_calls,
            };
            write_json(&summary, &s)?;
            Ok(vec![epochs, steps, summary])
        }
        ExportFormat::Json => {
            let path = dir.join("metrics.json");
            write_json(&path, log)?;
            Ok(vec![path])
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::invalid(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

/// Read back an export written by [`export_metrics`].
pub fn parse_metrics(dir: &Path, format: ExportFormat) -> Result<MetricsLog> {
    match format {
        ExportFormat::Json => read_json(&dir.join("metrics.json")),
        ExportFormat::Csv => {
            let s: Summary = read_json(&dir.join("log.json"))?;
            Ok(MetricsLog {
                config: s.config,
                steps_per_epoch: s.steps_per_epoch,
                pretrain_steps: s.pretrain_steps,
                total_steps: s.total_steps,
                oracle_calls: s.oracle_calls,
                initial_weight_norm: s.initial_weight_norm,
                memorization_epoch: s.memorization_epoch,
                generalization_epoch: s.generalization_epoch,
                generalization_oracle_calls: s.generalization_oracle_calls,
                epochs: read_rows(&dir.join("epochs.csv"), &EPOCH_COLUMNS)?,
                steps: read_rows(&dir.join("steps.csv"), &STEP_COLUMNS)?,
            })
        }
    }
}

/// Detect which export format a directory holds.
pub fn detect_format(dir: &Path) -> Option<ExportFormat> {
    if dir.join("metrics.json").is_file() {
        Some(ExportFormat::Json)
    } else if dir.join("log.json").is_file() {
        Some(ExportFormat::Csv)
    } else {
        None
    }
}
