//! Long-format comparison tables, one per figure panel, keyed by run label.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use drivenhunt::harness::metrics::detect_format;
use drivenhunt::harness::{parse_metrics, post_memorization_calls, MetricsLog};
use drivenhunt::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{create_dir, Manifest};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Run directories holding metric exports.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AccuracyRow<'a> {
    run: &'a str,
    variant: &'a str,
    epoch: u64,
    oracle_calls: u64,
    train_acc: Option<f64>,
    test_acc: Option<f64>,
    predator_train_acc: Option<f64>,
    predator_test_acc: Option<f64>,
}

#[derive(Serialize)]
struct NormRow<'a> {
    run: &'a str,
    variant: &'a str,
    epoch: u64,
    weight_norm: f64,
}

#[derive(Serialize)]
struct StepNormRow<'a> {
    run: &'a str,
    variant: &'a str,
    step: u64,
    step_norm: f64,
    predator_step_norm: Option<f64>,
    p_d_t: Option<f64>,
}

#[derive(Serialize)]
struct DistanceRow<'a> {
    run: &'a str,
    variant: &'a str,
    step: u64,
    distance_to_init: f64,
    d_t: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    run: &'a str,
    variant: &'a str,
    seed: u64,
    epochs: usize,
    oracle_calls: u64,
    memorization_epoch: Option<u64>,
    generalization_epoch: Option<u64>,
    post_memorization_calls: Option<u64>,
}

struct Table {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl Table {
    fn new(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        Ok(Table { path, w })
    }

    fn row<T: Serialize>(&mut self, r: &T) -> Result<()> {
        self.w.serialize(r).map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

fn label_for(dir: &Path, taken: &mut HashSet<String>) -> String {
    let base = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let mut label = base.clone();
    let mut k = 2;
    while !taken.insert(label.clone()) {
        label = format!("{base}-{k}");
        k += 1;
    }
    label
}

fn load(dir: &Path) -> Result<MetricsLog> {
    let format = detect_format(dir).ok_or_else(|| {
        Error::Config(format!("{}: no metric export found", dir.display()))
    })?;
    parse_metrics(dir, format).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) => e,
        other => Error::Config(format!("{}: {other}", dir.display())),
    })
}

pub fn run(a: Args, root: &Path) -> Result<PathBuf> {
    let mut taken = HashSet::new();
    let mut runs = Vec::new();
    for dir in &a.runs {
        let log = load(dir)?;
        runs.push((label_for(dir, &mut taken), log));
    }
    let task = runs[0].1.config.task;
    if let Some((label, _)) = runs.iter().find(|(_, l)| l.config.task != task) {
        return Err(Error::Config(format!(
            "run {label} is a different task from {}",
            runs[0].0
        )));
    }

    let dir = a.out.clone().unwrap_or_else(|| root.join("report"));
    create_dir(&dir)?;
    let mut acc = Table::new(&dir, "accuracy_vs_epoch.csv")?;
    let mut norm = Table::new(&dir, "weight_norm_vs_epoch.csv")?;
    let mut step = Table::new(&dir, "step_norm_vs_step.csv")?;
    let mut dist = Table::new(&dir, "distance_vs_step.csv")?;
    let mut summ = Table::new(&dir, "runs.csv")?;
    for (label, log) in &runs {
        let variant = serde_json::to_value(log.config.variant)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let (run, variant) = (label.as_str(), variant.as_str());
        for e in &log.epochs {
            acc.row(&AccuracyRow {
                run,
                variant,
                epoch: e.epoch,
                oracle_calls: e.oracle_calls,
                train_acc: e.train_acc,
                test_acc: e.test_acc,
                predator_train_acc: e.predator_train_acc,
                predator_test_acc: e.predator_test_acc,
            })?;
            norm.row(&NormRow {
                run,
                variant,
                epoch: e.epoch,
                weight_norm: e.weight_norm,
            })?;
        }
        for s in &log.steps {
            step.row(&StepNormRow {
                run,
                variant,
                step: s.step,
                step_norm: s.step_norm,
                predator_step_norm: s.predator_step_norm,
                p_d_t: s.p_d_t,
            })?;
            dist.row(&DistanceRow {
                run,
                variant,
                step: s.step,
                distance_to_init: s.distance_to_init,
                d_t: s.d_t,
            })?;
        }
        summ.row(&SummaryRow {
            run,
            variant,
            seed: log.config.seed,
            epochs: log.epochs.len(),
            oracle_calls: log.oracle_calls,
            memorization_epoch: log.memorization_epoch,
            generalization_epoch: log.generalization_epoch,
            post_memorization_calls: post_memorization_calls(log),
        })?;
    }
    let files = [acc.finish()?, norm.finish()?, step.finish()?, dist.finish()?, summ.finish()?];
    let seed = runs[0].1.config.seed;
    let params = json!({
        "runs": a.runs,
        "labels": runs.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
    });
    Manifest::new("report", seed, params).write(&dir, &files)?;
    Ok(dir)
}
