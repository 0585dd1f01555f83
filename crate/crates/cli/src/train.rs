use std::path::{Path, PathBuf};

use drivenhunt::harness::{
    export_metrics, post_memorization_calls, run as run_experiment, Checkpoint, ExportFormat, MetricsLog, Task, Variant,
    Workload,
};
use drivenhunt::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{create_dir, resolve_config, sha256_hex, write_file, write_json, Manifest};

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// TOML experiment config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `dotted.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// adamw_baseline, ppm or ppconn.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    max_epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to start the agents from, usually a baseline's memorization snapshot.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Summary of a baseline run to compare oracle calls against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Relative dataset paths resolve against this directory.
    #[arg(long, default_value = ".")]
    data_root: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// `summary.json` of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub epochs: u64,
    pub total_steps: u64,
    pub pretrain_steps: u64,
    pub oracle_calls: u64,
    pub memorization_epoch: Option<u64>,
    pub generalization_epoch: Option<u64>,
    pub generalization_oracle_calls: Option<u64>,
    /// Oracle calls from memorization to the test threshold; a warm-started
    /// run counts all of its calls.
    pub post_memorization_calls: Option<u64>,
    pub warm_start: Option<PathBuf>,
    pub reference: Option<Comparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub path: PathBuf,
    pub reference_post_memorization_calls: Option<u64>,
    /// This run's post-memorization calls over the reference's.
    pub oracle_call_ratio: Option<f64>,
}

pub fn summarize(log: &MetricsLog, warm: bool) -> Summary {
    Summary {
        task: log.config.task,
        variant: log.config.variant,
        seed: log.config.seed,
        epochs: log.epochs.len() as u64,
        total_steps: log.total_steps,
        pretrain_steps: log.pretrain_steps,
        oracle_calls: log.oracle_calls,
        memorization_epoch: log.memorization_epoch,
        generalization_epoch: log.generalization_epoch,
        generalization_oracle_calls: log.generalization_oracle_calls,
        post_memorization_calls: if warm {
            log.generalization_oracle_calls
        } else {
            post_memorization_calls(log)
        },
        warm_start: None,
        reference: None,
    }
}

fn slug<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn run(a: Args, root: &Path) -> Result<PathBuf> {
    let mut overrides = a.overrides.clone();
    if let Some(v) = &a.variant {
        overrides.push(format!("variant=\"{v}\""));
    }
    if let Some(m) = a.max_epochs {
        overrides.push(format!("max_epochs={m}"));
    }
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = resolve_config(a.config.as_deref(), &overrides)?;

    let reference: Option<Summary> = match &a.reference {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    if let Some(r) = &reference {
        if r.task != cfg.task {
            return Err(Error::Config("reference summary is for a different task".into()));
        }
    }
    let warm = match &a.warm_start {
        Some(p) if !cfg.variant.is_agent() => {
            return Err(Error::Config(format!(
                "--warm-start {} needs an agent variant",
                p.display()
            )))
        }
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };

    let work = Workload::build(&cfg, &a.data_root)?;
    let dir = a.out.clone().unwrap_or_else(|| {
        root.join(format!("train-{}-{}-s{}", slug(&cfg.task), slug(&cfg.variant), cfg.seed))
    });
    create_dir(&dir)?;
    log::info!("training into {}", dir.display());

    let out = run_experiment(&cfg, &work, warm.as_ref())?;

    let format = match a.format {
        Format::Csv => ExportFormat::Csv,
        Format::Json => ExportFormat::Json,
    };
    let mut files = export_metrics(&out.log, &dir, format)?;
    let ck = dir.join("checkpoint.json");
    out.final_checkpoint.save(&ck)?;
    files.push(ck);
    if let Some(m) = &out.memorization_checkpoint {
        let p = dir.join("memorization_checkpoint.json");
        m.save(&p)?;
        files.push(p);
    }
    let cfg_path = dir.join("config.toml");
    write_file(&cfg_path, cfg.to_toml_string().as_bytes())?;
    files.push(cfg_path);

    let mut summary = summarize(&out.log, warm.is_some());
    summary.warm_start = a.warm_start.clone();
    summary.reference = match (&a.reference, &reference) {
        (Some(path), Some(r)) => Some(Comparison {
            path: path.clone(),
            reference_post_memorization_calls: r.post_memorization_calls,
            oracle_call_ratio: match (summary.post_memorization_calls, r.post_memorization_calls) {
                (Some(me), Some(them)) if them > 0 => Some(me as f64 / them as f64),
                _ => None,
            },
        }),
        _ => None,
    };
    let sum_path = dir.join("summary.json");
    write_json(&sum_path, &summary)?;
    files.push(sum_path);

    let warm_sha = match &a.warm_start {
        Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let mut m = Manifest::new(
        "train",
        cfg.seed,
        json!({
            "data_root": a.data_root,
            "format": slug(&format),
            "warm_start": a.warm_start,
            "warm_start_sha256": warm_sha,
        }),
    );
    m.config = Some(cfg);
    m.write(&dir, &files)?;
    Ok(dir)
}
