use std::path::{Path, PathBuf};

use drivenhunt::harness::sweep::{SweepAxis, SweepFit};
use drivenhunt::harness::{sweep_beta, sweep_init_norm};
use drivenhunt::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{create_dir, resolve_config, write_file, write_json, Manifest};

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Axis {
    Beta,
    InitScale,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated sweep values (β or γ).
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    repeats: u32,
    /// Trials run concurrently; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = ".")]
    data_root: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitRow {
    axis: &'static str,
    repeats: u32,
    n_points: usize,
    n_censored: usize,
    b: Option<f64>,
    eta: Option<f64>,
    slope: Option<f64>,
    intercept: Option<f64>,
    r2: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn run(a: Args, root: &Path) -> Result<PathBuf> {
    let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = match a.axis {
        Axis::Beta => sweep_beta(&cfg, &a.grid, a.repeats, jobs, &a.data_root)?,
        Axis::InitScale => sweep_init_norm(&cfg, &a.grid, a.repeats, jobs, &a.data_root)?,
    };
    let axis = match report.axis {
        SweepAxis::Beta => "beta",
        SweepAxis::InitScale => "init_scale",
    };
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| root.join(format!("sweep-{axis}-s{}", cfg.seed)));
    create_dir(&dir)?;

    let trials = dir.join("trials.csv");
    write_csv(&trials, &report.trials)?;
    let points = dir.join("points.csv");
    write_csv(&points, &report.points)?;

    let mut row = FitRow {
        axis,
        repeats: report.repeats,
        n_points: report.points.iter().filter(|p| p.mean_t_g.is_some()).count(),
        n_censored: report.censored.len(),
        b: None,
        eta: None,
        slope: None,
        intercept: None,
        r2: None,
    };
    match &report.fit {
        Some(SweepFit::Beta(f)) => {
            row.b = Some(f.b);
            row.eta = Some(f.eta);
            row.r2 = Some(f.r2);
        }
        Some(SweepFit::InitNorm(f)) => {
            row.slope = Some(f.slope);
            row.intercept = Some(f.intercept);
            row.r2 = Some(f.r2);
        }
        None => log::warn!("no fit: {}", report.fit_error.as_deref().unwrap_or("unknown")),
    }
    let fit_csv = dir.join("fit.csv");
    write_csv(&fit_csv, &[row])?;
    let fit_json = dir.join("fit.json");
    write_json(&fit_json, &report)?;
    let cfg_path = dir.join("config.toml");
    write_file(&cfg_path, cfg.to_toml_string().as_bytes())?;

    let mut m = Manifest::new(
        "sweep",
        cfg.seed,
        json!({
            "axis": axis,
            "grid": a.grid,
            "repeats": a.repeats,
            "jobs": jobs,
            "data_root": a.data_root,
        }),
    );
    m.config = Some(cfg);
    m.write(&dir, &[trials, points, fit_csv, fit_json, cfg_path])?;
    Ok(dir)
}
