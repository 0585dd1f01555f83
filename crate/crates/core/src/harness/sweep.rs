//! Grokking-time sweeps and the least-squares fits behind them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use super::train::{run, Workload};
use crate::data::derive_seed;
use crate::error::{Error, Result};

/// Ordinary least squares `y ≈ slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    let mut distinct: Vec<f64> = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "a fit needs at least 3 distinct x values, got {}",
            distinct.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite data".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

/// `y ≈ B·exp(−x/η)`, fitted as a line through `(x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub b: f64,
    pub eta: f64,
    pub r2: f64,
}

pub fn fit_exponential(xs: &[f64], ys: &[f64]) -> Result<ExpFit> {
    if ys.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::Fit("exponential fit needs positive y".into()));
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let f = fit_linear(xs, &logs)?;
    Ok(ExpFit {
        b: f.intercept.exp(),
        eta: -1.0 / f.slope,
        r2: f.r2,
    })
}

/// One trial of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Sweep coordinate (β or γ).
    pub value: f64,
    pub repeat: u32,
    pub seed: u64,
    /// Measured abscissa: β itself, or the initial weight norm.
    pub x: f64,
    /// Generalization epoch, `None` when censored.
    pub t_g: Option<u64>,
    pub memorization_epoch: Option<u64>,
    pub oracle_calls: u64,
}

/// Per-value average over uncensored repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub x: f64,
    pub mean_t_g: Option<f64>,
    pub n_converged: usize,
    pub n_censored: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Beta,
    InitScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepFit {
    /// `T_g ≈ B·exp(−β/η)`.
    Beta(ExpFit),
    /// `T_g ≈ slope·‖θ_0‖ + intercept`.
    InitNorm(LinearFit),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub repeats: u32,
    pub trials: Vec<Trial>,
    pub points: Vec<SweepPoint>,
    /// `(value, repeat)` of every run that never crossed the test threshold.
    pub censored: Vec<(f64, u32)>,
    pub fit: Option<SweepFit>,
    /// Why the fit is missing, if it is.
    pub fit_error: Option<String>,
}

fn check_grid(values: &[f64], repeats: u32) -> Result<()> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() < 3 {
        return Err(Error::invalid(format!(
            "sweep needs at least 3 distinct values, got {}",
            v.len()
        )));
    }
    if repeats < 1 {
        return Err(Error::invalid("repeats must be >= 1"));
    }
    Ok(())
}

/// Seed of repeat `r`; the same for every sweep value.
pub fn repeat_seed(base: u64, r: u32) -> u64 {
    derive_seed(base, 3, r as u64)
}

fn run_trials(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    repeats: u32,
    jobs: usize,
    base: &Path,
) -> Result<Vec<Trial>> {
    let keys: Vec<(usize, u32)> = (0..values.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let one = |&(i, r): &(usize, u32)| -> Result<Trial> {
        let value = values[i];
        let seed = repeat_seed(cfg.seed, r);
        let mut c = cfg.clone();
        c.seed = seed;
        match axis {
            // a different split of the table per repeat; the network is shared
            SweepAxis::Beta => {
                c.modulo.beta = value;
                c.modulo.seed = seed;
            }
            SweepAxis::InitScale => c.mlp.init_scale = value,
        }
        let work = Workload::build(&c, base)?;
        let out = run(&c, &work, None)?;
        let x = match axis {
            SweepAxis::Beta => value,
            SweepAxis::InitScale => out.log.initial_weight_norm,
        };
        log::info!("sweep value {value} repeat {r}: T_g = {:?}", out.log.generalization_epoch);
        Ok(Trial {
            value,
            repeat: r,
            seed,
            x,
            t_g: out.log.generalization_epoch,
            memorization_epoch: out.log.memorization_epoch,
            oracle_calls: out.log.oracle_calls,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| keys.par_iter().map(one).collect::<Result<Vec<_>>>())
}

/// Average trials per value and fit; censored runs are excluded and listed.
pub fn aggregate(axis: SweepAxis, repeats: u32, mut trials: Vec<Trial>) -> SweepReport {
    trials.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.repeat.cmp(&b.repeat)));
    let mut values: Vec<f64> = trials.iter().map(|t| t.value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let points: Vec<SweepPoint> = values
        .iter()
        .map(|&v| {
            let group: Vec<&Trial> = trials.iter().filter(|t| t.value == v).collect();
            let done: Vec<&Trial> = group.iter().copied().filter(|t| t.t_g.is_some()).collect();
            let x = group.iter().map(|t| t.x).sum::<f64>() / group.len() as f64;
            let mean = (!done.is_empty())
                .then(|| done.iter().map(|t| t.t_g.unwrap() as f64).sum::<f64>() / done.len() as f64);
            SweepPoint {
                value: v,
                x,
                mean_t_g: mean,
                n_converged: done.len(),
                n_censored: group.len() - done.len(),
            }
        })
        .collect();
    let censored = trials
        .iter()
        .filter(|t| t.t_g.is_none())
        .map(|t| (t.value, t.repeat))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.mean_t_g.map(|y| (p.x, y)))
        .unzip();
    let fit = match axis {
        SweepAxis::Beta => fit_exponential(&xs, &ys).map(SweepFit::Beta),
        SweepAxis::InitScale => fit_linear(&xs, &ys).map(SweepFit::InitNorm),
    };
    let (fit, fit_error) = match fit {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    SweepReport {
        axis,
        repeats,
        trials,
        points,
        censored,
        fit,
        fit_error,
    }
}

/// Grokking time against training fraction β on modular arithmetic.
pub fn sweep_beta(cfg: &ExperimentConfig, betas: &[f64], repeats: u32, jobs: usize, base: &Path) -> Result<SweepReport> {
    check_grid(betas, repeats)?;
    if cfg.task != Task::Modulo {
        return Err(Error::Config("a beta sweep needs task = modulo".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
        return Err(Error::invalid(format!("beta {b} outside (0, 1]")));
    }
    let trials = run_trials(cfg, SweepAxis::Beta, betas, repeats, jobs, base)?;
    Ok(aggregate(SweepAxis::Beta, repeats, trials))
}

/// Grokking time against the initial weight norm of the MLP, scaled by γ.
pub fn sweep_init_norm(
    cfg: &ExperimentConfig,
    scales: &[f64],
    repeats: u32,
    jobs: usize,
    base: &Path,
) -> Result<SweepReport> {
    check_grid(scales, repeats)?;
    if cfg.task != Task::Mnist {
        return Err(Error::Config("an init-norm sweep needs task = mnist".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("scale {s} must be > 0")));
    }
    let trials = run_trials(cfg, SweepAxis::InitScale, scales, repeats, jobs, base)?;
    Ok(aggregate(SweepAxis::InitScale, repeats, trials))
}
