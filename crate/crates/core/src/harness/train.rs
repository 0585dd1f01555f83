//! Training loops for the baseline and the agent variants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task, Variant};
use super::metrics::{read_json, write_json, EpochRecord, MetricsLog, StepRow};
use crate::agents::{ppm_pretrain, Algorithm, AgentPair, PpmConfig};
use crate::data::{batches, derive_seed, load_mnist, load_mnist_test, split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::landscapes::QuadraticRavine;
use crate::models::{accuracy, BatchOracle, Mlp, MlpSpec, Model, Transformer, TransformerSpec};
use crate::optim::AdamState;
use crate::oracle::GradientOracle;
use crate::paramvec::ParamVector;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which network a parameter vector belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelDesc {
    Transformer(TransformerSpec),
    Mlp(MlpSpec),
    Ravine { dim: usize },
}

/// Flat parameters plus enough context to resume or warm-start from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelDesc,
    /// Epoch after which the snapshot was taken.
    pub epoch: u64,
    pub params: ParamVector,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 0,
                message: format!(
                    "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    path.display(),
                    ck.version
                ),
            });
        }
        Ok(ck)
    }
}

/// Model and data for one run.
pub enum Workload {
    Supervised {
        model: Box<dyn Model>,
        desc: ModelDesc,
        train: Dataset,
        test: Dataset,
    },
    Ravine(QuadraticRavine),
}

impl Workload {
    /// Relative MNIST paths are resolved against `base`.
    pub fn build(cfg: &ExperimentConfig, base: &Path) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.task {
            Task::Modulo => {
                let (train, test) = split_dataset(&cfg.modulo)?;
                let spec = cfg.transformer.spec_for(cfg.modulo.p as usize);
                Workload::Supervised {
                    model: Box::new(Transformer::new(spec)?),
                    desc: ModelDesc::Transformer(spec),
                    train,
                    test,
                }
            }
            Task::Mnist => {
                let m = cfg.mnist.resolved(base);
                let train = load_mnist(&m.train_images, &m.train_labels, m.n, m.seed)?;
                let test = load_mnist_test(&m.test_images, &m.test_labels)?;
                Workload::Supervised {
                    model: Box::new(Mlp::new(cfg.mlp)?),
                    desc: ModelDesc::Mlp(cfg.mlp),
                    train,
                    test,
                }
            }
            Task::Ravine => Workload::Ravine(QuadraticRavine::new(cfg.ravine)?),
        })
    }

    pub fn desc(&self) -> ModelDesc {
        match self {
            Workload::Supervised { desc, .. } => desc.clone(),
            Workload::Ravine(r) => ModelDesc::Ravine { dim: r.spec().dim },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Workload::Supervised { model, .. } => model.num_params(),
            Workload::Ravine(r) => r.spec().dim,
        }
    }

    /// Initial parameters; the ravine starts at the origin.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        match self {
            Workload::Supervised { model, .. } => model.init_params(seed),
            Workload::Ravine(r) => ParamVector::zeros(r.spec().dim),
        }
    }

    pub fn train_len(&self) -> Option<usize> {
        match self {
            Workload::Supervised { train, .. } => Some(train.len()),
            Workload::Ravine(_) => None,
        }
    }

    /// Train and test accuracy; `None` for the ravine.
    pub fn evaluate(&self, params: &ParamVector) -> Result<(Option<f64>, Option<f64>)> {
        match self {
            Workload::Supervised { model, train, test, .. } => Ok((
                Some(accuracy(model.as_ref(), params, train)?),
                Some(accuracy(model.as_ref(), params, test)?),
            )),
            Workload::Ravine(_) => Ok((None, None)),
        }
    }
}

/// Oracle whose mini-batch follows a fixed per-epoch shuffle schedule.
enum RunOracle<'a> {
    Batched {
        inner: BatchOracle<'a>,
        len: usize,
        batch_size: usize,
        seed: u64,
        epoch: u64,
        schedule: Vec<Vec<usize>>,
    },
    Ravine(QuadraticRavine),
}

impl<'a> RunOracle<'a> {
    fn new(work: &'a Workload, cfg: &ExperimentConfig) -> Self {
        match work {
            Workload::Supervised { model, train, .. } => RunOracle::Batched {
                inner: BatchOracle::new(model.as_ref(), train),
                len: train.len(),
                batch_size: cfg.batch_size.min(train.len()),
                seed: cfg.seed,
                epoch: u64::MAX,
                schedule: Vec::new(),
            },
            Workload::Ravine(r) => RunOracle::Ravine(r.clone()),
        }
    }

    fn steps_per_epoch(&self) -> Result<u64> {
        match self {
            RunOracle::Batched { len, batch_size, .. } => {
                if *len == 0 {
                    return Err(Error::invalid("empty training set"));
                }
                Ok((len / batch_size) as u64)
            }
            RunOracle::Ravine(_) => Ok(1),
        }
    }

    /// Select batch `k` of epoch `epoch`; epoch 0 feeds pre-training.
    fn select(&mut self, epoch: u64, k: usize) -> Result<()> {
        if let RunOracle::Batched {
            inner,
            len,
            batch_size,
            seed,
            epoch: cur,
            schedule,
        } = self
        {
            if *cur != epoch {
                *schedule = batches(*len, *batch_size, derive_seed(*seed, 2, epoch))?;
                *cur = epoch;
            }
            inner.set_batch(schedule[k % schedule.len()].clone());
        }
        Ok(())
    }
}

impl GradientOracle for RunOracle<'_> {
    fn dim(&self) -> usize {
        match self {
            RunOracle::Batched { inner, .. } => inner.dim(),
            RunOracle::Ravine(r) => r.dim(),
        }
    }

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        match self {
            RunOracle::Batched { inner, .. } => inner.loss_and_grad(params),
            RunOracle::Ravine(r) => r.loss_and_grad(params),
        }
    }

    fn calls(&self) -> u64 {
        match self {
            RunOracle::Batched { inner, .. } => inner.calls(),
            RunOracle::Ravine(r) => r.calls(),
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: MetricsLog,
    /// Final parameters (the prey for agent variants).
    pub params: ParamVector,
    pub predator: Option<ParamVector>,
    /// Snapshot at the end of the memorization epoch, if reached.
    pub memorization_checkpoint: Option<Checkpoint>,
    pub final_checkpoint: Checkpoint,
}

/// Oracle calls spent between memorization and generalization.
pub fn post_memorization_calls(log: &MetricsLog) -> Option<u64> {
    let mem = log.memorization_epoch?;
    let gen = log.generalization_oracle_calls?;
    let at_mem = log.epochs[(mem - 1) as usize].oracle_calls;
    Some(gen - at_mem)
}

fn numeric(step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            step,
            what: format!("training loss is {loss}"),
        })
    }
}

struct EpochAcc {
    loss_sum: f64,
    n: u64,
}

/// Shared epoch bookkeeping; returns true when the run should stop.
fn close_epoch(
    log: &mut MetricsLog,
    work: &Workload,
    epoch: u64,
    acc: &EpochAcc,
    params: &ParamVector,
    theta0: &ParamVector,
    predator: Option<&ParamVector>,
) -> Result<bool> {
    let (train_acc, test_acc) = work.evaluate(params)?;
    let (ptrain, ptest) = match predator {
        Some(p) => work.evaluate(p)?,
        None => (None, None),
    };
    log.epochs.push(EpochRecord {
        epoch,
        steps: log.total_steps,
        oracle_calls: log.oracle_calls,
        train_loss: acc.loss_sum / acc.n.max(1) as f64,
        train_acc,
        test_acc,
        weight_norm: params.norm()?,
        distance_to_init: params.distance(theta0)?,
        predator_train_acc: ptrain,
        predator_test_acc: ptest,
    });
    let had_gen = log.generalization_epoch.is_some();
    log.update_phases();
    if !had_gen && log.generalization_epoch.is_some() {
        log::info!("epoch {epoch}: test threshold reached");
    }
    let stop = match log.generalization_epoch {
        Some(g) => epoch >= g + log.config.extra_epochs,
        None => false,
    };
    Ok(stop || epoch >= log.config.max_epochs)
}

fn keep_step(cfg: &ExperimentConfig, step: u64) -> bool {
    (step - 1).is_multiple_of(cfg.log_every)
}

/// Single-agent AdamW training from the configured initialization.
pub fn run_baseline(cfg: &ExperimentConfig, work: &Workload) -> Result<RunOutput> {
    if cfg.variant != Variant::AdamwBaseline {
        return Err(Error::Config(format!("run_baseline needs variant adamw_baseline, got {:?}", cfg.variant)));
    }
    let theta0 = work.init_params(cfg.init_seed);
    let mut oracle = RunOracle::new(work, cfg);
    let spe = oracle.steps_per_epoch()?;
    let mut log = MetricsLog::new(cfg.clone(), spe, theta0.norm()?);
    let mut params = theta0.clone();
    let mut state = AdamState::new(params.len());
    let mut mem_ck = None;

    for epoch in 1..=cfg.max_epochs {
        let mut acc = EpochAcc { loss_sum: 0.0, n: 0 };
        for k in 0..spe as usize {
            oracle.select(epoch, k)?;
            let step = log.total_steps + 1;
            let (loss, g) = oracle.loss_and_grad(&params)?;
            numeric(step, loss)?;
            state.step(&mut params, &g, &cfg.optimizer)?;
            log.total_steps = step;
            log.oracle_calls = oracle.calls();
            acc.loss_sum += loss;
            acc.n += 1;
            if keep_step(cfg, step) {
                log.steps.push(StepRow {
                    step,
                    loss,
                    step_norm: state.effective_step_norm(&cfg.optimizer)?,
                    distance_to_init: params.distance(&theta0)?,
                    d_t: None,
                    p_d_t: None,
                    predator_step_norm: None,
                });
            }
        }
        let had_mem = log.memorization_epoch.is_some();
        let stop = close_epoch(&mut log, work, epoch, &acc, &params, &theta0, None)?;
        if !had_mem && log.memorization_epoch.is_some() {
            mem_ck = Some(Checkpoint {
                version: CHECKPOINT_VERSION,
                model: work.desc(),
                epoch,
                params: params.clone(),
                optimizer: Some(state.clone()),
            });
        }
        if stop {
            break;
        }
    }
    let final_checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: work.desc(),
        epoch: log.epochs.len() as u64,
        params: params.clone(),
        optimizer: Some(state),
    };
    Ok(RunOutput {
        log,
        params,
        predator: None,
        memorization_checkpoint: mem_ck,
        final_checkpoint,
    })
}

/// Predator–prey training, optionally warm-started from a checkpoint.
///
/// Without a checkpoint the agents start from the configured initialization.
/// The warm-start parameters become `θ_0`; optimizer state is not carried over.
pub fn run_ppm(cfg: &ExperimentConfig, work: &Workload, warm_start: Option<&Checkpoint>) -> Result<RunOutput> {
    let algorithm = match cfg.variant {
        Variant::Ppm => Algorithm::Separate,
        Variant::Ppconn => Algorithm::Connected,
        Variant::AdamwBaseline => {
            return Err(Error::Config("run_ppm needs variant ppm or ppconn".into()));
        }
    };
    let theta0 = match warm_start {
        Some(ck) => {
            if ck.model != work.desc() || ck.params.len() != work.dim() {
                return Err(Error::Config(format!(
                    "warm-start checkpoint is for {:?}, run uses {:?}",
                    ck.model,
                    work.desc()
                )));
            }
            ck.params.clone()
        }
        None => work.init_params(cfg.init_seed),
    };
    let ppm: &PpmConfig = &cfg.ppm;
    let mut oracle = RunOracle::new(work, cfg);
    let spe = oracle.steps_per_epoch()?;
    let mut log = MetricsLog::new(cfg.clone(), spe, theta0.norm()?);

    // pre-training draws its batches from a dedicated epoch-0 shuffle
    let mut pre = PretrainOracle {
        inner: &mut oracle,
        k: 0,
    };
    let mut pair: AgentPair = ppm_pretrain(theta0.clone(), &mut pre, ppm, algorithm)?;
    log.pretrain_steps = ppm.n_d;
    log.oracle_calls = oracle.calls();
    let track_predator = ppm.grad_pred;

    for epoch in 1..=cfg.max_epochs {
        let mut acc = EpochAcc { loss_sum: 0.0, n: 0 };
        for k in 0..spe as usize {
            oracle.select(epoch, k)?;
            let rec = pair.step(&mut oracle, ppm)?;
            let step = log.total_steps + 1;
            log.total_steps = step;
            log.oracle_calls = oracle.calls();
            acc.loss_sum += rec.prey_loss;
            acc.n += 1;
            if keep_step(cfg, step) {
                log.steps.push(StepRow {
                    step,
                    loss: rec.prey_loss,
                    step_norm: rec.prey_step_norm,
                    distance_to_init: pair.prey.distance(&theta0)?,
                    d_t: rec.distance,
                    p_d_t: rec.potential,
                    predator_step_norm: rec.predator_step_norm,
                });
            }
        }
        let predator = track_predator.then_some(&pair.predator);
        if close_epoch(&mut log, work, epoch, &acc, &pair.prey, &theta0, predator)? {
            break;
        }
    }
    let final_checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: work.desc(),
        epoch: log.epochs.len() as u64,
        params: pair.prey.clone(),
        optimizer: None,
    };
    Ok(RunOutput {
        log,
        params: pair.prey,
        predator: Some(pair.predator),
        memorization_checkpoint: None,
        final_checkpoint,
    })
}

/// Dispatch on the configured variant.
pub fn run(cfg: &ExperimentConfig, work: &Workload, warm_start: Option<&Checkpoint>) -> Result<RunOutput> {
    match cfg.variant {
        Variant::AdamwBaseline => {
            if warm_start.is_some() {
                return Err(Error::Config("the baseline does not take a warm start".into()));
            }
            run_baseline(cfg, work)
        }
        Variant::Ppm | Variant::Ppconn => run_ppm(cfg, work, warm_start),
    }
}

struct PretrainOracle<'o, 'a> {
    inner: &'o mut RunOracle<'a>,
    k: usize,
}

impl GradientOracle for PretrainOracle<'_, '_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        self.inner.select(0, self.k)?;
        self.k += 1;
        let out = self.inner.loss_and_grad(params)?;
        numeric(0, out.0)?;
        Ok(out)
    }

    fn calls(&self) -> u64 {
        self.inner.calls()
    }
}
