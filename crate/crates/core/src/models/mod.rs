//! Trainable models with exact analytic gradients over a flat parameter vector.

mod linalg;
pub mod mlp;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::oracle::GradientOracle;
use crate::paramvec::ParamVector;

pub use mlp::{Mlp, MlpSpec};
pub use transformer::{Activation, Transformer, TransformerSpec};

/// Initialization rule of one parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Normal { std: f64 },
    XavierUniform { fan_in: usize, fan_out: usize },
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanInUniform { fan_in: usize },
    Zeros,
    Ones,
}

impl Init {
    pub fn uniform_bound(&self) -> Option<f64> {
        match *self {
            Init::XavierUniform { fan_in, fan_out } => Some((6.0 / (fan_in + fan_out) as f64).sqrt()),
            Init::FanInUniform { fan_in } => Some(1.0 / (fan_in as f64).sqrt()),
            _ => None,
        }
    }
}

/// A named, contiguous slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    /// Row-major shape; weights are stored `[in, out]`.
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Default)]
pub(crate) struct LayoutBuilder {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl LayoutBuilder {
    pub(crate) fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.total;
        let block = ParamBlock {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            init,
        };
        self.total += block.len();
        self.blocks.push(block);
        offset
    }

    pub(crate) fn finish(self) -> (Vec<ParamBlock>, usize) {
        (self.blocks, self.total)
    }
}

pub(crate) fn init_blocks(blocks: &[ParamBlock], total: usize, seed: u64) -> ParamVector {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Uniform};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; total];
    for b in blocks {
        let dst = &mut out[b.range()];
        match b.init {
            Init::Zeros => {}
            Init::Ones => dst.fill(1.0),
            Init::Normal { std } => {
                if std > 0.0 {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    dst.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                }
            }
            Init::XavierUniform { .. } | Init::FanInUniform { .. } => {
                let bound = b.init.uniform_bound().unwrap();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                dst.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
            }
        }
    }
    ParamVector::new(out)
}

/// Split a flat vector into named tensors in canonical order.
pub fn unflatten(blocks: &[ParamBlock], params: &ParamVector) -> Result<Vec<(String, Vec<f64>)>> {
    let total: usize = blocks.iter().map(ParamBlock::len).sum();
    if total != params.len() {
        return Err(Error::invalid(format!(
            "layout has {total} parameters, vector has {}",
            params.len()
        )));
    }
    Ok(blocks
        .iter()
        .map(|b| (b.name.clone(), params.as_slice()[b.range()].to_vec()))
        .collect())
}

/// Inverse of [`unflatten`]; names and sizes must match the layout.
pub fn flatten(blocks: &[ParamBlock], tensors: &[(String, Vec<f64>)]) -> Result<ParamVector> {
    if blocks.len() != tensors.len() {
        return Err(Error::invalid("tensor count does not match layout"));
    }
    let mut out = Vec::new();
    for (b, (name, values)) in blocks.iter().zip(tensors) {
        if &b.name != name || b.len() != values.len() {
            return Err(Error::invalid(format!("tensor {name} does not match block {}", b.name)));
        }
        out.extend_from_slice(values);
    }
    Ok(ParamVector::new(out))
}

/// A differentiable classifier over a [`Dataset`].
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;

    /// Canonical parameter layout.
    fn blocks(&self) -> Vec<ParamBlock>;

    fn init_params(&self, seed: u64) -> ParamVector;

    /// Mean loss over `batch` (indices into `data`) and its exact gradient.
    fn loss_and_grad(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<(f64, ParamVector)>;

    /// Class scores, `batch.len() × n_classes`, row-major.
    fn scores(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<Vec<f64>>;

    fn n_classes(&self) -> usize;
}

const EVAL_CHUNK: usize = 1024;

/// Fraction of examples whose arg-max score equals the label.
pub fn accuracy(model: &dyn Model, params: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let c = model.n_classes();
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let s = model.scores(params, data, chunk)?;
        for (row, &i) in s.chunks_exact(c).zip(chunk) {
            if linalg::argmax(row) == data.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Gradient oracle over the current mini-batch of a dataset.
pub struct BatchOracle<'a> {
    model: &'a dyn Model,
    data: &'a Dataset,
    batch: Vec<usize>,
    calls: u64,
}

impl<'a> BatchOracle<'a> {
    pub fn new(model: &'a dyn Model, data: &'a Dataset) -> Self {
        BatchOracle {
            model,
            data,
            batch: (0..data.len()).collect(),
            calls: 0,
        }
    }

    pub fn set_batch(&mut self, batch: Vec<usize>) {
        self.batch = batch;
    }
}

impl GradientOracle for BatchOracle<'_> {
    fn dim(&self) -> usize {
        self.model.num_params()
    }

    fn loss_and_grad(&mut self, params: &ParamVector) -> Result<(f64, ParamVector)> {
        self.calls += 1;
        self.model.loss_and_grad(params, self.data, &self.batch)
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

pub(crate) fn check_len(params: &ParamVector, want: usize) -> Result<()> {
    if params.len() != want {
        return Err(Error::invalid(format!(
            "parameter vector has {} entries, model expects {want}",
            params.len()
        )));
    }
    Ok(())
}
