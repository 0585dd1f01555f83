//! One-hidden-layer perceptron trained with squared error against one-hot targets.

use serde::{Deserialize, Serialize};

use super::linalg::{linear, linear_backward};
use super::{check_len, init_blocks, Init, LayoutBuilder, Model, ParamBlock};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::paramvec::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Multiplier applied to every initial parameter.
    pub init_scale: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            in_dim: 784,
            hidden: 200,
            out_dim: 10,
            init_scale: 1.0,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("mlp dimensions must be >= 1: {self:?}")));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config(format!("init_scale {} must be > 0", self.init_scale)));
        }
        Ok(())
    }
}

/// `Linear → ReLU → Linear`, no output nonlinearity.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let (i, h, o) = (spec.in_dim, spec.hidden, spec.out_dim);
        let mut lb = LayoutBuilder::default();
        lb.push("fc1.w", &[i, h], Init::FanInUniform { fan_in: i });
        lb.push("fc1.b", &[h], Init::FanInUniform { fan_in: i });
        lb.push("fc2.w", &[h, o], Init::FanInUniform { fan_in: h });
        lb.push("fc2.b", &[o], Init::FanInUniform { fan_in: h });
        let (blocks, total) = lb.finish();
        Ok(Mlp { spec, blocks, total })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let (i, h, o) = (self.spec.in_dim, self.spec.hidden, self.spec.out_dim);
        let b1 = i * h;
        let w2 = b1 + h;
        (0, b1, w2, w2 + h * o)
    }

    fn gather(&self, data: &Dataset, batch: &[usize]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(batch.len() * self.spec.in_dim);
        for &i in batch {
            let px = data
                .pixels(i)
                .ok_or_else(|| Error::invalid("mlp needs a pixel dataset"))?;
            if px.len() != self.spec.in_dim {
                return Err(Error::invalid(format!(
                    "input dimension {} != {}",
                    px.len(),
                    self.spec.in_dim
                )));
            }
            x.extend_from_slice(px);
        }
        Ok(x)
    }

    fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (i, h, o) = (self.spec.in_dim, self.spec.hidden, self.spec.out_dim);
        let (w1, b1, w2, b2) = self.offsets();
        let z = linear(x, &p[w1..], &p[b1..], rows, i, h);
        let a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
        let out = linear(&a, &p[w2..], &p[b2..], rows, h, o);
        (z, a, out)
    }
}

impl Model for Mlp {
    fn num_params(&self) -> usize {
        self.total
    }

    fn blocks(&self) -> Vec<ParamBlock> {
        self.blocks.clone()
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut p = init_blocks(&self.blocks, self.total, seed);
        if self.spec.init_scale != 1.0 {
            p.scale(self.spec.init_scale);
        }
        p
    }

    fn n_classes(&self) -> usize {
        self.spec.out_dim
    }

    fn scores(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<Vec<f64>> {
        check_len(params, self.total)?;
        let x = self.gather(data, batch)?;
        Ok(self.forward(params.as_slice(), &x, batch.len()).2)
    }

    fn loss_and_grad(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<(f64, ParamVector)> {
        check_len(params, self.total)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (i, h, o) = (self.spec.in_dim, self.spec.hidden, self.spec.out_dim);
        let rows = batch.len();
        let p = params.as_slice();
        let x = self.gather(data, batch)?;
        let (z, a, out) = self.forward(p, &x, rows);

        let denom = (rows * o) as f64;
        let mut loss = 0.0;
        let mut dout = vec![0.0; rows * o];
        for (r, &idx) in batch.iter().enumerate() {
            let label = data.labels[idx];
            if label >= o {
                return Err(Error::invalid(format!("label {label} out of {o} outputs")));
            }
            for c in 0..o {
                let target = if c == label { 1.0 } else { 0.0 };
                let diff = out[r * o + c] - target;
                loss += diff * diff;
                dout[r * o + c] = 2.0 * diff / denom;
            }
        }
        loss /= denom;

        let (w1, b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.total];
        let mut da = {
            let (dw, db) = grad[w2..].split_at_mut(b2 - w2);
            linear_backward(&a, &p[w2..], &dout, dw, db, rows, h, o, true).unwrap()
        };
        for (g, &zz) in da.iter_mut().zip(&z) {
            if zz <= 0.0 {
                *g = 0.0;
            }
        }
        {
            let (dw, db) = grad[w1..w2].split_at_mut(b1 - w1);
            linear_backward(&x, &p[w1..], &da, dw, db, rows, i, h, false);
        }
        Ok((loss, ParamVector::new(grad)))
    }
}
