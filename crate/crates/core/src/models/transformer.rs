//! Decoder-only transformer for `a ∘ b =` token sequences.
//!
//! Post-norm residual blocks (`x ← LN(x + Attn(x))`, `x ← LN(x + FFN(x))`),
//! learned positional embeddings, causal multi-head self-attention and a
//! linear head over the residue classes read at the final position.
//! Forward and backward passes are written out by hand in `f64`.
//!
//! Only the final position feeds the loss, so the last block computes its
//! queries, attention output and feed-forward for that position alone; keys
//! and values still cover the whole prefix.

use serde::{Deserialize, Serialize};

use super::linalg::{linear, linear_backward};
use super::{check_len, init_blocks, Init, LayoutBuilder, Model, ParamBlock};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::paramvec::ParamVector;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSpec {
    pub d_model: usize,
    pub n_head: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Input vocabulary: residues plus the operator and `=` tokens.
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Output classes (the residues).
    pub n_classes: usize,
    pub embed_std: f64,
    pub activation: Activation,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        Self::grokking_main(97)
    }
}

impl TransformerSpec {
    /// d_model 128, 4 heads, 2 layers, d_ff 512, N(0, 1) embeddings.
    pub fn grokking_main(p: usize) -> Self {
        TransformerSpec {
            d_model: 128,
            n_head: 4,
            n_layers: 2,
            d_ff: 512,
            vocab_size: p + 2,
            seq_len: 4,
            n_classes: p,
            embed_std: 1.0,
            activation: Activation::Relu,
        }
    }

    /// d_model 128, 2 heads, 1 layer, d_ff 256, N(0, 0.02²) embeddings.
    pub fn grokking_small(p: usize) -> Self {
        TransformerSpec {
            n_head: 2,
            n_layers: 1,
            d_ff: 256,
            embed_std: 0.02,
            ..Self::grokking_main(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.n_head,
            self.n_layers,
            self.d_ff,
            self.vocab_size,
            self.seq_len,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("transformer dimensions must be >= 1: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        if !(self.embed_std >= 0.0) {
            return Err(Error::Config("embed_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    spec: TransformerSpec,
    blocks: Vec<ParamBlock>,
    total: usize,
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    w_out: usize,
    b_out: usize,
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    x: Vec<f64>,
    xq: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    ln2: LnCache,
    nq: usize,
}

impl Transformer {
    pub fn new(spec: TransformerSpec) -> Result<Self> {
        spec.validate()?;
        let (d, f) = (spec.d_model, spec.d_ff);
        let xavier = |i, o| Init::XavierUniform { fan_in: i, fan_out: o };
        let mut lb = LayoutBuilder::default();
        let tok = lb.push("tok_embed", &[spec.vocab_size, d], Init::Normal { std: spec.embed_std });
        let pos = lb.push("pos_embed", &[spec.seq_len, d], Init::Normal { std: spec.embed_std });
        let mut layers = Vec::with_capacity(spec.n_layers);
        for l in 0..spec.n_layers {
            let n = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerOffsets {
                wq: lb.push(n("attn.w_q"), &[d, d], xavier(d, d)),
                bq: lb.push(n("attn.b_q"), &[d], Init::Zeros),
                wk: lb.push(n("attn.w_k"), &[d, d], xavier(d, d)),
                bk: lb.push(n("attn.b_k"), &[d], Init::Zeros),
                wv: lb.push(n("attn.w_v"), &[d, d], xavier(d, d)),
                bv: lb.push(n("attn.b_v"), &[d], Init::Zeros),
                wo: lb.push(n("attn.w_o"), &[d, d], xavier(d, d)),
                bo: lb.push(n("attn.b_o"), &[d], Init::Zeros),
                ln1_g: lb.push(n("ln1.gain"), &[d], Init::Ones),
                ln1_b: lb.push(n("ln1.bias"), &[d], Init::Zeros),
                w1: lb.push(n("ffn.w_1"), &[d, f], xavier(d, f)),
                b1: lb.push(n("ffn.b_1"), &[f], Init::Zeros),
                w2: lb.push(n("ffn.w_2"), &[f, d], xavier(f, d)),
                b2: lb.push(n("ffn.b_2"), &[d], Init::Zeros),
                ln2_g: lb.push(n("ln2.gain"), &[d], Init::Ones),
                ln2_b: lb.push(n("ln2.bias"), &[d], Init::Zeros),
            });
        }
        let w_out = lb.push("head.w", &[d, spec.n_classes], xavier(d, spec.n_classes));
        let b_out = lb.push("head.b", &[spec.n_classes], Init::Zeros);
        let (blocks, total) = lb.finish();
        Ok(Transformer {
            spec,
            blocks,
            total,
            tok,
            pos,
            layers,
            w_out,
            b_out,
        })
    }

    pub fn spec(&self) -> &TransformerSpec {
        &self.spec
    }

    /// Offset range of the output head (weights then bias).
    pub fn head_range(&self) -> std::ops::Range<usize> {
        self.w_out..self.total
    }

    /// Offset range of the token and position embeddings.
    pub fn embedding_range(&self) -> std::ops::Range<usize> {
        self.tok..self.pos + self.spec.seq_len * self.spec.d_model
    }

    fn gather_tokens(&self, data: &Dataset, batch: &[usize]) -> Result<Vec<usize>> {
        let t = self.spec.seq_len;
        let mut ids = Vec::with_capacity(batch.len() * t);
        for &i in batch {
            let seq = data
                .tokens(i)
                .ok_or_else(|| Error::invalid("transformer needs a token dataset"))?;
            if seq.len() != t {
                return Err(Error::invalid(format!("sequence length {} != {t}", seq.len())));
            }
            if let Some(&bad) = seq.iter().find(|&&id| id >= self.spec.vocab_size) {
                return Err(Error::invalid(format!(
                    "token id {bad} out of vocabulary of size {}",
                    self.spec.vocab_size
                )));
            }
            ids.extend_from_slice(seq);
        }
        Ok(ids)
    }

    fn embed(&self, p: &[f64], ids: &[usize]) -> Vec<f64> {
        let (t, d) = (self.spec.seq_len, self.spec.d_model);
        let mut x = vec![0.0; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            let pos = r % t;
            let tok = &p[self.tok + id * d..][..d];
            let pe = &p[self.pos + pos * d..][..d];
            for ((o, a), b) in x[r * d..(r + 1) * d].iter_mut().zip(tok).zip(pe) {
                *o = a + b;
            }
        }
        x
    }

    fn layer_forward(&self, lo: &LayerOffsets, p: &[f64], x: Vec<f64>, nb: usize, nq: usize) -> (LayerCache, Vec<f64>) {
        let s = &self.spec;
        let (t, d, h, f) = (s.seq_len, s.d_model, s.n_head, s.d_ff);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let q0 = t - nq;
        let rows = nb * nq;

        let mut xq = Vec::with_capacity(rows * d);
        for b in 0..nb {
            xq.extend_from_slice(&x[(b * t + q0) * d..(b * t + t) * d]);
        }
        let q = linear(&xq, &p[lo.wq..], &p[lo.bq..], rows, d, d);
        let k = linear(&x, &p[lo.wk..], &p[lo.bk..], nb * t, d, d);
        let v = linear(&x, &p[lo.wv..], &p[lo.bv..], nb * t, d, d);

        let mut att = vec![0.0; nb * h * nq * t];
        let mut ctx = vec![0.0; rows * d];
        for b in 0..nb {
            for hd in 0..h {
                for i in 0..nq {
                    let qpos = q0 + i;
                    let qrow = &q[(b * nq + i) * d + hd * dh..][..dh];
                    let arow = &mut att[((b * h + hd) * nq + i) * t..][..t];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..=qpos {
                        let krow = &k[(b * t + j) * d + hd * dh..][..dh];
                        let sc = dot(qrow, krow) * scale;
                        arow[j] = sc;
                        mx = mx.max(sc);
                    }
                    let mut z = 0.0;
                    for a in &mut arow[..=qpos] {
                        *a = (*a - mx).exp();
                        z += *a;
                    }
                    let crow = &mut ctx[(b * nq + i) * d + hd * dh..][..dh];
                    for j in 0..=qpos {
                        arow[j] /= z;
                        let vrow = &v[(b * t + j) * d + hd * dh..][..dh];
                        for (c, vv) in crow.iter_mut().zip(vrow) {
                            *c += arow[j] * vv;
                        }
                    }
                }
            }
        }

        let o = linear(&ctx, &p[lo.wo..], &p[lo.bo..], rows, d, d);
        let r1: Vec<f64> = xq.iter().zip(&o).map(|(a, b)| a + b).collect();
        let (h1, ln1) = layer_norm(&r1, &p[lo.ln1_g..][..d], &p[lo.ln1_b..][..d], rows, d);
        let u = linear(&h1, &p[lo.w1..], &p[lo.b1..], rows, d, f);
        let a: Vec<f64> = u.iter().map(|&z| act(s.activation, z)).collect();
        let fo = linear(&a, &p[lo.w2..], &p[lo.b2..], rows, f, d);
        let r2: Vec<f64> = h1.iter().zip(&fo).map(|(a, b)| a + b).collect();
        let (out, ln2) = layer_norm(&r2, &p[lo.ln2_g..][..d], &p[lo.ln2_b..][..d], rows, d);

        let cache = LayerCache {
            x,
            xq,
            q,
            k,
            v,
            att,
            ctx,
            ln1,
            h1,
            u,
            a,
            ln2,
            nq,
        };
        (cache, out)
    }

    fn layer_backward(
        &self,
        lo: &LayerOffsets,
        p: &[f64],
        c: &LayerCache,
        dout: &[f64],
        grad: &mut [f64],
        nb: usize,
    ) -> Vec<f64> {
        let s = &self.spec;
        let (t, d, h, f) = (s.seq_len, s.d_model, s.n_head, s.d_ff);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let nq = c.nq;
        let q0 = t - nq;
        let rows = nb * nq;

        let dr2 = {
            let (dg, db) = pair_mut(grad, lo.ln2_g, d, d);
            layer_norm_backward(dout, &c.ln2, &p[lo.ln2_g..][..d], dg, db, rows, d)
        };

        // feed-forward
        let mut da = {
            let (dw, db) = pair_mut(grad, lo.w2, f * d, d);
            linear_backward(&c.a, &p[lo.w2..], &dr2, dw, db, rows, f, d, true).unwrap()
        };
        for (g, &z) in da.iter_mut().zip(&c.u) {
            *g *= act_grad(s.activation, z);
        }
        let mut dh1 = {
            let (dw, db) = pair_mut(grad, lo.w1, d * f, f);
            linear_backward(&c.h1, &p[lo.w1..], &da, dw, db, rows, d, f, true).unwrap()
        };
        for (a, b) in dh1.iter_mut().zip(&dr2) {
            *a += b;
        }

        let dr1 = {
            let (dg, db) = pair_mut(grad, lo.ln1_g, d, d);
            layer_norm_backward(&dh1, &c.ln1, &p[lo.ln1_g..][..d], dg, db, rows, d)
        };
        let dctx = {
            let (dw, db) = pair_mut(grad, lo.wo, d * d, d);
            linear_backward(&c.ctx, &p[lo.wo..], &dr1, dw, db, rows, d, d, true).unwrap()
        };

        // attention
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; nb * t * d];
        let mut dv = vec![0.0; nb * t * d];
        let mut datt = vec![0.0; t];
        for b in 0..nb {
            for hd in 0..h {
                for i in 0..nq {
                    let qpos = q0 + i;
                    let arow = &c.att[((b * h + hd) * nq + i) * t..][..t];
                    let gc = &dctx[(b * nq + i) * d + hd * dh..][..dh];
                    let mut acc = 0.0;
                    for j in 0..=qpos {
                        let off = (b * t + j) * d + hd * dh;
                        datt[j] = dot(gc, &c.v[off..off + dh]);
                        acc += arow[j] * datt[j];
                        for (g, x) in dv[off..off + dh].iter_mut().zip(gc) {
                            *g += arow[j] * x;
                        }
                    }
                    let qoff = (b * nq + i) * d + hd * dh;
                    for j in 0..=qpos {
                        let ds = arow[j] * (datt[j] - acc) * scale;
                        let koff = (b * t + j) * d + hd * dh;
                        for e in 0..dh {
                            dq[qoff + e] += ds * c.k[koff + e];
                            dk[koff + e] += ds * c.q[qoff + e];
                        }
                    }
                }
            }
        }

        let dxq = {
            let (dw, db) = pair_mut(grad, lo.wq, d * d, d);
            linear_backward(&c.xq, &p[lo.wq..], &dq, dw, db, rows, d, d, true).unwrap()
        };
        let mut dx = {
            let (dw, db) = pair_mut(grad, lo.wk, d * d, d);
            linear_backward(&c.x, &p[lo.wk..], &dk, dw, db, nb * t, d, d, true).unwrap()
        };
        {
            let (dw, db) = pair_mut(grad, lo.wv, d * d, d);
            let dxv = linear_backward(&c.x, &p[lo.wv..], &dv, dw, db, nb * t, d, d, true).unwrap();
            for (a, b) in dx.iter_mut().zip(&dxv) {
                *a += b;
            }
        }
        // query path and residual both enter at the query positions
        for b in 0..nb {
            let dst = &mut dx[(b * t + q0) * d..(b * t + t) * d];
            let src = &dxq[b * nq * d..(b + 1) * nq * d];
            let res = &dr1[b * nq * d..(b + 1) * nq * d];
            for ((o, a), r) in dst.iter_mut().zip(src).zip(res) {
                *o += a + r;
            }
        }
        dx
    }

    /// Forward pass. With `all_positions` the head is applied at every
    /// position (`batch × seq_len` rows of logits), otherwise only at the last.
    fn forward(&self, p: &[f64], ids: &[usize], all_positions: bool) -> (Vec<LayerCache>, Vec<f64>, Vec<f64>) {
        let s = &self.spec;
        let nb = ids.len() / s.seq_len;
        let mut x = self.embed(p, ids);
        let mut caches = Vec::with_capacity(s.n_layers);
        for (l, lo) in self.layers.iter().enumerate() {
            let nq = if l + 1 == s.n_layers && !all_positions { 1 } else { s.seq_len };
            let (cache, out) = self.layer_forward(lo, p, x, nb, nq);
            caches.push(cache);
            x = out;
        }
        let rows = x.len() / s.d_model;
        let logits = linear(&x, &p[self.w_out..], &p[self.b_out..], rows, s.d_model, s.n_classes);
        (caches, x, logits)
    }

    /// Logits at every position, `batch × seq_len × n_classes`.
    pub fn logits_all_positions(&self, params: &ParamVector, ids: &[usize]) -> Result<Vec<f64>> {
        check_len(params, self.total)?;
        if !ids.len().is_multiple_of(self.spec.seq_len) || ids.iter().any(|&i| i >= self.spec.vocab_size) {
            return Err(Error::invalid("malformed token batch"));
        }
        Ok(self.forward(params.as_slice(), ids, true).2)
    }
}

impl Model for Transformer {
    fn num_params(&self) -> usize {
        self.total
    }

    fn blocks(&self) -> Vec<ParamBlock> {
        self.blocks.clone()
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        init_blocks(&self.blocks, self.total, seed)
    }

    fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn scores(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<Vec<f64>> {
        check_len(params, self.total)?;
        let ids = self.gather_tokens(data, batch)?;
        Ok(self.forward(params.as_slice(), &ids, false).2)
    }

    fn loss_and_grad(&self, params: &ParamVector, data: &Dataset, batch: &[usize]) -> Result<(f64, ParamVector)> {
        check_len(params, self.total)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let s = &self.spec;
        let (d, c) = (s.d_model, s.n_classes);
        let p = params.as_slice();
        let ids = self.gather_tokens(data, batch)?;
        let nb = batch.len();
        let (caches, last, logits) = self.forward(p, &ids, false);

        let mut loss = 0.0;
        let mut dlogits = vec![0.0; nb * c];
        for (r, &i) in batch.iter().enumerate() {
            let label = data.labels[i];
            if label >= c {
                return Err(Error::invalid(format!("label {label} out of {c} classes")));
            }
            let row = &logits[r * c..(r + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            loss += z.ln() + mx - row[label];
            let drow = &mut dlogits[r * c..(r + 1) * c];
            for (g, x) in drow.iter_mut().zip(row) {
                *g = (x - mx).exp() / z / nb as f64;
            }
            drow[label] -= 1.0 / nb as f64;
        }
        loss /= nb as f64;

        let mut grad = vec![0.0; self.total];
        let mut dx = {
            let (dw, db) = pair_mut(&mut grad, self.w_out, d * c, c);
            linear_backward(&last, &p[self.w_out..], &dlogits, dw, db, nb, d, c, true).unwrap()
        };
        for (lo, cache) in self.layers.iter().zip(&caches).rev() {
            dx = self.layer_backward(lo, p, cache, &dx, &mut grad, nb);
        }
        let t = s.seq_len;
        for (r, &id) in ids.iter().enumerate() {
            let g = &dx[r * d..(r + 1) * d];
            for (acc, x) in grad[self.tok + id * d..][..d].iter_mut().zip(g) {
                *acc += x;
            }
            for (acc, x) in grad[self.pos + (r % t) * d..][..d].iter_mut().zip(g) {
                *acc += x;
            }
        }
        Ok((loss, ParamVector::new(grad)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two adjacent mutable blocks `[off, off+n1)` and `[off+n1, off+n1+n2)`.
fn pair_mut(buf: &mut [f64], off: usize, n1: usize, n2: usize) -> (&mut [f64], &mut [f64]) {
    buf[off..off + n1 + n2].split_at_mut(n1)
}

fn act(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Relu => z.max(0.0),
        Activation::Gelu => {
            let inner = GELU_C * (z + 0.044715 * z * z * z);
            0.5 * z * (1.0 + inner.tanh())
        }
    }
}

fn act_grad(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => {
            let inner = GELU_C * (z + 0.044715 * z * z * z);
            let th = inner.tanh();
            0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * z * z)
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for e in 0..d {
            let xh = (xr[e] - mean) * rs;
            xhat[r * d + e] = xh;
            y[r * d + e] = gain[e] * xh + bias[e];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    rows: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for e in 0..d {
            dgain[e] += dyr[e] * xh[e];
            dbias[e] += dyr[e];
            dxhat[e] = dyr[e] * gain[e];
            m1 += dxhat[e];
            m2 += dxhat[e] * xh[e];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let rs = cache.rstd[r];
        for e in 0..d {
            dx[r * d + e] = rs * (dxhat[e] - m1 - xh[e] * m2);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, Features, ModArithSpec, ModOp, Provenance, Split};
    use crate::models::accuracy;

    fn tiny_spec() -> TransformerSpec {
        TransformerSpec {
            d_model: 8,
            n_head: 2,
            n_layers: 1,
            d_ff: 16,
            vocab_size: 9,
            seq_len: 4,
            n_classes: 7,
            embed_std: 1.0,
            activation: Activation::Relu,
        }
    }

    fn tiny_data() -> Dataset {
        let spec = ModArithSpec {
            p: 7,
            op: ModOp::Addition,
            ..ModArithSpec::default()
        };
        split_dataset(&spec).unwrap().0
    }

    fn check_gradient(spec: TransformerSpec, seed: u64) {
        let m = Transformer::new(spec).unwrap();
        let mut p = m.init_params(seed);
        // nonzero biases and gains so every path is exercised
        for (i, x) in p.as_mut_slice().iter_mut().enumerate() {
            *x += 0.05 * ((i as f64) * 0.7).sin();
        }
        let data = tiny_data();
        let batch = [0, 3, 8, 11];
        let (_, g) = m.loss_and_grad(&p, &data, &batch).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..m.num_params() {
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let fa = m.loss_and_grad(&a, &data, &batch).unwrap().0;
            let fb = m.loss_and_grad(&b, &data, &batch).unwrap().0;
            let fd = (fa - fb) / (2.0 * h);
            // key biases have an identically zero gradient; there the
            // difference quotient is pure rounding noise
            let err = if g[i].abs() < 1e-9 && fd.abs() < 1e-9 {
                0.0
            } else {
                (g[i] - fd).abs() / (g[i].abs() + 1e-8)
            };
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(tiny_spec(), 11);
    }

    #[test]
    fn gradient_matches_finite_differences_two_layers_gelu() {
        check_gradient(
            TransformerSpec {
                n_layers: 2,
                activation: Activation::Gelu,
                ..tiny_spec()
            },
            12,
        );
    }

    #[test]
    fn init_is_deterministic() {
        let m = Transformer::new(tiny_spec()).unwrap();
        let a = m.init_params(42);
        let b = m.init_params(42);
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, m.init_params(43));
    }

    #[test]
    fn zero_embedding_std() {
        let m = Transformer::new(TransformerSpec { embed_std: 0.0, ..tiny_spec() }).unwrap();
        let p = m.init_params(1);
        assert!(p.as_slice()[m.embedding_range()].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn xavier_bound_on_wide_layer() {
        let m = Transformer::new(TransformerSpec::grokking_main(97)).unwrap();
        let p = m.init_params(7);
        let block = m.blocks().into_iter().find(|b| b.name == "layers.0.ffn.w_1").unwrap();
        assert_eq!(block.shape, vec![128, 512]);
        let bound = block.init.uniform_bound().unwrap();
        assert!((bound - 0.096_824_583_655_185_43).abs() < 1e-12);
        let vals = &p.as_slice()[block.range()];
        assert!(vals.iter().all(|x| x.abs() <= bound));
        // the draw actually fills the interval
        assert!(vals.iter().any(|x| x.abs() > 0.9 * bound));
    }

    #[test]
    fn zeroed_head_gives_uniform_loss() {
        let spec = TransformerSpec::grokking_small(97);
        let m = Transformer::new(TransformerSpec { d_model: 16, d_ff: 32, ..spec }).unwrap();
        let mut p = m.init_params(3);
        p.as_mut_slice()[m.head_range()].fill(0.0);
        let data = split_dataset(&ModArithSpec::default()).unwrap().0;
        let (loss, _) = m.loss_and_grad(&p, &data, &[0, 1, 2, 3, 4]).unwrap();
        assert!((loss - 97f64.ln()).abs() < 1e-12, "{loss}");
        assert!((97f64.ln() - 4.574_710_978_503_383).abs() < 1e-12);
    }

    #[test]
    fn duplicated_example_has_same_mean_loss() {
        let m = Transformer::new(tiny_spec()).unwrap();
        let p = m.init_params(5);
        let data = tiny_data();
        let (once, g1) = m.loss_and_grad(&p, &data, &[3]).unwrap();
        let (twice, g2) = m.loss_and_grad(&p, &data, &[3, 3]).unwrap();
        assert!((once - twice).abs() < 1e-14);
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_out_of_vocab_tokens() {
        let m = Transformer::new(tiny_spec()).unwrap();
        let p = m.init_params(5);
        let data = Dataset {
            features: Features::Tokens { seq_len: 4, ids: vec![0, 7, 9, 8] },
            labels: vec![0],
            n_classes: 7,
            split: Split::Train,
            provenance: Provenance::Synthetic("bad".into()),
        };
        assert!(matches!(m.loss_and_grad(&p, &data, &[0]), Err(Error::InvalidArgument(_))));
        assert!(m.loss_and_grad(&ParamVector::zeros(3), &tiny_data(), &[0]).is_err());
    }

    #[test]
    fn causal_mask_hides_future_tokens() {
        let m = Transformer::new(TransformerSpec { n_layers: 2, ..tiny_spec() }).unwrap();
        let p = m.init_params(9);
        let c = 7;
        let base = vec![1, 7, 4, 8];
        let all = m.logits_all_positions(&p, &base).unwrap();
        for k in 0..3 {
            let mut other = base.clone();
            for tok in other.iter_mut().skip(k + 1) {
                *tok = (*tok + 3) % 9;
            }
            let alt = m.logits_all_positions(&p, &other).unwrap();
            for pos in 0..=k {
                assert_eq!(&all[pos * c..(pos + 1) * c], &alt[pos * c..(pos + 1) * c], "k={k} pos={pos}");
            }
            assert_ne!(&all[3 * c..], &alt[3 * c..]);
        }
    }

    #[test]
    fn last_position_shortcut_matches_full_forward() {
        let m = Transformer::new(TransformerSpec { n_layers: 2, ..tiny_spec() }).unwrap();
        let p = m.init_params(2);
        let data = tiny_data();
        let batch = [0, 5, 9];
        let ids: Vec<usize> = batch.iter().flat_map(|&i| data.tokens(i).unwrap().to_vec()).collect();
        let full = m.logits_all_positions(&p, &ids).unwrap();
        let last = m.scores(&p, &data, &batch).unwrap();
        for (b, _) in batch.iter().enumerate() {
            let f = &full[(b * 4 + 3) * 7..(b * 4 + 4) * 7];
            let l = &last[b * 7..(b + 1) * 7];
            for (x, y) in f.iter().zip(l) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_range_on_single_example() {
        let m = Transformer::new(tiny_spec()).unwrap();
        let p = m.init_params(5);
        let data = tiny_data();
        let one = Dataset {
            features: Features::Tokens { seq_len: 4, ids: data.tokens(0).unwrap().to_vec() },
            labels: vec![data.labels[0]],
            ..data.clone()
        };
        let acc = accuracy(&m, &p, &one).unwrap();
        assert!(acc == 0.0 || acc == 1.0);
    }
}
