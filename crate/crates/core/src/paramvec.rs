//! Flat parameter vectors and the Euclidean geometry the optimizers and
//! agents move in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are treated as "no direction" by [`unit_direction`].
pub const DEFAULT_DEGENERATE_FLOOR: f64 = 1e-12;

/// All trainable parameters of a model laid out as one real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> Result<f64> {
        if self.0.is_empty() {
            return Err(Error::invalid("norm of an empty vector"));
        }
        Ok(sum_sq(&self.0).sqrt())
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        if self.0.is_empty() {
            return Err(Error::invalid("distance between empty vectors"));
        }
        let s: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(s.sqrt())
    }

    /// Returns `self + s * d`.
    pub fn axpy(&self, s: f64, d: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy_in_place(s, d)?;
        Ok(out)
    }

    /// `self += s * d`.
    pub fn axpy_in_place(&mut self, s: f64, d: &ParamVector) -> Result<()> {
        check_dims(self, d)?;
        if !s.is_finite() {
            return Err(Error::invalid(format!("axpy scale {s} is not finite")));
        }
        for (v, x) in self.0.iter_mut().zip(&d.0) {
            *v += s * x;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_dims(self, other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|x| *x *= s);
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

pub(crate) fn sum_sq(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Distance from `y` to `x` and the unit vector pointing from `y` towards `x`.
///
/// Fails with [`Error::DegenerateDirection`] when the distance is below `floor`.
pub fn unit_direction(x: &ParamVector, y: &ParamVector, floor: f64) -> Result<(f64, ParamVector)> {
    let diff = x.sub(y)?;
    let d = diff.norm()?;
    if !(d >= floor) || d == 0.0 {
        return Err(Error::DegenerateDirection { distance: d, floor });
    }
    let mut l = diff;
    l.scale(1.0 / d);
    Ok((d, l))
}
