//! Dense real vectors used for gradients and model parameters.

use std::fmt;
use std::ops::Index;

use crate::error::{Error, Result};

/// A dense, finite, non-empty vector of `f64`.
///
/// Every constructor and arithmetic operation rejects NaN and infinities, so
/// a value of this type is always finite.
#[derive(Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("vector must have at least one coordinate"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector construction"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    /// Unit vector along `axis`.
    pub fn basis(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::DimensionMismatch { expected: dim, found: axis + 1 });
        }
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_dim(other)?;
        let out: Vec<f64> = self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Self(out))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::NonFinite("scale factor"));
        }
        let out: Vec<f64> = self.0.iter().map(|&a| a * s).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scale"));
        }
        Ok(Self(out))
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::NonFinite("scale factor"));
        }
        self.zip_with(other, "add_scaled", |a, b| a + s * b)
    }

    pub fn inner_product(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        let ip = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum::<f64>();
        if !ip.is_finite() {
            return Err(Error::NonFinite("inner_product"));
        }
        Ok(ip)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// Squared Euclidean distance.
    pub fn distance_sq(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;

    fn index(&self, idx: usize) -> &f64 {
        &self.0[idx]
    }
}

impl fmt::Debug for GradientVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<f64>> for GradientVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl TryFrom<&[f64]> for GradientVector {
    type Error = Error;

    fn try_from(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }
}

/// Common dimension of a non-empty list of vectors.
pub(crate) fn common_dim(vectors: &[GradientVector]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::Empty("vector list"))?;
    let dim = first.dim();
    for v in &vectors[1..] {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: v.dim() });
        }
    }
    Ok(dim)
}

/// Arithmetic mean `(1/k) * sum(v_i)`, accumulated with compensated summation.
pub fn mean_of(vectors: &[GradientVector]) -> Result<GradientVector> {
    let dim = common_dim(vectors)?;
    let k = vectors.len() as f64;
    let out: Vec<f64> = (0..dim)
        .map(|j| compensated_sum(vectors.iter().map(|v| v.0[j])) / k)
        .collect();
    GradientVector::new(out)
}

/// Neumaier summation; accurate enough that reordering the terms changes
/// the result only in the last few bits.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
