//! Dense row-major tensors and a reverse-mode differentiation tape.
//!
//! [`Tensor`] is a plain value. Differentiable computation happens on a
//! [`Graph`], which records every operation together with the forward values
//! its backward rule needs, and hands out [`Var`] handles into that record.

mod graph;
pub(crate) mod kernels;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{Gradients, Graph, Var};

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    const BYTES: usize;
    const PRECISION: Precision;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    const PRECISION: Precision = Precision::Train32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    const PRECISION: Precision = Precision::Test64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Train32,
    Test64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a matrix from `f64` rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::lit(v))).collect();
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns when viewed as a matrix; vectors are a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let (_, cols) = self.dims2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        Tensor {
            shape: vec![c, r],
            data: kernels::transpose(&self.data, r, c),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    Ok(Tensor::from_parts(
        vec![m, n],
        kernels::matmul(&a.data, &b.data, m, k, n),
    ))
}

/// Softmax over the allowed positions of a vector; disallowed positions are exactly zero.
pub fn masked_softmax<T: Scalar>(logits: &Tensor<T>, allow: &[bool]) -> Result<Tensor<T>> {
    if allow.len() != logits.numel() {
        return Err(Error::Dimension {
            op: "masked_softmax",
            left: logits.shape.clone(),
            right: vec![allow.len()],
        });
    }
    let mut out = vec![T::zero(); logits.numel()];
    if !kernels::masked_softmax_row(&logits.data, allow, &mut out) {
        return Err(Error::Mask("every position is disallowed".into()));
    }
    Ok(Tensor::from_parts(logits.shape.clone(), out))
}

/// Normalises `x` to zero mean and unit (biased) variance, then applies `gain` and `bias`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (rows, d) = x.dims2();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.shape.clone(),
        });
    }
    let mut out = vec![T::zero(); x.numel()];
    for r in 0..rows {
        let (xhat, _) = kernels::normalize_row(&x.data[r * d..(r + 1) * d], eps);
        for c in 0..d {
            out[r * d + c] = xhat[c] * gain.data[c] + bias.data[c];
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

/// `-log softmax(logits)[target]`, evaluated with log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<T> {
    if target >= logits.numel() {
        return Err(Error::Index {
            index: target,
            len: logits.numel(),
        });
    }
    Ok(kernels::log_sum_exp(&logits.data) - logits.data[target])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(matmul(&a, &z).unwrap(), z);
    }

    #[test]
    fn matmul_by_hand() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::<f64>::from_rows(&[&[5.0], &[6.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn masked_softmax_examples() {
        let s = masked_softmax(&Tensor::<f64>::vector(vec![0.0, 0.0]), &[true, true]).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = masked_softmax(&Tensor::<f64>::vector(vec![5.0, -3.0]), &[true, false]).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);

        let s = masked_softmax(&Tensor::<f64>::vector(vec![1.0, 2.0, 3.0]), &[true; 3]).unwrap();
        // e^k / (e + e^2 + e^3)
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (k, v) in s.data().iter().enumerate() {
            assert!(close(*v, ((k + 1) as f64).exp() / z, 1e-12));
        }
        assert!(close(s.data()[0], 0.0900, 1e-4));
        assert!(close(s.data()[1], 0.2447, 1e-4));
        assert!(close(s.data()[2], 0.6652, 1e-4));
    }

    #[test]
    fn masked_softmax_all_disallowed() {
        let err = masked_softmax(&Tensor::<f64>::vector(vec![1.0, 2.0]), &[false, false]);
        assert!(matches!(err, Err(Error::Mask(_))));
    }

    #[test]
    fn masked_softmax_large_logits_stay_finite() {
        let s = masked_softmax(&Tensor::<f32>::vector(vec![1e4, 1e4 - 1.0]), &[true, true]).unwrap();
        assert!(s.is_finite());
        assert!((s.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::<f64>::filled(&[4], 1.0);
        let zeros = Tensor::<f64>::zeros(&[4]);
        let out = layer_norm(&Tensor::filled(&[4], 3.5), &ones, &zeros, 1e-5).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let g = Tensor::<f64>::filled(&[2], 1.0);
        let b = Tensor::<f64>::zeros(&[2]);
        let out = layer_norm(&Tensor::vector(vec![-1.0, 1.0]), &g, &b, 1e-12).unwrap();
        assert!(close(out.data()[0], -1.0, 1e-9) && close(out.data()[1], 1.0, 1e-9));

        let b = Tensor::<f64>::filled(&[2], 3.0);
        let out = layer_norm(&Tensor::zeros(&[2]), &g, &b, 1e-5).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::<f64>::zeros(&[8]);
        for t in 0..8 {
            assert!(close(cross_entropy(&uniform, t).unwrap(), 8f64.ln(), 1e-12));
        }
        let mut peaked = Tensor::<f64>::zeros(&[8]);
        peaked.data_mut()[3] = 1000.0;
        assert!(cross_entropy(&peaked, 3).unwrap() < 1e-12);

        let l = cross_entropy(&Tensor::<f64>::vector(vec![1.0, 2.0]), 0).unwrap();
        assert!(close(l, -(1f64.exp() / (1f64.exp() + 2f64.exp())).ln(), 1e-12));
        assert!(close(l, 1.3133, 1e-4));

        assert!(matches!(
            cross_entropy(&uniform, 8),
            Err(Error::Index { index: 8, len: 8 })
        ));
    }
}
