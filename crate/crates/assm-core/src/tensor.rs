//! Dense row-major tensors shared by every other module.
//!
//! Values are held as f64 regardless of the declared dtype; the dtype tag
//! controls serialization width and, for f32, quantizes stored values so a
//! file round-trip is bit-exact.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: Dtype,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: Dtype::F64,
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype: Dtype::F64,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            dtype: Dtype::F64,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            dtype: Dtype::F64,
            data: vec![value],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor {
            shape: other.shape.clone(),
            dtype: other.dtype,
            data: vec![0.0; other.data.len()],
        }
    }

    /// Retag the dtype. Switching to f32 quantizes every element to f32
    /// precision so the tag and the payload agree.
    pub fn with_dtype(mut self, dtype: Dtype) -> Tensor {
        if dtype == Dtype::F32 && self.dtype != Dtype::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(self.rank() >= 1);
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(math::abs(v)))
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// c[i,j] = sum_t a[i,t] * b[t,j], f64 accumulation.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Dimension(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (t, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[t * n..(t + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(&[m, n], out)
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Dimension(format!(
                "transpose2 needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(&[n, m], out)
    }

    /// Softmax over the last extent with max subtraction.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let rows = self.lastdim_rows("softmax_lastdim")?;
        let width = *self.shape.last().unwrap();
        let mut out = self.data.clone();
        for r in 0..rows {
            softmax_row(&mut out[r * width..(r + 1) * width]);
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: out,
        })
    }

    /// Log-softmax over the last extent.
    pub fn log_softmax_lastdim(&self) -> Result<Tensor> {
        let rows = self.lastdim_rows("log_softmax_lastdim")?;
        let width = *self.shape.last().unwrap();
        let mut out = self.data.clone();
        for r in 0..rows {
            let row = &mut out[r * width..(r + 1) * width];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let log_z = math::ln(row.iter().map(|&v| math::exp(v - max)).sum::<f64>()) + max;
            for v in row.iter_mut() {
                *v -= log_z;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: out,
        })
    }

    fn lastdim_rows(&self, op: &str) -> Result<usize> {
        match self.shape.last() {
            Some(&w) if w >= 1 => Ok(self.data.len() / w),
            _ => Err(Error::Dimension(format!(
                "{op}: last extent must be >= 1, shape {:?}",
                self.shape
            ))),
        }
    }
}

pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_selector_row() {
        let sel = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![5.0, 7.0]).unwrap();
        let c = sel.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[5.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(Error::Dimension(msg)) => {
                assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let t = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        let s = t.softmax_lastdim().unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);

        let big = Tensor::new(&[2], vec![1000.0, 0.0]).unwrap();
        let s = big.softmax_lastdim().unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1].abs() < 1e-12);
        assert!(s.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_empty_lastdim_rejected() {
        let t = Tensor::zeros(&[3, 0]);
        assert!(matches!(t.softmax_lastdim(), Err(Error::Dimension(_))));
    }

    #[test]
    fn f32_retag_quantizes() {
        let t = Tensor::scalar(0.1).with_dtype(Dtype::F32);
        assert_eq!(t.data()[0], 0.1_f32 as f64);
    }
}
