//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is an immutable value: every operation returns a new tensor.
//! Reductions run in a fixed sequential order so results are bit-identical
//! whether or not the row-parallel matmul path is taken.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Work threshold (multiply-adds) above which matmul splits rows across threads.
const PARALLEL_MATMUL_WORK: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {expected} elements, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    /// Builds a 2-D tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a 2-D tensor, got shape {s:?}"))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!("expected a scalar, got shape {:?}", self.shape)))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{op}: shapes {:?} and {:?} differ", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.zip_map(other, "axpy", |a, b| a + s * b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: inner dimensions differ, {:?} x {:?}", self.shape, other.shape)));
        }
        Self::new(vec![m, n], matmul_kernel(&self.data, &other.data, m, k, n))
    }

    /// Row-wise `softmax(scale * a)`, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Contract(format!("softmax scale must be > 0, got {scale}")));
        }
        if !self.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = ((v - max) * scale).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        Self::new(vec![r, c], out)
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if axis >= first.ndim() {
            return Err(Error::Shape(format!("concat axis {axis} out of range")));
        }
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape(format!(
                    "concat: shape {:?} incompatible with {:?} on axis {axis}",
                    p.shape, first.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Self::new(shape, data)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || start + len > self.shape[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) on axis {axis} of shape {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let block = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * block + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Self::new(shape, data)
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.ndim() || sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(Error::Shape(format!("split sizes {sizes:?} do not tile axis {axis} of {:?}", self.shape)));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let piece = self.slice(axis, start, len);
                start += len;
                piece
            })
            .collect()
    }
}

/// `c = a (m x k) * b (k x n)`. Each output row accumulates over `k` in order,
/// so the parallel and serial paths produce identical bits.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |(i, out): (usize, &mut [f64])| {
        let ai = &a[i * k..(i + 1) * k];
        for (l, &av) in ai.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bl = &b[l * n..(l + 1) * n];
            for (o, &bv) in out.iter_mut().zip(bl) {
                *o += av * bv;
            }
        }
    };
    if n == 0 {
        return c;
    }
    if m * k * n >= PARALLEL_MATMUL_WORK && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}
