//! Dense row-major `f64` tensors.
//!
//! Binary operations broadcast with trailing-dimension alignment: shapes are
//! compared from the last axis backwards, an axis of extent 1 (or a missing
//! leading axis) stretches to match the other operand, and any other mismatch
//! is a programming error that panics.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense tensor with a shared, immutable buffer. Cloning is O(rank).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(Vec::new(), vec![v])
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self::from_parts(vec![v.len()], v)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Builds an `rows.len() × width` matrix. All rows must share one width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "ragged rows: expected width {width}, got {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self::from_parts(vec![rows.len(), width], data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range for axis {i} of {:?}", self.shape);
            off = off * ext + ix;
        }
        self.data[off]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let width = *self.shape.last().unwrap_or(&1);
        self.data.chunks(width.max(1))
    }

    pub fn nrows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    pub fn ncols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Self::from_parts(self.shape.clone(), data);
        }
        if other.data.len() == 1 && other.rank() <= self.rank() {
            let b = other.data[0];
            return self.map(|a| f(a, b));
        }
        if self.data.len() == 1 && self.rank() <= other.rank() {
            let a = self.data[0];
            return other.map(|b| f(a, b));
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape);
        let n: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        for_each_index(&out_shape, |_, idx| {
            let ia: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
            let ib: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
            data.push(f(self.data[ia], other.data[ib]));
        });
        Self::from_parts(out_shape, data)
    }

    pub fn add(&self, o: &Tensor) -> Tensor {
        self.zip_map(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &Tensor) -> Tensor {
        self.zip_map(o, |a, b| a - b)
    }

    pub fn mul(&self, o: &Tensor) -> Tensor {
        self.zip_map(o, |a, b| a * b)
    }

    pub fn div(&self, o: &Tensor) -> Tensor {
        self.zip_map(o, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|a| a * c)
    }

    /// Sum of all entries as a rank-0 tensor, using pairwise summation.
    pub fn sum(&self) -> Tensor {
        Tensor::scalar(pairwise_sum(&self.data))
    }

    pub fn sum_value(&self) -> f64 {
        pairwise_sum(&self.data)
    }

    /// Reverses broadcasting: sums over the axes along which `shape` would
    /// have been stretched to produce `self.shape()`.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let n: usize = shape.iter().product();
        if n == 1 {
            return Self::from_parts(shape.to_vec(), vec![pairwise_sum(&self.data)]);
        }
        debug_assert_eq!(broadcast_shape(shape, &self.shape), self.shape);
        let mut out = vec![0.0; n];
        if self.shape.ends_with(shape) {
            for chunk in self.data.chunks(n) {
                for (o, v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
        } else {
            let strides = broadcast_strides(shape, &self.shape);
            let data = &self.data;
            for_each_index(&self.shape, |flat, idx| {
                let io: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                out[io] += data[flat];
            });
        }
        Self::from_parts(shape.to_vec(), out)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(
            broadcast_shape(&self.shape, shape),
            shape,
            "cannot broadcast {:?} to {shape:?}",
            self.shape
        );
        let n: usize = shape.iter().product();
        if self.data.len() == 1 {
            return Self::full(shape, self.data[0]);
        }
        let mut data = Vec::with_capacity(n);
        let strides = broadcast_strides(&self.shape, shape);
        for_each_index(shape, |_, idx| {
            let i: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[i]);
        });
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        Self {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert!(
            self.rank() == 2 && rhs.rank() == 2 && self.shape[1] == rhs.shape[0],
            "matmul shape mismatch: {:?} x {:?}",
            self.shape,
            rhs.shape
        );
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: the slices hold m*k, k*n and m*n values laid out row-major,
            // matching the dimensions and strides passed.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    self.data.as_ptr(),
                    k as isize,
                    1,
                    rhs.data.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Self::from_parts(vec![m, n], out)
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "transpose needs a matrix, got {:?}", self.shape);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    /// Slice `len` entries starting at `start` along the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Tensor {
        let width = *self.shape.last().expect("slice_last on a scalar");
        assert!(start + len <= width, "slice {start}+{len} exceeds width {width}");
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = len;
        if start == 0 && len == width {
            return self.clone();
        }
        let mut out = Vec::with_capacity(self.data.len() / width.max(1) * len);
        for row in self.data.chunks(width) {
            out.extend_from_slice(&row[start..start + len]);
        }
        Self::from_parts(shape, out)
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let lead = &parts[0].shape[..parts[0].rank() - 1];
        for p in parts {
            assert_eq!(&p.shape[..p.rank() - 1], lead, "concat leading shapes differ");
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape.last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Self::from_parts(shape, out)
    }

    /// Selects rows of a rank-2 tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let width = self.ncols();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&self.data[r * width..(r + 1) * width]);
        }
        Self::from_parts(vec![rows.len(), width], out)
    }

    /// Contiguous row range of a rank-2 tensor.
    pub fn row_range(&self, start: usize, end: usize) -> Tensor {
        let width = self.ncols();
        Self::from_parts(
            vec![end - start, width],
            self.data[start * width..end * width].to_vec(),
        )
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `Σ x²`, pairwise.
    pub fn square_sum(&self) -> f64 {
        pairwise_sum(&self.data.iter().map(|v| v * v).collect::<Vec<_>>())
    }

    pub fn norm2(&self) -> f64 {
        pairwise_sum(&self.data.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
    }
}

/// Pairwise (cascade) summation. The split point depends only on the
/// length, so the result is a fixed function of the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < a.len() { a[a.len() - 1 - i] } else { 1 };
        let db = if i < b.len() { b[b.len() - 1 - i] } else { 1 };
        out[rank - 1 - i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
        };
    }
    out
}

/// Strides of `shape` in the index space of `target`, with zero stride on
/// broadcast axes.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - shape.len();
    let mut strides = vec![0; target.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..n {
        f(flat, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
