//! Small dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {numel} entries but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Builds an `[rows.len(), cols]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        let cols = self.shape[1];
        self.data[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub(crate) fn matmul(&self, rhs: &Self) -> Option<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return None;
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, &self.data, &rhs.data, &mut out);
        Some(Tensor { shape: vec![m, n], data: out })
    }

    pub(crate) fn transpose(&self) -> Option<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Some(Tensor { shape: vec![c, r], data: out })
    }

    pub(crate) fn slice_rows(&self, start: usize, end: usize) -> Option<Self> {
        let rows = *self.shape.first()?;
        if start > end || end > rows {
            return None;
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Some(Tensor { shape, data: self.data[start * stride..end * stride].to_vec() })
    }

    pub(crate) fn pad_rows(&self, before: usize, after: usize) -> Option<Self> {
        let rows = *self.shape.first()?;
        let stride: usize = self.shape[1..].iter().product();
        let mut data = vec![T::zero(); before * stride];
        data.extend_from_slice(&self.data);
        data.resize((before + rows + after) * stride, T::zero());
        let mut shape = self.shape.clone();
        shape[0] = before + rows + after;
        Some(Tensor { shape, data })
    }

    /// Stacks tensors with equal trailing dimensions along the first axis.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let tail = &first.shape[1..];
        if parts.iter().any(|p| p.shape.is_empty() || &p.shape[1..] != tail) {
            return Err(Error::Shape {
                op: "concat_rows",
                shapes: parts.iter().map(|p| p.shape.clone()).collect(),
            });
        }
        let mut shape = first.shape.clone();
        shape[0] = parts.iter().map(|p| p.shape[0]).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { shape, data })
    }
}

/// Shape of `shape` read as a matrix: rank 1 is a row vector.
fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [d] => Some((1, d)),
        [r, c] => Some((r, c)),
        _ => None,
    }
}

/// Whether `from` expands to `to` by repeating size-1 axes (or is a single element).
pub(crate) fn broadcastable(from: &[usize], to: &[usize]) -> bool {
    if from.iter().product::<usize>() == 1 {
        return true;
    }
    if from == to {
        return true;
    }
    match (as_matrix(from), to) {
        (Some((r, c)), &[tr, tc]) => (r == tr || r == 1) && (c == tc || c == 1),
        _ => false,
    }
}

pub(crate) fn broadcast_to<T: Scalar>(t: &Tensor<T>, to: &[usize]) -> Tensor<T> {
    if t.numel() == 1 {
        return Tensor::full(to, t.data[0]);
    }
    if t.shape == to {
        return t.clone();
    }
    let (r, c) = as_matrix(&t.shape).expect("checked by broadcastable");
    let (tr, tc) = (to[0], to[1]);
    let mut data = Vec::with_capacity(tr * tc);
    for i in 0..tr {
        let si = if r == 1 { 0 } else { i };
        for j in 0..tc {
            let sj = if c == 1 { 0 } else { j };
            data.push(t.data[si * c + sj]);
        }
    }
    Tensor { shape: to.to_vec(), data }
}

/// Adjoint of [`broadcast_to`]: sums `t` (shaped `from`) down to shape `to`.
pub(crate) fn sum_to<T: Scalar>(t: &Tensor<T>, to: &[usize]) -> Tensor<T> {
    if t.shape == to {
        return t.clone();
    }
    if to.iter().product::<usize>() == 1 {
        return Tensor { shape: to.to_vec(), data: vec![t.sum()] };
    }
    let (r, c) = as_matrix(to).expect("checked by broadcastable");
    let (sr, sc) = (t.shape[0], t.shape[1]);
    let mut data = vec![T::zero(); r * c];
    for i in 0..sr {
        let ti = if r == 1 { 0 } else { i };
        for j in 0..sc {
            let tj = if c == 1 { 0 } else { j };
            data[ti * c + tj] += t.data[i * sc + j];
        }
    }
    Tensor { shape: to.to_vec(), data }
}

/// Elementwise binary op; one side may be a single element.
pub(crate) fn zip_with<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Option<Tensor<T>> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Some(Tensor { shape: a.shape.clone(), data });
    }
    match (a.numel(), b.numel()) {
        (1, 1) => {
            let shape = if a.shape.len() >= b.shape.len() { &a.shape } else { &b.shape };
            Some(Tensor { shape: shape.clone(), data: vec![f(a.data[0], b.data[0])] })
        }
        (1, _) => Some(b.map(|y| f(a.data[0], y))),
        (_, 1) => Some(a.map(|x| f(x, b.data[0]))),
        _ => None,
    }
}
