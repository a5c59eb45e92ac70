use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// Builds an `rows × cols` matrix from `f64` values.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(&[rows, cols], values.iter().map(|&v| T::lit(v)).collect())
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(&[rows.len(), cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor (1 for rank-1, 1 for rank-0).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Selects a subset of columns of a rank-2 tensor.
    pub fn select_cols(&self, idx: &[usize]) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(m * idx.len());
        for r in 0..m {
            let row = &self.data[r * n..(r + 1) * n];
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Self {
            shape: vec![m, idx.len()],
            data,
        }
    }

    /// Selects a subset of rows.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let n = self.cols();
        let mut data = Vec::with_capacity(n * idx.len());
        for &r in idx {
            data.extend_from_slice(&self.data[r * n..(r + 1) * n]);
        }
        Self {
            shape: vec![idx.len(), n],
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let (m, n) = (self.rows(), self.cols());
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Self {
            shape: vec![n, m],
            data,
        }
    }

    /// Horizontal concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let m = parts.first().map_or(0, |p| p.rows());
        for p in parts {
            if p.rows() != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: parts[0].shape.clone(),
                    right: p.shape.clone(),
                });
            }
        }
        let n: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data,
        })
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`, `out: m×n`.
pub(crate) fn gemm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += aᵀ · b` for `a: k×m`, `b: k×n`, `out: m×n`.
pub(crate) fn gemm_tn_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`, `out: m×n`.
pub(crate) fn gemm_nt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }
}
