//! Dense row-major f64 arrays and the raw kernels the graph ops are built on.

use crate::error::{Error, Result};

/// Dense array of f64 values in row-major order.
///
/// Most arrays in this crate are rank 2 (`[rows, cols]`) or scalar (`[1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "array-new",
                details: format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape,
            data: vec![v; n],
        }
    }

    /// Rank-2 constructor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "array-from-rows",
                    details: format!("ragged rows: expected width {}, got {}", c, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Array::new(vec![r, c], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for shape `[1]` or `[]`.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "scalar-value",
                details: format!("expected scalar, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 array (a rank-1 array counts as a single row).
    pub fn nrows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn ncols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => self.data.len(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.ncols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.ncols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.ncols();
        self.data[i * c + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.shape == other.shape
    }
}

/// C = A · B for rank-2 arrays, [n,k] x [k,m] -> [n,m].
pub fn matmul(a: &Array, b: &Array) -> Array {
    let (n, k) = (a.nrows(), a.ncols());
    let m = b.ncols();
    debug_assert_eq!(k, b.nrows());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = a.row(i);
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.data[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    Array {
        shape: vec![n, m],
        data: out,
    }
}

/// out += A · Bᵀ, A [n,m], B [k,m], out [n,k].
pub fn matmul_nt_acc(a: &Array, b: &Array, out: &mut Array) {
    let (n, m) = (a.nrows(), a.ncols());
    let k = b.nrows();
    debug_assert_eq!(m, b.ncols());
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for kk in 0..k {
            let brow = &b.data[kk * m..(kk + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                acc += arow[j] * brow[j];
            }
            orow[kk] += acc;
        }
    }
}

/// out += Aᵀ · B, A [n,k], B [n,m], out [k,m].
pub fn matmul_tn_acc(a: &Array, b: &Array, out: &mut Array) {
    let (n, k) = (a.nrows(), a.ncols());
    let m = b.ncols();
    debug_assert_eq!(n, b.nrows());
    for i in 0..n {
        let arow = a.row(i);
        let brow = b.row(i);
        for kk in 0..k {
            let av = arow[kk];
            let orow = &mut out.data[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

pub fn transpose(a: &Array) -> Array {
    let (n, m) = (a.nrows(), a.ncols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a.data[i * m + j];
        }
    }
    Array {
        shape: vec![m, n],
        data: out,
    }
}

/// Numerically stable softmax over each row, in place on a copy.
pub fn row_softmax(a: &Array) -> Array {
    let mut out = a.clone();
    if out.shape.len() == 1 {
        out.shape = vec![1, out.data.len()];
    }
    let (n, m) = (out.nrows(), out.ncols());
    for i in 0..n {
        let row = &mut out.data[i * m..(i + 1) * m];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out.shape = a.shape.clone();
    out
}

/// Stable log(sum(exp(row))) for one row.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
