//! Dense row-major matrices of `f64`.
//!
//! Entity-indexed quantities are stored entity-major: a batch of `w` vectors
//! over `n` entities is an `n × w` tensor whose columns are the vectors. This
//! keeps the inner loops of sparse propagation contiguous.

use std::fmt;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {rows}x{cols}",
            data.len()
        );
        Tensor { rows, cols, data }
    }

    /// A `1 × n` row.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_vec(1, n, data)
    }

    /// An `n × 1` column.
    pub fn column(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_vec(n, 1, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies out column `c`.
    pub fn column_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry in row `r` (first one on ties).
    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row_slice(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            if r > 0 {
                write!(f, "; ")?;
            }
            let row = self.row_slice(r);
            for (i, v) in row.iter().take(8).enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v:.4}")?;
            }
            if row.len() > 8 {
                write!(f, ", ..")?;
            }
        }
        if self.rows > 8 {
            write!(f, "; ..")?;
        }
        write!(f, "]")
    }
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_slice_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    assert!(!row.is_empty(), "softmax of an empty row");
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// `a (n×k) · bᵀ` where `b` is `p×k`, giving `n×p`.
pub(crate) fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "matmul_bt inner dimension mismatch");
    let (n, k, p) = (a.rows(), a.cols(), b.rows());
    let mut out = Tensor::zeros(n, p);
    if n == 0 || p == 0 || k == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            p,
            1.0,
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            1,
            k as isize,
            0.0,
            out.data_mut().as_mut_ptr(),
            p as isize,
            1,
        );
    }
    out
}

/// `out += a (n×p) · b (p×k)`.
pub(crate) fn matmul_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
    assert_eq!(out.shape(), (a.rows(), b.cols()), "matmul output shape");
    let (n, p, k) = (a.rows(), a.cols(), b.cols());
    if n == 0 || p == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            p,
            k,
            1.0,
            a.data().as_ptr(),
            p as isize,
            1,
            b.data().as_ptr(),
            k as isize,
            1,
            1.0,
            out.data_mut().as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `out += aᵀ · b` for `a: n×p`, `b: n×k`, giving `p×k`.
pub(crate) fn matmul_at_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    assert_eq!(a.rows(), b.rows(), "matmul_at inner dimension mismatch");
    assert_eq!(out.shape(), (a.cols(), b.cols()), "matmul_at output shape");
    let (n, p, k) = (a.rows(), a.cols(), b.cols());
    if n == 0 || p == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            p,
            n,
            k,
            1.0,
            a.data().as_ptr(),
            1,
            p as isize,
            b.data().as_ptr(),
            k as isize,
            1,
            1.0,
            out.data_mut().as_mut_ptr(),
            k as isize,
            1,
        );
    }
}
