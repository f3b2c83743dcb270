//! Minimal dense row-major matrix and the handful of kernels the model needs.
//!
//! Linear layers follow the out × in convention: `y = x Wᵀ + b`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    /// SHA-256 over shape and little-endian values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        hex::encode(h.finalize())
    }

    pub(crate) fn hash_into(&self, h: &mut Sha256) {
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for x in &self.data {
            h.update(x.le_bytes());
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// `y = x Wᵀ + b` for `x: S×in`, `w: out×in`, `b: 1×out`.
pub fn linear<T: Real>(x: &Mat<T>, w: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    debug_assert_eq!(x.cols(), w.cols());
    let mut y = Mat::zeros(x.rows(), w.rows());
    for s in 0..x.rows() {
        let xr = x.row(s);
        let yr = y.row_mut(s);
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(xr, w.row(o)) + b.as_slice()[o];
        }
    }
    y
}

/// Backward of [`linear`]: accumulates `dW += dyᵀ x`, `db += Σ dy` and
/// returns `dx = dy W`.
pub fn linear_backward<T: Real>(
    x: &Mat<T>,
    w: &Mat<T>,
    dy: &Mat<T>,
    dw: &mut Mat<T>,
    db: &mut Mat<T>,
) -> Mat<T> {
    let mut dx = Mat::zeros(x.rows(), x.cols());
    for s in 0..x.rows() {
        let xr = x.row(s);
        let dyr = dy.row(s);
        for (o, &g) in dyr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            db.as_mut_slice()[o] += g;
            let wr = w.row(o);
            let dwr = dw.row_mut(o);
            for i in 0..xr.len() {
                dwr[i] += g * xr[i];
            }
            let dxr = dx.row_mut(s);
            for i in 0..wr.len() {
                dxr[i] += g * wr[i];
            }
        }
    }
    dx
}
