use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Batches are stored one sample per row, so a minibatch of states is a
/// `batch x state_dim` matrix and a bias is a `1 x out` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Mat::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data: data.to_vec(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Mat::from_rows",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
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
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self * weight^T + bias` where `weight` is `out x in` and `bias` is `1 x out`.
    pub fn linear(&self, weight: &Self, bias: &Self) -> Self {
        debug_assert_eq!(self.cols, weight.cols);
        debug_assert_eq!(bias.shape(), (1, weight.rows));
        let mut out = Self::zeros(self.rows, weight.rows);
        for b in 0..self.rows {
            let x = self.row(b);
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = weight.row(o);
                let mut acc = 0.0;
                for (xi, wi) in x.iter().zip(w) {
                    acc += xi * wi;
                }
                *yo = acc + bias.data[o];
            }
        }
        out
    }

    /// `self * other` for `self: n x k`, `other: k x m`.
    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let y = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b = other.row(k);
                for (yj, bj) in y.iter_mut().zip(b) {
                    *yj += aik * bj;
                }
            }
        }
        out
    }

    /// `self^T * other` for `self: n x a`, `other: n x b`; result is `a x b`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Self::zeros(self.cols, other.cols);
        for n in 0..self.rows {
            let a = self.row(n);
            let b = other.row(n);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let y = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (yj, bj) in y.iter_mut().zip(b) {
                    *yj += ai * bj;
                }
            }
        }
        out
    }

    /// Column sums as a `1 x cols` row.
    pub fn col_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Column-wise `(x - shift) / scale`.
    pub fn normalize_cols(&self, shift: &[f64], scale: &[f64]) -> Self {
        debug_assert_eq!(shift.len(), self.cols);
        let mut out = self.clone();
        for r in 0..self.rows {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(shift).zip(scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Column-wise `x * scale + shift`.
    pub fn denormalize_cols(&self, shift: &[f64], scale: &[f64]) -> Self {
        debug_assert_eq!(shift.len(), self.cols);
        let mut out = self.clone();
        for r in 0..self.rows {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(shift).zip(scale) {
                *v = *v * s + m;
            }
        }
        out
    }

    /// Horizontal concatenation.
    pub fn hcat(&self, other: &Self) -> Self {
        debug_assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Columns `[start, start + width)`.
    pub fn col_slice(&self, start: usize, width: usize) -> Self {
        debug_assert!(start + width <= self.cols);
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Rows selected by index, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_computation() {
        let x = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let w = Mat::from_rows(&[[1.0, 0.0], [0.5, -1.0], [2.0, 1.0]]).unwrap();
        let b = Mat::row_vector(&[0.0, 1.0, -1.0]);
        let y = x.linear(&w, &b);
        assert_eq!(y.row(0), &[1.0, -0.5, 3.0]);
        assert_eq!(y.row(1), &[3.0, -1.5, 9.0]);
    }

    #[test]
    fn transpose_products_agree() {
        let a = Mat::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Mat::from_rows(&[[1.0, -1.0], [0.0, 2.0]]).unwrap();
        // a^T b computed two ways
        let direct = a.t_matmul(&b);
        let mut at = Mat::zeros(3, 2);
        for i in 0..2 {
            for j in 0..3 {
                at.set(j, i, a.get(i, j));
            }
        }
        assert_eq!(direct, at.matmul(&b));
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Mat::from_vec(2, 2, vec![0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normalize_round_trip() {
        let x = Mat::from_rows(&[[1.5, -2.0], [0.25, 8.0]]).unwrap();
        let shift = [0.5, 1.0];
        let scale = [2.0, 3.0];
        let back = x.normalize_cols(&shift, &scale).denormalize_cols(&shift, &scale);
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
