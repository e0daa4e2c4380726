//! Minimal dense linear algebra for the micro supernet.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `self * v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, vr) in self.data.chunks_exact(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
        out
    }

    /// `self += u * v^T`
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, ur) in self.data.chunks_exact_mut(self.cols).zip(u) {
            for (o, b) in row.iter_mut().zip(v) {
                *o += ur * b;
            }
        }
    }
}

/// Affine map `x -> w*x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Affine {
            w: Mat::zeros(rows, cols),
            b: vec![0.0; rows],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.w.matvec(x);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.w.data.iter().all(|v| v.is_finite()) && self.b.iter().all(|v| v.is_finite())
    }
}

pub fn add_in_place(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - log_sum).collect()
}

/// Index of the strictly largest component; first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
