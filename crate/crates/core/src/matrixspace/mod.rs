//! The space of (relaxed) doubly stochastic matching matrices.
//!
//! For an `N × M` matrix the feasible set is the transport polytope with
//! uniform marginals: rows sum to `1/N`, columns to `1/M`, total mass 1.
//! For `N = M` this is the Birkhoff polytope scaled by `1/N`.

mod sinkhorn;
mod topk;

pub use sinkhorn::{sinkhorn_project, SinkhornTape, ZERO_SUPPORT_SHIFT};
pub use topk::{extract_topk, Correspondence, Correspondences};

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sinkhorn iterations used when materialising ground-truth matrices.
pub const GT_SINKHORN_ITERATIONS: usize = 100;

/// Dense row-major `N × M` matching matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatchMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    /// The barycentre of the polytope: every entry `1/(NM)`.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0 / (rows * cols) as f64)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = alloc::vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// Elementwise `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    /// Column of the row maximum, ties to the smaller index.
    pub fn row_argmax(&self, i: usize) -> usize {
        argmax(self.row(i).iter().copied())
    }

    pub fn col_argmax(&self, j: usize) -> usize {
        argmax((0..self.rows).map(|i| self.get(i, j)))
    }

    pub fn row_argmaxes(&self) -> Vec<usize> {
        (0..self.rows).map(|i| self.row_argmax(i)).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of row and column sums from the uniform marginals.
    pub fn marginal_deviation(&self) -> (f64, f64) {
        let r = 1.0 / self.rows as f64;
        let c = 1.0 / self.cols as f64;
        let row = self.row_sums().iter().map(|s| (s - r).abs()).fold(0.0, f64::max);
        let col = self.col_sums().iter().map(|s| (s - c).abs()).fold(0.0, f64::max);
        (row, col)
    }

    /// Mean Shannon entropy (nats) of the row-normalised matrix.
    pub fn mean_row_entropy(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            let row = self.row(i);
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                continue;
            }
            acc -= row
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / s;
                    p * p.ln()
                })
                .sum::<f64>();
        }
        acc / self.rows as f64
    }

    /// Applies row and column permutations: `out[a][b] = self[rows[a]][cols[b]]`.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in rows {
            for &j in cols {
                data.push(self.get(i, j));
            }
        }
        Self::from_raw(rows.len(), cols.len(), data)
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (k, v) in values.enumerate() {
        if v > best {
            best = v;
            idx = k;
        }
    }
    idx
}

/// Binary-support matrix with mass `1/|pairs|` on each ground-truth cell.
pub fn ground_truth_support(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Result<MatchMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mass = 1.0 / pairs.len() as f64;
    let mut m = MatchMatrix::zeros(rows, cols);
    for &(i, j) in pairs {
        if i >= rows {
            return Err(Error::IndexOutOfRange { index: i, len: rows });
        }
        if j >= cols {
            return Err(Error::IndexOutOfRange { index: j, len: cols });
        }
        m.data[i * cols + j] = mass;
    }
    Ok(m)
}

/// Ground-truth matching matrix `E⁰`: the binary support projected onto the
/// polytope. Rows and columns without a partner start empty and are filled
/// by the projection's support shift.
pub fn ground_truth_matrix(
    rows: usize,
    cols: usize,
    pairs: &[(usize, usize)],
    iterations: usize,
) -> Result<MatchMatrix> {
    sinkhorn_project(&ground_truth_support(rows, cols, pairs)?, iterations, false)
}

/// Summary statistics of a matching matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixStats {
    pub rows: usize,
    pub cols: usize,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub row_sum_max_deviation: f64,
    pub col_sum_max_deviation: f64,
    pub mean_row_entropy: f64,
    pub mutual_argmax_count: usize,
}

impl MatrixStats {
    pub fn of(m: &MatchMatrix) -> Self {
        let (row_dev, col_dev) = m.marginal_deviation();
        let mutual = (0..m.n_rows())
            .filter(|&i| m.col_argmax(m.row_argmax(i)) == i)
            .count();
        Self {
            rows: m.n_rows(),
            cols: m.n_cols(),
            mass: m.total(),
            min: m.min(),
            max: m.max(),
            row_sum_max_deviation: row_dev,
            col_sum_max_deviation: col_dev,
            mean_row_entropy: m.mean_row_entropy(),
            mutual_argmax_count: mutual,
        }
    }
}

/// Fraction of rows whose argmax agrees between two matrices of equal shape.
pub fn argmax_agreement(a: &MatchMatrix, b: &MatchMatrix) -> Result<f64> {
    a.check_same_shape(b)?;
    let same = (0..a.n_rows())
        .filter(|&i| a.row_argmax(i) == b.row_argmax(i))
        .count();
    Ok(same as f64 / a.n_rows() as f64)
}
