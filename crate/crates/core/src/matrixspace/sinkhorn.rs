#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use super::MatchMatrix;
use crate::error::{Error, Result};

/// Relative shift added to every entry when some row or column of the
/// clamped input carries no mass, so that the scaling problem is solvable.
pub const ZERO_SUPPORT_SHIFT: f64 = 1e-12;

fn check_iterations(iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "iterations",
            reason: "must be at least 1",
        });
    }
    Ok(())
}

fn exp_rows(m: &MatchMatrix) -> Vec<f64> {
    let cols = m.n_cols();
    let mut out = Vec::with_capacity(m.as_slice().len());
    for i in 0..m.n_rows() {
        let row = m.row(i);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend(row.iter().map(|&v| (v - top).exp()));
    }
    debug_assert_eq!(out.len(), m.n_rows() * cols);
    out
}

fn clamp_and_shift(m: &MatchMatrix) -> Result<Vec<f64>> {
    let mut data: Vec<f64> = m.as_slice().iter().map(|&v| v.max(0.0)).collect();
    let top = data.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::ZeroMassInput);
    }
    let (rows, cols) = m.shape();
    let empty_row = (0..rows).any(|i| data[i * cols..(i + 1) * cols].iter().all(|&v| v == 0.0));
    let empty_col = (0..cols).any(|j| (0..rows).all(|i| data[i * cols + j] == 0.0));
    if empty_row || empty_col {
        let shift = top * ZERO_SUPPORT_SHIFT;
        data.iter_mut().for_each(|v| *v += shift);
    }
    Ok(data)
}

fn normalize_cols(data: &mut [f64], rows: usize, cols: usize, sums: &mut [f64]) {
    let target = 1.0 / cols as f64;
    sums.iter_mut().for_each(|s| *s = 0.0);
    for i in 0..rows {
        for (s, v) in sums.iter_mut().zip(&data[i * cols..(i + 1) * cols]) {
            *s += v;
        }
    }
    for i in 0..rows {
        for (v, s) in data[i * cols..(i + 1) * cols].iter_mut().zip(sums.iter()) {
            *v *= target / s;
        }
    }
}

fn normalize_rows(data: &mut [f64], rows: usize, cols: usize, sums: &mut [f64]) {
    let target = 1.0 / rows as f64;
    for (i, s) in sums.iter_mut().enumerate() {
        let row = &mut data[i * cols..(i + 1) * cols];
        *s = row.iter().sum();
        let scale = target / *s;
        row.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Projects a score matrix onto the uniform-marginal transport polytope.
///
/// Scores are made non-negative first: in the log domain they are
/// exponentiated after subtracting each row's maximum, otherwise negative
/// entries are clamped to zero (with a tiny uniform shift if a row or column
/// would be empty). Each iteration normalises columns then rows, so row sums
/// are exact on return.
pub fn sinkhorn_project(m: &MatchMatrix, iterations: usize, in_log_domain: bool) -> Result<MatchMatrix> {
    check_iterations(iterations)?;
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let (rows, cols) = m.shape();
    let mut data = if in_log_domain { exp_rows(m) } else { clamp_and_shift(m)? };
    let mut col_sums = alloc::vec![0.0; cols];
    let mut row_sums = alloc::vec![0.0; rows];
    for _ in 0..iterations {
        normalize_cols(&mut data, rows, cols, &mut col_sums);
        normalize_rows(&mut data, rows, cols, &mut row_sums);
    }
    MatchMatrix::new(rows, cols, data)
}

struct Step {
    after_cols: Vec<f64>,
    col_sums: Vec<f64>,
    after_rows: Vec<f64>,
    row_sums: Vec<f64>,
}

/// Log-domain Sinkhorn with every intermediate kept for reverse-mode
/// differentiation through the unrolled iterations.
pub struct SinkhornTape {
    rows: usize,
    cols: usize,
    exponentiated: Vec<f64>,
    argmax: Vec<usize>,
    steps: Vec<Step>,
}

impl SinkhornTape {
    /// Same arithmetic as `sinkhorn_project(logits, iterations, true)`.
    pub fn forward(logits: &MatchMatrix, iterations: usize) -> Result<(MatchMatrix, Self)> {
        check_iterations(iterations)?;
        if logits.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let (rows, cols) = logits.shape();
        let exponentiated = exp_rows(logits);
        let mut data = exponentiated.clone();
        let mut steps = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let mut col_sums = alloc::vec![0.0; cols];
            normalize_cols(&mut data, rows, cols, &mut col_sums);
            let after_cols = data.clone();
            let mut row_sums = alloc::vec![0.0; rows];
            normalize_rows(&mut data, rows, cols, &mut row_sums);
            steps.push(Step {
                after_cols,
                col_sums,
                after_rows: data.clone(),
                row_sums,
            });
        }
        let tape = Self {
            rows,
            cols,
            exponentiated,
            argmax: logits.row_argmaxes(),
            steps,
        };
        Ok((MatchMatrix::new(rows, cols, data)?, tape))
    }

    /// Gradient with respect to the logits given the gradient of the output.
    pub fn backward(&self, grad_output: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = (self.rows, self.cols);
        if grad_output.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                found: (grad_output.len(), 1),
            });
        }
        let row_target = 1.0 / rows as f64;
        let col_target = 1.0 / cols as f64;
        let mut g = grad_output.to_vec();
        for step in self.steps.iter().rev() {
            // rows: z = r y / T
            for i in 0..rows {
                let z = &step.after_rows[i * cols..(i + 1) * cols];
                let gi = &mut g[i * cols..(i + 1) * cols];
                let dot: f64 = gi.iter().zip(z).map(|(a, b)| a * b).sum();
                let inv = 1.0 / step.row_sums[i];
                gi.iter_mut().for_each(|v| *v = (row_target * *v - dot) * inv);
            }
            // columns: y = c x / S
            let mut dots = alloc::vec![0.0; cols];
            for i in 0..rows {
                let y = &step.after_cols[i * cols..(i + 1) * cols];
                for ((d, a), b) in dots.iter_mut().zip(&g[i * cols..(i + 1) * cols]).zip(y) {
                    *d += a * b;
                }
            }
            for i in 0..rows {
                for (j, v) in g[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                    *v = (col_target * *v - dots[j]) / step.col_sums[j];
                }
            }
        }
        // x = exp(l - max_row l): the row max also receives the negated sum
        for i in 0..rows {
            let x = &self.exponentiated[i * cols..(i + 1) * cols];
            let gi = &mut g[i * cols..(i + 1) * cols];
            let mut through_max = 0.0;
            for (v, xv) in gi.iter_mut().zip(x) {
                *v *= xv;
                through_max += *v;
            }
            gi[self.argmax[i]] -= through_max;
        }
        Ok(g)
    }
}
