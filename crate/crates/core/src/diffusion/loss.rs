#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrixspace::MatchMatrix;

/// Predictions are clamped to `[c, 1 − c]` before taking logs.
pub const PROBABILITY_CLAMP: f64 = 1e-7;
/// A target cell is positive when it holds at least this fraction of its
/// row's mass (`N · e0 ≥ 0.5`).
pub const POSITIVE_MASS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

/// Focal term and its derivative in `p` for one cell.
fn focal_cell(p: f64, positive: bool, fp: FocalParams) -> (f64, f64) {
    let FocalParams { gamma, alpha } = fp;
    if positive {
        let q = 1.0 - p;
        let loss = -alpha * q.powf(gamma) * p.ln();
        let grad = -alpha * (q.powf(gamma) / p - gamma * q.powf(gamma - 1.0) * p.ln());
        (loss, grad)
    } else {
        let q = 1.0 - p;
        let loss = -(1.0 - alpha) * p.powf(gamma) * q.ln();
        let grad = -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q);
        (loss, grad)
    }
}

/// Mean binary focal loss over all cells, together with its gradient with
/// respect to `e0_hat`.
///
/// Probabilities are `e0_hat` rescaled by the row count (so a perfect
/// polytope matching scores 1) and clamped. Positive targets are the cells
/// of `e0` carrying most of their row's mass; the tiny entries a
/// partial-overlap ground truth spreads over unmatched rows are negatives.
/// Cells where the clamp is active receive zero gradient.
pub fn simple_loss_with_grad(e0_hat: &MatchMatrix, e0: &MatchMatrix, fp: FocalParams) -> Result<(f64, Vec<f64>)> {
    e0_hat.check_same_shape(e0)?;
    let n = e0.n_rows() as f64;
    let cells = e0.as_slice().len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(e0.as_slice().len());
    for (&pred, &target) in e0_hat.as_slice().iter().zip(e0.as_slice()) {
        let raw = pred * n;
        let p = raw.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        let (loss, dp) = focal_cell(p, target * n >= POSITIVE_MASS, fp);
        total += loss;
        let active = raw > PROBABILITY_CLAMP && raw < 1.0 - PROBABILITY_CLAMP;
        grad.push(if active { dp * n / cells } else { 0.0 });
    }
    Ok((total / cells, grad))
}

pub fn simple_loss(e0_hat: &MatchMatrix, e0: &MatchMatrix, fp: FocalParams) -> Result<f64> {
    simple_loss_with_grad(e0_hat, e0, fp).map(|(l, _)| l)
}
