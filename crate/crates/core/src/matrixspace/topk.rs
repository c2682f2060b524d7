use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use super::MatchMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    /// Matrix entry divided by the largest entry of its row.
    pub confidence: f64,
    /// Raw matrix entry.
    pub weight: f64,
}

pub type Correspondences = Vec<Correspondence>;

fn row_max(m: &MatchMatrix, i: usize) -> f64 {
    m.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The `k` highest cells of `m`, largest first, ties ordered by `(i, j)`.
///
/// With `mutual`, only cells that are both the argmax of their row and of
/// their column compete, so fewer than `k` cells may come back.
pub fn extract_topk(m: &MatchMatrix, k: usize, mutual: bool) -> Result<Correspondences> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows * cols {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: "must lie in 1..=rows*cols",
        });
    }
    let mut cells: Vec<(usize, usize)> = if mutual {
        let col_best: Vec<usize> = (0..cols).map(|j| m.col_argmax(j)).collect();
        (0..rows)
            .filter_map(|i| {
                let j = m.row_argmax(i);
                (col_best[j] == i).then_some((i, j))
            })
            .collect()
    } else {
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect()
    };
    let order = |a: &(usize, usize), b: &(usize, usize)| {
        m.get(b.0, b.1)
            .partial_cmp(&m.get(a.0, a.1))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < cells.len() {
        cells.select_nth_unstable_by(k - 1, order);
        cells.truncate(k);
    }
    cells.sort_unstable_by(order);
    Ok(cells
        .into_iter()
        .map(|(i, j)| {
            let weight = m.get(i, j);
            let top = row_max(m, i);
            let confidence = if top > 0.0 { (weight / top).max(0.0) } else { 0.0 };
            Correspondence {
                source: i,
                target: j,
                confidence,
                weight,
            }
        })
        .collect())
}
