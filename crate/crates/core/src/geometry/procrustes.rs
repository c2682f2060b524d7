#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::SVD;

use super::{Mat3, PointCloud, RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Relative singular-value floor below which `H` is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Weighted first and second moments of a set of soft correspondences.
struct Moments {
    total_weight: f64,
    source_centroid: Vec3,
    target_centroid: Vec3,
    cross_covariance: Mat3,
    /// Upper bound of `‖H‖` used to detect a numerically vanishing `H`.
    magnitude: f64,
}

fn check_weight(w: f64) -> Result<()> {
    if !w.is_finite() || w < 0.0 {
        return Err(Error::InvalidWeights(w));
    }
    Ok(())
}

/// Weighted Procrustes (Kabsch) alignment of `source` onto `target`.
///
/// Minimises `Σ w ‖R p_i + t − q_j‖²` over SE(3) for the listed `(i, j, w)`
/// correspondences. Points are centred on their weighted centroids before the
/// cross-covariance `H = Σ w p̃ q̃ᵀ` is factored, and the reflection case is
/// folded into the smallest singular direction.
pub fn weighted_svd(
    source: &PointCloud,
    target: &PointCloud,
    correspondences: &[(usize, usize, f64)],
) -> Result<RigidTransform> {
    let mut total = 0.0;
    let mut src_sum = Vec3::zeros();
    let mut tgt_sum = Vec3::zeros();
    for &(i, j, w) in correspondences {
        check_weight(w)?;
        if i >= source.len() {
            return Err(Error::IndexOutOfRange { index: i, len: source.len() });
        }
        if j >= target.len() {
            return Err(Error::IndexOutOfRange { index: j, len: target.len() });
        }
        total += w;
        src_sum += source.point(i) * w;
        tgt_sum += target.point(j) * w;
    }
    if correspondences.len() < 3 || total <= 0.0 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            found: correspondences.len(),
        });
    }
    let source_centroid = src_sum / total;
    let target_centroid = tgt_sum / total;

    let mut h = Mat3::zeros();
    let mut magnitude = 0.0;
    for &(i, j, w) in correspondences {
        let p = source.point(i) - source_centroid;
        let q = target.point(j) - target_centroid;
        h += (p * q.transpose()) * w;
        magnitude += w * p.norm() * q.norm();
    }
    solve(Moments {
        total_weight: total,
        source_centroid,
        target_centroid,
        cross_covariance: h,
        magnitude,
    })
}

/// Soft Procrustes using every cell of a dense `N × M` weight matrix
/// (row-major), i.e. all source/target pairs weighted by the matching matrix.
pub fn weighted_svd_dense(
    source: &PointCloud,
    target: &PointCloud,
    weights: &[f64],
) -> Result<RigidTransform> {
    let (n, m) = (source.len(), target.len());
    if weights.len() != n * m {
        return Err(Error::ShapeMismatch {
            expected: (n, m),
            found: (weights.len(), 1),
        });
    }
    let mut positive = 0usize;
    let mut total = 0.0;
    let mut src_sum = Vec3::zeros();
    let mut col_sums = alloc::vec![0.0; m];
    for i in 0..n {
        let row = &weights[i * m..(i + 1) * m];
        let mut row_sum = 0.0;
        for (j, &w) in row.iter().enumerate() {
            check_weight(w)?;
            if w > 0.0 {
                positive += 1;
            }
            row_sum += w;
            col_sums[j] += w;
        }
        total += row_sum;
        src_sum += source.point(i) * row_sum;
    }
    if positive < 3 || total <= 0.0 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            found: positive,
        });
    }
    let tgt_sum: Vec3 = target
        .points()
        .iter()
        .zip(&col_sums)
        .map(|(q, &c)| q * c)
        .sum();
    let source_centroid = src_sum / total;
    let target_centroid = tgt_sum / total;

    let centred_tgt: alloc::vec::Vec<Vec3> =
        target.points().iter().map(|q| q - target_centroid).collect();
    let tgt_norms: alloc::vec::Vec<f64> = centred_tgt.iter().map(|q| q.norm()).collect();

    let mut h = Mat3::zeros();
    let mut magnitude = 0.0;
    for i in 0..n {
        let row = &weights[i * m..(i + 1) * m];
        let mut blended = Vec3::zeros();
        let mut norm_acc = 0.0;
        for ((&w, q), &qn) in row.iter().zip(&centred_tgt).zip(&tgt_norms) {
            blended += q * w;
            norm_acc += w * qn;
        }
        let p = source.point(i) - source_centroid;
        h += p * blended.transpose();
        magnitude += p.norm() * norm_acc;
    }
    solve(Moments {
        total_weight: total,
        source_centroid,
        target_centroid,
        cross_covariance: h,
        magnitude,
    })
}

fn solve(m: Moments) -> Result<RigidTransform> {
    debug_assert!(m.total_weight > 0.0);
    if !m.cross_covariance.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let svd = SVD::new(m.cross_covariance, true, true);
    let sv = svd.singular_values;
    // `SVD::new` orders singular values in decreasing order.
    if m.magnitude <= 0.0 || sv[0] <= RANK_TOLERANCE * m.magnitude || sv[1] < RANK_TOLERANCE * sv[0] {
        return Err(Error::DegenerateConfiguration);
    }
    let u = svd.u.ok_or(Error::DegenerateConfiguration)?;
    let v = svd.v_t.ok_or(Error::DegenerateConfiguration)?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = m.target_centroid - rotation * m.source_centroid;
    RigidTransform::new(rotation, translation)
}
