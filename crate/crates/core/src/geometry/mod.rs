//! 3D primitives: point clouds, rigid transforms, flow fields, closed-form
//! weighted alignment and exact nearest-neighbour queries.

mod neighbors;
mod procrustes;

pub use neighbors::{interpolate_flow, knn, knn_points, IDW_EPSILON};
pub use procrustes::{weighted_svd, weighted_svd_dense, RANK_TOLERANCE};

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for the orthonormality and determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Per-point descriptor vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f64>,
}

impl Descriptors {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidPointCloud("descriptor dimension must be >= 1"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::InvalidPointCloud("descriptor rows differ in dimension"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPointCloud("descriptor entries must be finite"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidPointCloud("descriptor buffer is not a multiple of dim"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPointCloud("descriptor entries must be finite"));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Reorders rows; `order[k]` is the old index of new row `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }
}

/// Ordered list of 3D points (meters) with optional per-point descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Vec3>,
    descriptors: Option<Descriptors>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidPointCloud("coordinates must be finite"));
        }
        Ok(Self {
            points,
            descriptors: None,
        })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn with_descriptors(mut self, descriptors: Descriptors) -> Result<Self> {
        if descriptors.len() != self.points.len() {
            return Err(Error::InvalidPointCloud("descriptor count differs from point count"));
        }
        self.descriptors = Some(descriptors);
        Ok(self)
    }

    pub fn without_descriptors(mut self) -> Self {
        self.descriptors = None;
        self
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn descriptors(&self) -> Option<&Descriptors> {
        self.descriptors.as_ref()
    }

    pub fn descriptor_dim(&self) -> Option<usize> {
        self.descriptors.as_ref().map(Descriptors::dim)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Maximum pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max((a - b).norm_squared());
            }
        }
        best.sqrt()
    }

    /// Returns a new cloud keeping points in `order` (old indices).
    pub fn select(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
            descriptors: self.descriptors.as_ref().map(|d| d.permuted(order)),
        }
    }

    /// Same points, displaced by `flow`.
    pub fn displaced(&self, flow: &FlowField) -> Result<Self> {
        if flow.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: flow.len(),
            });
        }
        Ok(Self {
            points: self
                .points
                .iter()
                .zip(flow.vectors())
                .map(|(p, v)| p + v)
                .collect(),
            descriptors: self.descriptors.clone(),
        })
    }
}

/// Rigid motion `x -> R x + t` with `R` in SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entries"));
        }
        let gram = rotation.transpose() * rotation - Mat3::identity();
        if gram.iter().any(|v| v.abs() > ROTATION_TOLERANCE) {
            return Err(Error::InvalidTransform("rotation is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidTransform("rotation determinant is not +1"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub(crate) fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts_unchecked(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::from_parts_unchecked(Mat3::identity(), translation)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self::from_parts_unchecked(*rotation.matrix(), translation)
    }

    /// Builds the rotation of a (not necessarily normalised) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Self::from_parts_unchecked(*q.to_rotation_matrix().matrix(), translation)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::from_parts_unchecked(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_parts_unchecked(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Per-point displacement vectors for a source cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField(Vec<Vec3>);

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Result<Self> {
        if vectors.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self(vectors))
    }

    pub fn zeros(len: usize) -> Self {
        Self(alloc::vec![Vec3::zeros(); len])
    }

    /// Flow induced by a rigid motion on `cloud`: `R p + t - p`.
    pub fn from_rigid(cloud: &PointCloud, transform: &RigidTransform) -> Self {
        Self(cloud.points().iter().map(|p| transform.apply(p) - p).collect())
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Applies `R p + t` to every point; descriptors are carried through.
pub fn warp_rigid(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| transform.apply(p)).collect(),
        descriptors: cloud.descriptors.clone(),
    }
}
