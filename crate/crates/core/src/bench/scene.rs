use alloc::vec::Vec;
use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::CloudPair;
use crate::denoiser::TrainingExample;
use crate::diffusion::Mode;
use crate::error::{Error, Result};
use crate::geometry::knn_points;
use crate::geometry::{Descriptors, FlowField, PointCloud, RigidTransform, Vec3};
use crate::matrixspace::{ground_truth_matrix, MatchMatrix, GT_SINKHORN_ITERATIONS};

/// How per-point descriptors are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DescriptorKind {
    /// No descriptors attached.
    None,
    /// A random vector of norm `√dim` per physical point, shared by both
    /// clouds.
    /// Each target point independently gets its vector replaced by a fresh
    /// random one with probability `corruption`, so about that fraction of
    /// ground-truth pairs carry unrelated descriptors.
    Oracle { dim: usize, corruption: f64 },
    /// Covariance eigenvalue features of the `k` and `2k` neighbourhoods.
    LocalStatistics { k: usize },
}

impl DescriptorKind {
    pub fn dim(&self) -> Option<usize> {
        match *self {
            DescriptorKind::None => None,
            DescriptorKind::Oracle { dim, .. } => Some(dim),
            DescriptorKind::LocalStatistics { .. } => Some(LOCAL_FEATURES),
        }
    }
}

const LOCAL_FEATURES: usize = 12;

/// Generator parameters. Lengths (`noise_sigma`, `deformation_amplitude`)
/// are fractions of the source diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_points: usize,
    pub overlap_fraction: f64,
    pub noise_sigma: f64,
    pub mode: Mode,
    pub deformation_amplitude: f64,
    pub descriptor: DescriptorKind,
    pub seed: u64,
    /// Half-width of the translation box, meters.
    pub max_translation: f64,
    /// Use the identity as the rigid part of the ground truth.
    pub identity_transform: bool,
    /// Randomly reorder target points.
    pub shuffle_target: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_points: 128,
            overlap_fraction: 0.9,
            noise_sigma: 0.005,
            mode: Mode::Rigid,
            deformation_amplitude: 0.0,
            descriptor: DescriptorKind::Oracle {
                dim: 32,
                corruption: 0.2,
            },
            seed: 0,
            max_translation: 0.5,
            identity_transform: false,
            shuffle_target: true,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 8 {
            return Err(Error::InvalidParameter {
                name: "n_points",
                reason: "must be at least 8",
            });
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "overlap_fraction",
                reason: "must lie in (0, 1]",
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "noise_sigma",
                reason: "must be finite and non-negative",
            });
        }
        if !(self.deformation_amplitude >= 0.0 && self.deformation_amplitude.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "deformation_amplitude",
                reason: "must be finite and non-negative",
            });
        }
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "max_translation",
                reason: "must be finite and non-negative",
            });
        }
        match self.descriptor {
            DescriptorKind::Oracle { dim, corruption } => {
                if dim == 0 {
                    return Err(Error::InvalidParameter {
                        name: "descriptor.dim",
                        reason: "must be positive",
                    });
                }
                if !(0.0..=1.0).contains(&corruption) {
                    return Err(Error::InvalidParameter {
                        name: "descriptor.corruption",
                        reason: "must lie in [0, 1]",
                    });
                }
            }
            DescriptorKind::LocalStatistics { k } => {
                if k < 3 || 2 * k > self.n_points {
                    return Err(Error::InvalidParameter {
                        name: "descriptor.k",
                        reason: "must satisfy 3 <= k and 2k <= n_points",
                    });
                }
            }
            DescriptorKind::None => {}
        }
        Ok(())
    }
}

/// A generated source/target pair with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub mode: Mode,
    /// Rigid part of the ground truth (the whole of it in rigid mode).
    pub gt_transform: RigidTransform,
    /// Noise-free displacement of every source point.
    pub gt_flow: FlowField,
    /// `(source, target)` index pairs of shared physical points, sorted.
    pub gt_pairs: Vec<(usize, usize)>,
    pub overlap_mask_source: Vec<bool>,
    pub scene_diameter: f64,
    /// Noise standard deviation actually used, meters.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ScenePair {
    pub fn clouds(&self) -> CloudPair<'_> {
        CloudPair::new(&self.source, &self.target)
    }

    /// Ground-truth position of source point `i` in the target frame.
    pub fn warp_gt(&self, i: usize) -> Vec3 {
        self.source.point(i) + self.gt_flow.vectors()[i]
    }

    /// Achieved overlap, `|gt_pairs| / |source|`.
    pub fn overlap(&self) -> f64 {
        self.gt_pairs.len() as f64 / self.source.len() as f64
    }

    pub fn ground_truth_matrix(&self) -> Result<MatchMatrix> {
        ground_truth_matrix(
            self.source.len(),
            self.target.len(),
            &self.gt_pairs,
            GT_SINKHORN_ITERATIONS,
        )
    }

    pub fn to_training_example(&self) -> Result<TrainingExample> {
        Ok(TrainingExample {
            source: self.source.clone(),
            target: self.target.clone(),
            e0: self.ground_truth_matrix()?,
        })
    }

    /// Applies `transform` to both clouds and to the ground truth.
    pub fn transformed(&self, transform: &RigidTransform) -> Result<Self> {
        let move_cloud = |c: &PointCloud| -> Result<PointCloud> {
            let moved = PointCloud::new(c.points().iter().map(|p| transform.apply(p)).collect())?;
            match c.descriptors() {
                Some(d) => moved.with_descriptors(d.clone()),
                None => Ok(moved),
            }
        };
        let source = move_cloud(&self.source)?;
        let rotation = transform.rotation();
        let gt_flow = FlowField::new(self.gt_flow.vectors().iter().map(|v| rotation * v).collect())?;
        Ok(Self {
            source,
            target: move_cloud(&self.target)?,
            gt_transform: transform.compose(&self.gt_transform.compose(&transform.inverse())),
            gt_flow,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Plane { center: Vec3, u: Vec3, v: Vec3, extent: (f64, f64) },
    Sphere { center: Vec3, radius: f64 },
    Cluster { center: Vec3, spread: f64 },
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn box_point<R: Rng>(rng: &mut R, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    )
}

impl Primitive {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let center = box_point(rng, 0.4);
        match rng.random_range(0..3u8) {
            0 => {
                let u = unit_vector(rng);
                let mut v = unit_vector(rng);
                v -= u * u.dot(&v);
                let v = if v.norm() > 1e-6 { v.normalize() } else { u.cross(&Vec3::x()).normalize() };
                Primitive::Plane {
                    center,
                    u,
                    v,
                    extent: (rng.random_range(0.15..0.4), rng.random_range(0.15..0.4)),
                }
            }
            1 => Primitive::Sphere {
                center,
                radius: rng.random_range(0.08..0.2),
            },
            _ => Primitive::Cluster {
                center,
                spread: rng.random_range(0.03..0.08),
            },
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec3 {
        match *self {
            Primitive::Plane { center, u, v, extent } => {
                center + u * (extent.0 * rng.random_range(-1.0..=1.0)) + v * (extent.1 * rng.random_range(-1.0..=1.0))
            }
            Primitive::Sphere { center, radius } => center + unit_vector(rng) * radius,
            Primitive::Cluster { center, spread } => {
                let g = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                center + g * spread
            }
        }
    }
}

/// Uniform rotation on SO(3) from a uniform unit quaternion.
fn random_rotation<R: Rng>(rng: &mut R, translation: Vec3) -> RigidTransform {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = core::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    RigidTransform::from_quaternion(
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
        b * (tau * u3).cos(),
        translation,
    )
}

/// Sum of a few random plane waves; low frequency relative to the scene.
struct SmoothField {
    waves: Vec<(Vec3, f64, Vec3)>,
}

impl SmoothField {
    fn random<R: Rng>(rng: &mut R, diameter: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let freq = unit_vector(rng) * (core::f64::consts::TAU * rng.random_range(0.5..1.0) / diameter);
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                let amp = Vec3::new(
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                );
                (freq, phase, amp)
            })
            .collect();
        Self { waves }
    }

    fn eval(&self, p: &Vec3) -> Vec3 {
        self.waves
            .iter()
            .map(|(f, phase, amp)| amp * (f.dot(p) + phase).sin())
            .sum()
    }
}

fn truncated_noise<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if g.norm() <= 3.0 {
            return g * sigma;
        }
    }
}

/// Random directions scaled to norm `√dim`, so entries have unit variance.
fn random_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    let target = (dim as f64).sqrt();
    for _ in 0..n {
        let start = out.len();
        out.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = out[start..].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        out[start..].iter_mut().for_each(|x| *x *= target / norm);
    }
    out
}

fn oracle_descriptors<R: Rng>(
    rng: &mut R,
    base: &[f64],
    members: &[usize],
    dim: usize,
    corruption: f64,
) -> Result<Descriptors> {
    let mut data = Vec::with_capacity(members.len() * dim);
    for &k in members {
        if rng.random::<f64>() < corruption {
            data.extend(random_rows(rng, 1, dim));
        } else {
            data.extend_from_slice(&base[k * dim..(k + 1) * dim]);
        }
    }
    Descriptors::from_flat(dim, data)
}

fn covariance_features(points: &[Vec3], neighbours: &[usize], out: &mut Vec<f64>) {
    let n = neighbours.len() as f64;
    let mean: Vec3 = neighbours.iter().map(|&j| points[j]).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for &j in neighbours {
        let d = points[j] - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|e| e.max(0.0)).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let total = (ev[0] + ev[1] + ev[2]).max(1e-300);
    let l1 = ev[0].max(1e-300);
    out.extend_from_slice(&[
        ev[0] / total,
        ev[1] / total,
        ev[2] / total,
        (ev[0] - ev[1]) / l1,
        (ev[1] - ev[2]) / l1,
        ev[2] / l1,
    ]);
}

/// Rotation-invariant covariance features at two neighbourhood sizes,
/// centred and scaled to norm `√12` per point.
pub fn local_statistics(cloud: &PointCloud, k: usize) -> Result<Descriptors> {
    let points = cloud.points();
    let wide = knn_points(points, points, 2 * k)?;
    let mut data = Vec::with_capacity(points.len() * LOCAL_FEATURES);
    for nb in &wide {
        covariance_features(points, &nb[..k], &mut data);
        covariance_features(points, nb, &mut data);
    }
    let n = points.len();
    let mut m = DMatrix::from_row_slice(n, LOCAL_FEATURES, &data);
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let target = (LOCAL_FEATURES as f64).sqrt();
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 1e-12 {
            row *= target / norm;
        }
    }
    let flat: Vec<f64> = (0..n).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
    Descriptors::from_flat(LOCAL_FEATURES, flat)
}

/// Largest allowed gap between requested and achieved overlap.
pub const OVERLAP_TOLERANCE: f64 = 0.05;

/// Builds a synthetic scene.
///
/// A pool of `2n - s` points (`s = round(f n)`) is drawn from random planes,
/// spheres and clusters, sorted along a random direction, and split into two
/// overlapping slabs of `n` points. The target slab is moved by the ground
/// truth (deformation then rigid motion) and perturbed by Gaussian noise
/// truncated at 3σ.
pub fn generate_scene(spec: &SceneSpec) -> Result<ScenePair> {
    spec.validate()?;
    let n = spec.n_points;
    let shared = (spec.overlap_fraction * n as f64).round() as usize;
    let achieved = shared as f64 / n as f64;
    if shared == 0 || (achieved - spec.overlap_fraction).abs() > OVERLAP_TOLERANCE {
        return Err(Error::InfeasibleOverlap {
            requested: spec.overlap_fraction,
            achieved,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool_size = 2 * n - shared;

    let primitives: Vec<Primitive> = (0..rng.random_range(4..=7)).map(|_| Primitive::random(&mut rng)).collect();
    let pool: Vec<Vec3> = (0..pool_size)
        .map(|_| {
            let p = primitives[rng.random_range(0..primitives.len())];
            p.sample(&mut rng)
        })
        .collect();

    let direction = unit_vector(&mut rng);
    let mut by_depth: Vec<usize> = (0..pool_size).collect();
    by_depth.sort_by(|&a, &b| {
        direction
            .dot(&pool[a])
            .partial_cmp(&direction.dot(&pool[b]))
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut source_members: Vec<usize> = by_depth[..n].to_vec();
    let mut target_members: Vec<usize> = by_depth[pool_size - n..].to_vec();
    source_members.sort_unstable();
    target_members.sort_unstable();
    if spec.shuffle_target {
        target_members.shuffle(&mut rng);
    }

    let source_points: Vec<Vec3> = source_members.iter().map(|&k| pool[k]).collect();
    let source_bare = PointCloud::new(source_points.clone())?;
    let diameter = source_bare.diameter();
    if diameter <= 0.0 {
        return Err(Error::DegenerateConfiguration);
    }

    let translation = box_point(&mut rng, spec.max_translation);
    let gt_transform = if spec.identity_transform {
        RigidTransform::identity()
    } else {
        random_rotation(&mut rng, translation)
    };

    let field = SmoothField::random(&mut rng, diameter);
    let deformation_scale = if spec.mode == Mode::Deformable && spec.deformation_amplitude > 0.0 {
        let rms = (source_points.iter().map(|p| field.eval(p).norm_squared()).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            spec.deformation_amplitude * diameter / rms
        } else {
            0.0
        }
    } else {
        0.0
    };
    let moved = |p: &Vec3| -> Vec3 {
        let deformed = if deformation_scale > 0.0 { p + field.eval(p) * deformation_scale } else { *p };
        gt_transform.apply(&deformed)
    };

    let sigma = spec.noise_sigma * diameter;
    let target_points: Vec<Vec3> = target_members
        .iter()
        .map(|&k| moved(&pool[k]) + truncated_noise(&mut rng, sigma))
        .collect();
    let gt_flow = FlowField::new(source_points.iter().map(|p| moved(p) - p).collect())?;

    let mut target_slot = alloc::vec![usize::MAX; pool_size];
    for (j, &k) in target_members.iter().enumerate() {
        target_slot[k] = j;
    }
    let mut gt_pairs = Vec::with_capacity(shared);
    let mut overlap_mask_source = alloc::vec![false; n];
    for (i, &k) in source_members.iter().enumerate() {
        if target_slot[k] != usize::MAX {
            gt_pairs.push((i, target_slot[k]));
            overlap_mask_source[i] = true;
        }
    }

    let mut target = PointCloud::new(target_points)?;
    let mut source = source_bare;
    match spec.descriptor {
        DescriptorKind::None => {}
        DescriptorKind::Oracle { dim, corruption } => {
            let base = random_rows(&mut rng, pool_size, dim);
            let ds = oracle_descriptors(&mut rng, &base, &source_members, dim, 0.0)?;
            let dt = oracle_descriptors(&mut rng, &base, &target_members, dim, corruption)?;
            source = source.with_descriptors(ds)?;
            target = target.with_descriptors(dt)?;
        }
        DescriptorKind::LocalStatistics { k } => {
            let ds = local_statistics(&source, k)?;
            let dt = local_statistics(&target, k)?;
            source = source.with_descriptors(ds)?;
            target = target.with_descriptors(dt)?;
        }
    }

    Ok(ScenePair {
        source,
        target,
        mode: spec.mode,
        gt_transform,
        gt_flow,
        gt_pairs,
        overlap_mask_source,
        scene_diameter: diameter,
        noise_sigma: sigma,
        seed: spec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::weighted_svd;

    fn spec(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn trivial_scene_is_identity() {
        let s = SceneSpec {
            overlap_fraction: 1.0,
            noise_sigma: 0.0,
            identity_transform: true,
            shuffle_target: false,
            descriptor: DescriptorKind::Oracle { dim: 8, corruption: 0.0 },
            ..spec(3)
        };
        let scene = generate_scene(&s).unwrap();
        assert_eq!(scene.gt_pairs, (0..128).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(scene.source, scene.target);
        assert!(scene.overlap_mask_source.iter().all(|&b| b));
    }

    #[test]
    fn half_overlap_within_tolerance() {
        for seed in 0..10 {
            let s = SceneSpec {
                n_points: 256,
                overlap_fraction: 0.5,
                ..spec(seed)
            };
            let scene = generate_scene(&s).unwrap();
            let ratio = scene.gt_pairs.len() as f64 / 256.0;
            assert!((0.45..=0.55).contains(&ratio), "{ratio}");
            let masked = scene.overlap_mask_source.iter().filter(|&&b| b).count();
            assert_eq!(masked, scene.gt_pairs.len());
        }
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        for mode in [Mode::Rigid, Mode::Deformable] {
            let s = SceneSpec {
                mode,
                deformation_amplitude: 0.05,
                ..spec(11)
            };
            assert_eq!(generate_scene(&s).unwrap(), generate_scene(&s).unwrap());
        }
        assert_ne!(generate_scene(&spec(1)).unwrap(), generate_scene(&spec(2)).unwrap());
    }

    #[test]
    fn rigid_residuals_bounded_by_three_sigma() {
        for seed in 0..5 {
            let scene = generate_scene(&spec(seed)).unwrap();
            assert!(scene.scene_diameter > 0.0);
            for &(i, j) in &scene.gt_pairs {
                let r = scene.gt_transform.apply(&scene.source.point(i)) - scene.target.point(j);
                assert!(r.norm() <= 3.0 * scene.noise_sigma + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_pairs_recover_transform() {
        let s = SceneSpec {
            noise_sigma: 0.0,
            ..spec(5)
        };
        let scene = generate_scene(&s).unwrap();
        let w: Vec<(usize, usize, f64)> = scene.gt_pairs.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        let est = weighted_svd(&scene.source, &scene.target, &w).unwrap();
        assert!((est.rotation() - scene.gt_transform.rotation()).norm() < 1e-9);
        assert!((est.translation() - scene.gt_transform.translation()).norm() < 1e-9);
    }

    #[test]
    fn deformation_has_requested_rms() {
        let s = SceneSpec {
            mode: Mode::Deformable,
            deformation_amplitude: 0.04,
            identity_transform: true,
            noise_sigma: 0.0,
            ..spec(8)
        };
        let scene = generate_scene(&s).unwrap();
        let n = scene.source.len() as f64;
        let rms = (scene.gt_flow.vectors().iter().map(|v| v.norm_squared()).sum::<f64>() / n).sqrt();
        assert!((rms - 0.04 * scene.scene_diameter).abs() < 1e-12);
        for &(i, j) in &scene.gt_pairs {
            assert!((scene.warp_gt(i) - scene.target.point(j)).norm() < 1e-12);
        }
    }

    #[test]
    fn infeasible_overlap_rejected() {
        // round(0.06 * 8) = 0 shared points
        let s = SceneSpec {
            n_points: 8,
            overlap_fraction: 0.06,
            ..spec(0)
        };
        assert!(matches!(generate_scene(&s), Err(Error::InfeasibleOverlap { .. })));
        // round(0.18 * 8) / 8 = 0.125 misses by more than 0.05
        let s = SceneSpec {
            n_points: 8,
            overlap_fraction: 0.18,
            ..spec(0)
        };
        assert!(matches!(generate_scene(&s), Err(Error::InfeasibleOverlap { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_scene(&SceneSpec { n_points: 7, ..spec(0) }).is_err());
        assert!(generate_scene(&SceneSpec { overlap_fraction: 0.0, ..spec(0) }).is_err());
        assert!(generate_scene(&SceneSpec { overlap_fraction: 1.2, ..spec(0) }).is_err());
    }

    #[test]
    fn local_statistics_rotation_invariant() {
        let s = SceneSpec {
            noise_sigma: 0.0,
            overlap_fraction: 1.0,
            shuffle_target: false,
            descriptor: DescriptorKind::LocalStatistics { k: 8 },
            ..spec(9)
        };
        let scene = generate_scene(&s).unwrap();
        let a = scene.source.descriptors().unwrap().as_flat();
        let b = scene.target.descriptors().unwrap().as_flat();
        let worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn oracle_descriptors_agree_on_clean_pairs() {
        let s = SceneSpec {
            descriptor: DescriptorKind::Oracle { dim: 16, corruption: 0.0 },
            ..spec(12)
        };
        let scene = generate_scene(&s).unwrap();
        let (ds, dt) = (scene.source.descriptors().unwrap(), scene.target.descriptors().unwrap());
        for &(i, j) in &scene.gt_pairs {
            assert_eq!(ds.row(i), dt.row(j));
        }
    }

    #[test]
    fn transformed_scene_keeps_ground_truth() {
        let scene = generate_scene(&SceneSpec { noise_sigma: 0.0, ..spec(4) }).unwrap();
        let extra = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7, Vec3::new(0.3, -1.0, 2.0));
        let moved = scene.transformed(&extra).unwrap();
        for &(i, j) in &moved.gt_pairs {
            assert!((moved.warp_gt(i) - moved.target.point(j)).norm() < 1e-9);
            assert!((moved.gt_transform.apply(&moved.source.point(i)) - moved.target.point(j)).norm() < 1e-9);
        }
    }
}
