#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FeatureNetwork;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::matrixspace::MatchMatrix;

/// Width `σ` of the Gaussian position kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Absolute(f64),
    /// Fraction of the target cloud's diameter.
    RelativeToDiameter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticConfig {
    pub bandwidth: Bandwidth,
    /// Number of random Fourier features approximating the kernel.
    pub fourier_features: usize,
    /// Logit weight `λ` of the position kernel.
    pub position_weight: f64,
    /// Logit weight `μ` of plain descriptor similarity.
    pub descriptor_weight: f64,
    /// Offset `β` added to descriptor similarity inside the position
    /// term, so geometry still counts where descriptors disagree.
    pub geometry_floor: f64,
    /// Seed of the Fourier frequencies and phases.
    pub seed: u64,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::RelativeToDiameter(0.04),
            fourier_features: 256,
            position_weight: 10.0,
            descriptor_weight: 5.0,
            geometry_floor: 1.0,
            seed: 0,
        }
    }
}

/// Training-free feature network whose logits are
/// `λ·k(p_i, q_j)·(⟨F̂_i, F̂_j⟩ + β) + μ·⟨F̂_i, F̂_j⟩` with `F̂` the
/// unit-normalised descriptors and `k` a random-Fourier approximation of
/// `exp(−‖p − q‖² / 2σ²)`.
///
/// The explicit features are `[√λ·φ(p) ⊗ [F̂, √β], √μ·F̂]`, scaled so that
/// the generic `⟨f_i, f_j⟩/√d` head reproduces the logits above.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticNet {
    config: AnalyticConfig,
    /// Unit-bandwidth frequencies, one per Fourier feature.
    frequencies: Vec<Vec3>,
    phases: Vec<f64>,
}

impl AnalyticNet {
    pub fn new(config: AnalyticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.fourier_features.max(1);
        let frequencies = (0..d)
            .map(|_| Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let phases = (0..d).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            config,
            frequencies,
            phases,
        }
    }

    pub fn config(&self) -> &AnalyticConfig {
        &self.config
    }

    fn sigma(&self, target: &PointCloud) -> Result<f64> {
        let sigma = match self.config.bandwidth {
            Bandwidth::Absolute(s) => s,
            Bandwidth::RelativeToDiameter(r) => r * target.diameter(),
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: "must resolve to a positive length",
            });
        }
        Ok(sigma)
    }

    /// Random Fourier map `φ(p)` with `E[φ(p)·φ(q)] = k(p, q)`.
    fn fourier(&self, cloud: &PointCloud, sigma: f64) -> DMatrix<f64> {
        let d = self.frequencies.len();
        let amp = (2.0 / d as f64).sqrt();
        DMatrix::from_fn(cloud.len(), d, |i, k| {
            amp * (self.frequencies[k].dot(&cloud.point(i)) / sigma + self.phases[k]).cos()
        })
    }

    /// The kernel the Fourier features approximate.
    pub fn exact_kernel(&self, p: &Vec3, q: &Vec3, sigma: f64) -> f64 {
        (-(p - q).norm_squared() / (2.0 * sigma * sigma)).exp()
    }

    /// Approximate kernel matrix between two clouds.
    pub fn kernel_matrix(&self, warped: &PointCloud, target: &PointCloud) -> Result<DMatrix<f64>> {
        let sigma = self.sigma(target)?;
        Ok(self.fourier(warped, sigma) * self.fourier(target, sigma).transpose())
    }
}

fn unit_descriptors(cloud: &PointCloud) -> Result<DMatrix<f64>> {
    let desc = cloud.descriptors().ok_or(Error::MissingDescriptors)?;
    let mut m = DMatrix::from_row_slice(desc.len(), desc.dim(), desc.as_flat());
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(m)
}

impl FeatureNetwork for AnalyticNet {
    fn features(&self, warped: &PointCloud, target: &PointCloud) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let sigma = self.sigma(target)?;
        let build = |cloud: &PointCloud| -> Result<DMatrix<f64>> {
            let desc = unit_descriptors(cloud)?;
            let phi = self.fourier(cloud, sigma);
            let (dd, df) = (desc.ncols(), phi.ncols());
            let de = dd + 1;
            let width = df * de + dd;
            let floor = self.config.geometry_floor.max(0.0).sqrt();
            // the head divides by √width, so pre-scale each side by width^¼
            let lift = (width as f64).powf(0.25);
            let sl = self.config.position_weight.sqrt() * lift;
            let sm = self.config.descriptor_weight.sqrt() * lift;
            Ok(DMatrix::from_fn(cloud.len(), width, |i, c| {
                if c < df * de {
                    let e = c % de;
                    let d = if e < dd { desc[(i, e)] } else { floor };
                    sl * phi[(i, c / de)] * d
                } else {
                    sm * desc[(i, c - df * de)]
                }
            }))
        };
        let fs = build(warped)?;
        let ft = build(target)?;
        if fs.ncols() != ft.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (target.len(), fs.ncols()),
                found: (target.len(), ft.ncols()),
            });
        }
        Ok((fs, ft))
    }

    /// Same numbers as the generic head without materialising the
    /// tensor-product features.
    fn logits(&self, warped: &PointCloud, target: &PointCloud) -> Result<MatchMatrix> {
        let ds = unit_descriptors(warped)?;
        let dt = unit_descriptors(target)?;
        if ds.ncols() != dt.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (target.len(), ds.ncols()),
                found: (target.len(), dt.ncols()),
            });
        }
        let similarity = &ds * dt.transpose();
        let kernel = self.kernel_matrix(warped, target)?;
        let (lambda, mu) = (self.config.position_weight, self.config.descriptor_weight);
        let beta = self.config.geometry_floor.max(0.0);
        MatchMatrix::from_fn(warped.len(), target.len(), |i, j| {
            let s = similarity[(i, j)];
            lambda * kernel[(i, j)] * (s + beta) + mu * s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::denoiser::matching_logits;
    use crate::geometry::{knn_points, Descriptors};

    fn cloud(points: &[[f64; 3]], desc: Vec<Vec<f64>>) -> PointCloud {
        PointCloud::from_arrays(points).unwrap().with_descriptors(Descriptors::from_rows(&desc).unwrap()).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    #[test]
    fn factored_logits_equal_explicit_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let desc = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = cloud(&random_points(&mut rng, 7), desc(&mut rng, 7));
        let t = cloud(&random_points(&mut rng, 9), desc(&mut rng, 9));
        let net = AnalyticNet::new(AnalyticConfig {
            fourier_features: 32,
            ..AnalyticConfig::default()
        });
        let (fs, ft) = net.features(&s, &t).unwrap();
        let dense = matching_logits(&fs, &ft).unwrap();
        let fast = net.logits(&s, &t).unwrap();
        assert!(dense.max_abs_diff(&fast) < 1e-10);
    }

    #[test]
    fn near_point_dominates_far_point() {
        let sigma = 0.1;
        let net = AnalyticNet::new(AnalyticConfig {
            bandwidth: Bandwidth::Absolute(sigma),
            ..AnalyticConfig::default()
        });
        let d = vec![1.0, 0.0, 0.0];
        let s = cloud(&[[0.0; 3]], vec![d.clone()]);
        let t = cloud(&[[0.0; 3], [10.0 * sigma, 0.0, 0.0]], vec![d.clone(), d]);
        let l = net.logits(&s, &t).unwrap();
        assert!(l.get(0, 0) - l.get(0, 1) > 10.0);
    }

    #[test]
    fn identical_descriptors_give_nearest_neighbour() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        // unit-cube clouds of 64 points: nearest neighbours sit ~0.15 apart
        let net = AnalyticNet::new(AnalyticConfig {
            fourier_features: 4096,
            bandwidth: Bandwidth::Absolute(0.2),
            ..AnalyticConfig::default()
        });
        let mut agree = 0;
        let trials = 10;
        for _ in 0..trials {
            let sp = random_points(&mut rng, 64);
            let tp = random_points(&mut rng, 64);
            let ones = vec![vec![1.0; 4]; 64];
            let s = cloud(&sp, ones.clone());
            let t = cloud(&tp, ones);
            let nn = knn_points(s.points(), t.points(), 1).unwrap();
            let l = net.logits(&s, &t).unwrap();
            agree += (0..64).filter(|&i| l.row_argmax(i) == nn[i][0]).count();
        }
        assert!(agree as f64 >= 0.95 * (64 * trials) as f64, "{agree}");
    }

    #[test]
    fn orthogonal_descriptor_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let group = |k: usize| if k % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        let s = cloud(&random_points(&mut rng, 12), (0..12).map(group).collect());
        let t = cloud(&random_points(&mut rng, 12), (0..12).map(group).collect());
        let sigma = 0.04 * t.diameter();
        for beta in [0.0, 1.0] {
            let net = AnalyticNet::new(AnalyticConfig {
                geometry_floor: beta,
                ..AnalyticConfig::default()
            });
            let l = net.logits(&s, &t).unwrap();
            for i in 0..12 {
                for j in 0..12 {
                    let k = net.exact_kernel(&s.point(i), &t.point(j), sigma);
                    let sim = if i % 2 == j % 2 { 1.0 } else { 0.0 };
                    let exact = 10.0 * k * (sim + beta) + 5.0 * sim;
                    if beta == 0.0 && sim == 0.0 {
                        assert!(l.get(i, j).abs() < 1e-12);
                    } else {
                        assert!((l.get(i, j) - exact).abs() < 10.0 * (1.0 + beta) * 0.35);
                    }
                }
            }
        }
    }

    #[test]
    fn fourier_kernel_approximates_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let net = AnalyticNet::new(AnalyticConfig {
            fourier_features: 4096,
            bandwidth: Bandwidth::Absolute(0.3),
            ..AnalyticConfig::default()
        });
        let pts = random_points(&mut rng, 20);
        let c = cloud(&pts, vec![vec![1.0]; 20]);
        let k = net.kernel_matrix(&c, &c).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let exact = net.exact_kernel(&c.point(i), &c.point(j), 0.3);
                assert!((k[(i, j)] - exact).abs() < 0.08);
            }
        }
    }
}
