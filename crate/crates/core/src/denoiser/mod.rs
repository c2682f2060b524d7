//! The denoising module `g_θ`: Sinkhorn, soft Procrustes, warp, a feature
//! network, inner-product logits and a final Sinkhorn, plus the two feature
//! networks (an analytic kernel matcher and a small trainable attention
//! network) and its training loop.

mod analytic;
mod attention;
mod encoding;
mod train;

pub use analytic::{AnalyticConfig, AnalyticNet, Bandwidth};
pub use attention::{
    attention_backward, attention_forward, pipeline_loss_and_grad, AttentionCache, AttentionLayer, AttentionNet,
    AttentionParams, PipelineGradient, TENSOR_NAMES,
};
pub use encoding::PositionalEncoding;
pub use train::{mean_loss, train_denoiser, TrainConfig, TrainOutcome, Trainer, TrainingExample};

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_rigid, weighted_svd, weighted_svd_dense, PointCloud, RigidTransform};
use crate::matrixspace::{extract_topk, sinkhorn_project, MatchMatrix};

/// Borrowed source/target clouds (with descriptors) handed to a denoiser.
#[derive(Debug, Clone, Copy)]
pub struct CloudPair<'a> {
    pub source: &'a PointCloud,
    pub target: &'a PointCloud,
}

impl<'a> CloudPair<'a> {
    pub fn new(source: &'a PointCloud, target: &'a PointCloud) -> Self {
        Self { source, target }
    }

    fn check_descriptors(&self) -> Result<()> {
        if self.source.descriptors().is_none() || self.target.descriptors().is_none() {
            return Err(Error::MissingDescriptors);
        }
        Ok(())
    }
}

/// Predicts the clean matching matrix `Ê₀` from a noisy state `E^t`.
///
/// Implementations must return a polytope matrix and be deterministic in
/// their inputs.
pub trait Denoiser {
    fn predict(&self, et: &MatchMatrix, t: usize, pair: CloudPair<'_>) -> Result<MatchMatrix>;
}

/// Ignores its input and returns a fixed matrix; used to test samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDenoiser {
    target: MatchMatrix,
}

impl OracleDenoiser {
    pub fn new(target: MatchMatrix) -> Self {
        Self { target }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, et: &MatchMatrix, _t: usize, _pair: CloudPair<'_>) -> Result<MatchMatrix> {
        et.check_same_shape(&self.target)?;
        Ok(self.target.clone())
    }
}

/// Maps warped source and target clouds to per-point feature rows whose
/// scaled inner products are the matching logits.
pub trait FeatureNetwork {
    fn features(&self, warped: &PointCloud, target: &PointCloud) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// `L[i, j] = ⟨f_i, g_j⟩ / √d`. Implementations may override this with a
    /// cheaper route to the same numbers.
    fn logits(&self, warped: &PointCloud, target: &PointCloud) -> Result<MatchMatrix> {
        let (fs, ft) = self.features(warped, target)?;
        matching_logits(&fs, &ft)
    }
}

/// Scaled inner products of two feature matrices (one row per point).
pub fn matching_logits(fs: &DMatrix<f64>, ft: &DMatrix<f64>) -> Result<MatchMatrix> {
    if fs.ncols() != ft.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (ft.nrows(), fs.ncols()),
            found: (ft.nrows(), ft.ncols()),
        });
    }
    let scale = 1.0 / (fs.ncols() as f64).sqrt();
    MatchMatrix::from_dmatrix(&((fs * ft.transpose()) * scale))
}

/// Which cells of the smoothed matrix weight the soft Procrustes fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcrustesWeights {
    /// Every cell, weighted by its value.
    All,
    /// The `k` largest cells.
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GThetaConfig {
    /// Iterations of both Sinkhorn projections inside `g_θ`.
    pub sinkhorn_iterations: usize,
    pub procrustes: ProcrustesWeights,
}

impl Default for GThetaConfig {
    fn default() -> Self {
        Self {
            sinkhorn_iterations: 10,
            procrustes: ProcrustesWeights::TopK(8),
        }
    }
}

/// Intermediate results of one `g_θ` evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GThetaTrace {
    /// `Ẽ_t`, the re-projected input.
    pub smoothed: MatchMatrix,
    /// Pose fitted to `Ẽ_t` (identity if the fit was degenerate).
    pub pose: RigidTransform,
    pub pose_fallback: bool,
    pub warped: PointCloud,
    pub logits: MatchMatrix,
    /// `Ê₀`.
    pub prediction: MatchMatrix,
}

/// Steps 1 to 3: re-project `E^t`, fit a pose to it and warp the source.
pub(crate) fn smooth_and_warp(
    et: &MatchMatrix,
    pair: CloudPair<'_>,
    cfg: &GThetaConfig,
) -> Result<(MatchMatrix, RigidTransform, bool, PointCloud)> {
    let (n, m) = (pair.source.len(), pair.target.len());
    if et.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            expected: (n, m),
            found: et.shape(),
        });
    }
    let smoothed = match sinkhorn_project(et, cfg.sinkhorn_iterations, false) {
        Err(Error::ZeroMassInput) => MatchMatrix::uniform(n, m),
        other => other?,
    };
    let fit = match cfg.procrustes {
        ProcrustesWeights::All => weighted_svd_dense(pair.source, pair.target, smoothed.as_slice()),
        ProcrustesWeights::TopK(k) => {
            let top = extract_topk(&smoothed, k.clamp(1, n * m), false)?;
            let cells: Vec<(usize, usize, f64)> = top.iter().map(|c| (c.source, c.target, c.weight)).collect();
            weighted_svd(pair.source, pair.target, &cells)
        }
    };
    let (pose, fallback) = match fit {
        Ok(pose) => (pose, false),
        Err(e @ (Error::DegenerateConfiguration | Error::TooFewCorrespondences { .. })) => {
            log::warn!("soft Procrustes failed ({e}); using the identity pose");
            (RigidTransform::identity(), true)
        }
        Err(e) => return Err(e),
    };
    let warped = warp_rigid(pair.source, &pose);
    Ok((smoothed, pose, fallback, warped))
}

/// `g_θ` with all intermediates kept.
pub fn g_theta_trace<N: FeatureNetwork + ?Sized>(
    et: &MatchMatrix,
    pair: CloudPair<'_>,
    net: &N,
    cfg: &GThetaConfig,
) -> Result<GThetaTrace> {
    pair.check_descriptors()?;
    let (smoothed, pose, pose_fallback, warped) = smooth_and_warp(et, pair, cfg)?;
    let logits = net.logits(&warped, pair.target)?;
    let prediction = sinkhorn_project(&logits, cfg.sinkhorn_iterations, true)?;
    Ok(GThetaTrace {
        smoothed,
        pose,
        pose_fallback,
        warped,
        logits,
        prediction,
    })
}

/// The denoising module: `Ê₀ = sinkhorn(logits(f(warp(P, procrustes(sinkhorn(E^t))), Q)))`.
pub fn g_theta<N: FeatureNetwork + ?Sized>(
    et: &MatchMatrix,
    pair: CloudPair<'_>,
    net: &N,
    cfg: &GThetaConfig,
) -> Result<MatchMatrix> {
    g_theta_trace(et, pair, net, cfg).map(|t| t.prediction)
}

/// A feature network wrapped into a [`Denoiser`].
#[derive(Debug, Clone, PartialEq)]
pub struct GTheta<N> {
    pub net: N,
    pub config: GThetaConfig,
}

impl<N: FeatureNetwork> GTheta<N> {
    pub fn new(net: N, config: GThetaConfig) -> Self {
        Self { net, config }
    }
}

impl<N: FeatureNetwork> Denoiser for GTheta<N> {
    fn predict(&self, et: &MatchMatrix, _t: usize, pair: CloudPair<'_>) -> Result<MatchMatrix> {
        g_theta(et, pair, &self.net, &self.config)
    }
}
