use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MetricsReport, ScenePair, NFMR_NEIGHBORS};
use crate::denoiser::{CloudPair, Denoiser};
use crate::diffusion::{reverse_sample, DiffusionConfig, Initial, Mode, SampleResult};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_flow, weighted_svd, weighted_svd_dense, FlowField, RigidTransform, Vec3};
use crate::matrixspace::{extract_topk, Correspondences, MatchMatrix};

/// How hard correspondences are read off a matching matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Extraction {
    /// Keep only cells that are the argmax of both their row and column.
    pub mutual: bool,
    /// Keep only cells holding at least this fraction of their row's mass.
    pub min_mass: f64,
}

impl Default for Extraction {
    fn default() -> Self {
        Self {
            mutual: true,
            min_mass: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub extraction: Extraction,
    /// IR/NFMR threshold and pose inlier threshold, as a fraction of the
    /// source diameter.
    pub tau_fraction: f64,
    /// Rounds of re-fitting the pose on correspondences within `tau`.
    pub refine_iterations: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            extraction: Extraction::default(),
            tau_fraction: super::DEFAULT_TAU_FRACTION,
            refine_iterations: 3,
        }
    }
}

/// Correspondences of `m` ordered by value, filtered per `extraction`.
pub fn extract_correspondences(m: &MatchMatrix, extraction: &Extraction) -> Result<Correspondences> {
    let (rows, cols) = m.shape();
    let k = if extraction.mutual { rows.min(cols) } else { rows * cols };
    let row_sums = m.row_sums();
    let mut out = extract_topk(m, k, extraction.mutual)?;
    out.retain(|c| row_sums[c.source] > 0.0 && c.weight / row_sums[c.source] >= extraction.min_mass);
    Ok(out)
}

/// Weighted Procrustes on `corr`, re-fitted on the pairs whose residual
/// under the current pose is below `threshold`.
///
/// Falls back to the dense fit on `m` when fewer than three
/// correspondences are available.
pub fn estimate_pose(
    pair: CloudPair<'_>,
    corr: &Correspondences,
    m: &MatchMatrix,
    threshold: f64,
    iterations: usize,
) -> Result<RigidTransform> {
    let cells: Vec<(usize, usize, f64)> = corr.iter().map(|c| (c.source, c.target, c.weight)).collect();
    let mut pose = match weighted_svd(pair.source, pair.target, &cells) {
        Ok(p) => p,
        Err(Error::TooFewCorrespondences { .. } | Error::DegenerateConfiguration) => {
            return weighted_svd_dense(pair.source, pair.target, m.as_slice());
        }
        Err(e) => return Err(e),
    };
    for _ in 0..iterations {
        let keep: Vec<(usize, usize, f64)> = cells
            .iter()
            .copied()
            .filter(|&(i, j, _)| (pose.apply(&pair.source.point(i)) - pair.target.point(j)).norm() < threshold)
            .collect();
        if keep.len() == cells.len() {
            break;
        }
        match weighted_svd(pair.source, pair.target, &keep) {
            Ok(p) => pose = p,
            Err(Error::TooFewCorrespondences { .. } | Error::DegenerateConfiguration) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(pose)
}

/// Source flow interpolated from the correspondence displacements.
pub fn estimate_flow(pair: CloudPair<'_>, corr: &Correspondences) -> Result<FlowField> {
    if corr.is_empty() {
        return Ok(FlowField::zeros(pair.source.len()));
    }
    let anchors: Vec<(usize, Vec3)> = corr
        .iter()
        .map(|c| (c.source, pair.target.point(c.target) - pair.source.point(c.source)))
        .collect();
    interpolate_flow(pair.source, &anchors, NFMR_NEIGHBORS)
}

/// Output of one registration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub correspondences: Correspondences,
    pub pose: RigidTransform,
    /// Rigid mode: the flow of `pose`; deformable: interpolated anchors.
    pub flow: FlowField,
    pub sample: SampleResult,
}

/// Reverse sampling followed by correspondence extraction and pose or flow
/// estimation. Correspondences are read from the denoiser's final `Ê₀`,
/// which in deformable mode is sharper than the sigmoid-projected state.
pub fn register<D, R>(
    initial: &Initial,
    denoiser: &D,
    pair: CloudPair<'_>,
    diffusion: &DiffusionConfig,
    cfg: &RegistrationConfig,
    rng: &mut R,
) -> Result<Registration>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let sample = reverse_sample(initial, denoiser, pair, diffusion, rng)?;
    if sample.matrix.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let estimate = sample.last_prediction();
    let correspondences = extract_correspondences(estimate, &cfg.extraction)?;
    let threshold = cfg.tau_fraction * pair.source.diameter();
    let pose = estimate_pose(pair, &correspondences, estimate, threshold, cfg.refine_iterations)?;
    let flow = match diffusion.mode {
        Mode::Rigid => FlowField::from_rigid(pair.source, &pose),
        Mode::Deformable => estimate_flow(pair, &correspondences)?,
    };
    Ok(Registration {
        correspondences,
        pose,
        flow,
        sample,
    })
}

/// Scores a registration against the scene's ground truth. Pose errors are
/// reported in rigid mode only.
pub fn evaluate_registration(reg: &Registration, scene: &ScenePair, cfg: &RegistrationConfig) -> Result<MetricsReport> {
    let tau = cfg.tau_fraction * scene.scene_diameter;
    let pose = (scene.mode == Mode::Rigid).then_some(&reg.pose);
    MetricsReport::evaluate(&reg.correspondences, scene, tau, pose, Some(&reg.flow))
}

/// Inlier ratio of the correspondences extracted from the denoiser's
/// prediction at every sampling step.
pub fn trajectory_inlier_ratios(sample: &SampleResult, scene: &ScenePair, cfg: &RegistrationConfig) -> Result<Vec<f64>> {
    let tau = cfg.tau_fraction * scene.scene_diameter;
    sample
        .predictions
        .iter()
        .map(|m| {
            let corr = extract_correspondences(m, &cfg.extraction)?;
            Ok(super::inlier_ratio(&corr, scene, tau)?.value)
        })
        .collect()
}
