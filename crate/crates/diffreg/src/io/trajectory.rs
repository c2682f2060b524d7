use std::path::{Path, PathBuf};

use diffreg_core::diffusion::{NoiseSchedule, SampleResult};
use diffreg_core::matrixspace::MatchMatrix;
use serde::{Deserialize, Serialize};

use super::{matrix, Staged, FORMAT_VERSION};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    /// Timestep of every state frame, starting at `T`.
    pub timesteps: Vec<usize>,
    pub alpha_bars: Vec<f64>,
    /// Projected state files, aligned with `timesteps`.
    pub frames: Vec<String>,
    /// Denoiser prediction files, one per sampling step.
    pub predictions: Vec<String>,
}

/// Queues the states and predictions of `sample` below `dir`.
pub fn stage_trajectory(staged: &mut Staged, dir: &Path, sample: &SampleResult, schedule: &NoiseSchedule, seed: u64, config_hash: &str) {
    let mut frames = Vec::new();
    for (k, m) in sample.trajectory.iter().enumerate() {
        let name = format!("state_{k:04}.bin");
        staged.add(dir.join(&name), matrix::to_bytes(m));
        frames.push(name);
    }
    let mut predictions = Vec::new();
    for (k, m) in sample.predictions.iter().enumerate() {
        let name = format!("prediction_{k:04}.bin");
        staged.add(dir.join(&name), matrix::to_bytes(m));
        predictions.push(name);
    }
    let manifest = TrajectoryManifest {
        format_version: FORMAT_VERSION,
        seed,
        config_hash: config_hash.to_string(),
        timesteps: sample.timesteps.clone(),
        alpha_bars: sample.timesteps.iter().map(|&t| schedule.alpha_bar(t)).collect(),
        frames,
        predictions,
    };
    staged.add_json(dir.join(MANIFEST_FILE), &manifest);
}

/// Manifest and state frames of a trajectory directory.
pub fn read_trajectory(dir: &Path) -> Result<(TrajectoryManifest, Vec<MatchMatrix>)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: TrajectoryManifest = super::read_json(&manifest_path)?;
    if manifest.frames.len() != manifest.timesteps.len() {
        return Err(CliError::format(&manifest_path, "frame count differs from timestep count"));
    }
    let frames = manifest
        .frames
        .iter()
        .map(|f| matrix::read_matrix(&dir.join(PathBuf::from(f))))
        .collect::<Result<_>>()?;
    Ok((manifest, frames))
}
