use std::path::Path;

use diffreg_core::bench::{SceneSpec, ScenePair};
use diffreg_core::diffusion::Mode;
use diffreg_core::geometry::{FlowField, RigidTransform};
use serde::{Deserialize, Serialize};

use super::{matrix, ply, Staged, FORMAT_VERSION};
use crate::error::{CliError, Result};

pub const SOURCE_FILE: &str = "source.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const GT_FILE: &str = "gt.json";
pub const GT_MATRIX_FILE: &str = "gt_matrix.bin";

/// Contents of `gt.json`: everything of a scene except the clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    pub spec: SceneSpec,
    pub mode: Mode,
    pub gt_transform: RigidTransform,
    pub gt_flow: FlowField,
    pub gt_pairs: Vec<(usize, usize)>,
    pub overlap_mask_source: Vec<bool>,
    pub scene_diameter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub requested_overlap: f64,
    pub achieved_overlap: f64,
}

/// A scene as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub scene: ScenePair,
    pub spec: SceneSpec,
}

/// Files of a bundle: both clouds, `gt.json` and the ground-truth matrix.
pub fn stage_bundle(scene: &ScenePair, spec: &SceneSpec) -> Result<Staged> {
    let gt = GroundTruth {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        mode: scene.mode,
        gt_transform: scene.gt_transform,
        gt_flow: scene.gt_flow.clone(),
        gt_pairs: scene.gt_pairs.clone(),
        overlap_mask_source: scene.overlap_mask_source.clone(),
        scene_diameter: scene.scene_diameter,
        noise_sigma: scene.noise_sigma,
        seed: scene.seed,
        requested_overlap: spec.overlap_fraction,
        achieved_overlap: scene.overlap(),
    };
    let mut staged = Staged::new();
    staged.add(SOURCE_FILE, ply::to_ply_string(&scene.source).into_bytes());
    staged.add(TARGET_FILE, ply::to_ply_string(&scene.target).into_bytes());
    staged.add_json(GT_FILE, &gt);
    staged.add(GT_MATRIX_FILE, matrix::to_bytes(&scene.ground_truth_matrix()?));
    Ok(staged)
}

pub fn is_bundle(dir: &Path) -> bool {
    dir.join(GT_FILE).is_file()
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let gt_path = dir.join(GT_FILE);
    let gt: GroundTruth = super::read_json(&gt_path)?;
    if gt.format_version != FORMAT_VERSION {
        return Err(CliError::format(&gt_path, format!("unsupported format_version {}", gt.format_version)));
    }
    let source = ply::read_cloud(&dir.join(SOURCE_FILE))?;
    let target = ply::read_cloud(&dir.join(TARGET_FILE))?;
    let consistent = gt.gt_flow.len() == source.len()
        && gt.overlap_mask_source.len() == source.len()
        && gt.gt_pairs.iter().all(|&(i, j)| i < source.len() && j < target.len());
    if !consistent {
        return Err(CliError::format(&gt_path, "ground truth does not match the clouds"));
    }
    Ok(Bundle {
        scene: ScenePair {
            source,
            target,
            mode: gt.mode,
            gt_transform: gt.gt_transform,
            gt_flow: gt.gt_flow,
            gt_pairs: gt.gt_pairs,
            overlap_mask_source: gt.overlap_mask_source,
            scene_diameter: gt.scene_diameter,
            noise_sigma: gt.noise_sigma,
            seed: gt.seed,
        },
        spec: gt.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffreg_core::bench::generate_scene;

    #[test]
    fn bundle_round_trips_the_scene() {
        let spec = SceneSpec {
            n_points: 32,
            overlap_fraction: 0.75,
            seed: 5,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = stage_bundle(&scene, &spec).unwrap().commit(dir.path()).unwrap();
        assert_eq!(written.len(), 4);
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.scene, scene);
        assert_eq!(back.spec, spec);
        let gt = matrix::read_matrix(&dir.path().join(GT_MATRIX_FILE)).unwrap();
        assert_eq!(gt, scene.ground_truth_matrix().unwrap());
    }

    #[test]
    fn missing_cloud_is_an_io_error() {
        let spec = SceneSpec {
            n_points: 16,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        stage_bundle(&scene, &spec).unwrap().commit(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(TARGET_FILE)).unwrap();
        let err = read_bundle(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_IO);
    }
}
