use std::path::PathBuf;

use clap::Args;
use diffreg_core::bench::generate_scene;
use diffreg_core::diffusion::Mode;

use super::CommonArgs;
use crate::error::Result;
use crate::io::bundle::{stage_bundle, GT_FILE};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Requested fraction of source points with a partner in the target.
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Noise standard deviation as a fraction of the scene diameter.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_parser = ["rigid", "deformable"])]
    pub mode: Option<String>,
    /// RMS deformation as a fraction of the scene diameter.
    #[arg(long)]
    pub deformation: Option<f64>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(common: &CommonArgs, args: GenerateArgs) -> Result<()> {
    let mut cfg = common.resolve()?;
    let spec = &mut cfg.generator;
    if let Some(v) = args.n_points {
        spec.n_points = v;
    }
    if let Some(v) = args.overlap {
        spec.overlap_fraction = v;
    }
    if let Some(v) = args.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.mode.as_deref() {
        spec.mode = if v == "rigid" { Mode::Rigid } else { Mode::Deformable };
    }
    if let Some(v) = args.deformation {
        spec.deformation_amplitude = v;
    }
    if let Some(v) = common.seed {
        spec.seed = v;
    }
    let scene = generate_scene(spec)?;
    log::info!("generated {} + {} points, overlap {:.3}", scene.source.len(), scene.target.len(), scene.overlap());
    stage_bundle(&scene, spec)?.commit(&args.out)?;
    println!("{}", args.out.join(GT_FILE).display());
    Ok(())
}
