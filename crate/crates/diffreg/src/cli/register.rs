use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use diffreg_core::bench::{evaluate_registration, register, trajectory_inlier_ratios, MetricsReport};
use diffreg_core::diffusion::{Initial, Mode};
use diffreg_core::geometry::{FlowField, RigidTransform};
use diffreg_core::matrixspace::Correspondences;
use serde::{Deserialize, Serialize};

use super::{apply_denoiser_flag, require_bundle, require_file, CommonArgs, TimingFile, TIMING_FILE};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::experiment::{sampling_rng, AnyDenoiser};
use crate::io::bundle::read_bundle;
use crate::io::trajectory::stage_trajectory;
use crate::io::{config_hash, matrix, Staged, FORMAT_VERSION};

pub const RESULT_FILE: &str = "result.json";
pub const MATRIX_FILE: &str = "matrix.bin";
pub const PREDICTION_FILE: &str = "prediction.bin";
pub const TRAJECTORY_DIR: &str = "trajectory";

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Scene bundle directory.
    pub bundle: PathBuf,
    /// Sampling steps (denoiser calls).
    #[arg(long)]
    pub steps: Option<usize>,
    /// `analytic` or `trained:PATH`.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// `noise` or `matrix:PATH` (a matching matrix to start from).
    #[arg(long, default_value = "noise")]
    pub init: String,
    /// Also write every state and prediction under `trajectory/`.
    #[arg(long)]
    pub trajectory: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub timesteps: Vec<usize>,
    /// Inlier ratio of the prediction made at each sampling step.
    pub inlier_ratio: Vec<f64>,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterOutput {
    pub format_version: u32,
    pub config: Config,
    pub bundle: PathBuf,
    pub steps: usize,
    pub seed: u64,
    pub init: String,
    pub correspondences: Correspondences,
    pub transform: RigidTransform,
    /// Estimated flow; present in deformable mode.
    pub flow: Option<FlowField>,
    pub report: MetricsReport,
    pub trajectory: TrajectorySummary,
}

#[derive(Debug, Serialize)]
struct RegisterTiming {
    load: f64,
    sample: f64,
    evaluate: f64,
}

fn parse_init(init: &str) -> Result<Option<PathBuf>> {
    match init {
        "noise" => Ok(None),
        s => match s.strip_prefix("matrix:") {
            Some(p) if !p.is_empty() => {
                let path = PathBuf::from(p);
                require_file(&path, "initial matrix")?;
                Ok(Some(path))
            }
            _ => Err(CliError::Usage(format!("--init must be `noise` or `matrix:PATH`, got `{s}`"))),
        },
    }
}

pub fn run(common: &CommonArgs, args: RegisterArgs) -> Result<()> {
    let mut cfg = common.resolve()?;
    require_bundle(&args.bundle)?;
    apply_denoiser_flag(&mut cfg, args.denoiser.as_deref())?;
    let init_path = parse_init(&args.init)?;
    if let Some(s) = args.steps {
        cfg.diffusion.inference_steps = s;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let clock = Instant::now();
    let bundle = read_bundle(&args.bundle)?;
    let scene = bundle.scene;
    cfg.diffusion.mode = scene.mode;
    cfg.diffusion.validate()?;
    let initial = match &init_path {
        None => Initial::WhiteNoise,
        Some(p) => {
            let m = matrix::read_matrix(p)?;
            if m.shape() != (scene.source.len(), scene.target.len()) {
                return Err(CliError::Usage(format!(
                    "initial matrix is {:?}, bundle needs {:?}",
                    m.shape(),
                    (scene.source.len(), scene.target.len())
                )));
            }
            Initial::Matrix(m)
        }
    };
    let denoiser = AnyDenoiser::from_config(&cfg)?;
    let load = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let reg = register(&initial, &denoiser, scene.clouds(), &cfg.diffusion, &cfg.registration, &mut sampling_rng(cfg.seed))?;
    let sample_time = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let report = evaluate_registration(&reg, &scene, &cfg.registration)?;
    let irs = trajectory_inlier_ratios(&reg.sample, &scene, &cfg.registration)?;
    let evaluate = clock.elapsed().as_secs_f64();

    let steps = cfg.diffusion.inference_steps;
    let output = RegisterOutput {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        bundle: args.bundle.clone(),
        steps,
        seed: cfg.seed,
        init: args.init.clone(),
        correspondences: reg.correspondences.clone(),
        transform: reg.pose,
        flow: (scene.mode == Mode::Deformable).then(|| reg.flow.clone()),
        report,
        trajectory: TrajectorySummary {
            timesteps: reg.sample.timesteps[..reg.sample.predictions.len()].to_vec(),
            inlier_ratio: irs,
        },
    };
    let mut staged = Staged::new();
    staged.add_json(RESULT_FILE, &output);
    staged.add(MATRIX_FILE, matrix::to_bytes(&reg.sample.matrix));
    staged.add(PREDICTION_FILE, matrix::to_bytes(reg.sample.last_prediction()));
    if args.trajectory {
        stage_trajectory(&mut staged, TRAJECTORY_DIR.as_ref(), &reg.sample, &cfg.diffusion.schedule, cfg.seed, &config_hash(&cfg));
    }
    staged.add_json(
        TIMING_FILE,
        &TimingFile {
            timing: RegisterTiming {
                load,
                sample: sample_time,
                evaluate,
            },
        },
    );
    staged.commit(&args.out)?;
    println!(
        "steps {steps}: {} correspondences, IR {:.4}, NFMR {:.4}",
        output.correspondences.len(),
        output.report.inlier_ratio,
        output.report.nfmr
    );
    Ok(())
}
