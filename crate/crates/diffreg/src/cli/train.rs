use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use diffreg_core::denoiser::{mean_loss, AttentionParams, PositionalEncoding, TrainingExample};
use serde::Serialize;

use super::{require_file, CommonArgs, TimingFile, TIMING_FILE};
use crate::config::Config;
use crate::error::{CliError, Result};
use crate::io::bundle::{is_bundle, read_bundle};
use crate::io::params::{self, read_archive, Archive};
use crate::io::{Staged, FORMAT_VERSION};

pub const PARAMS_FILE: &str = "params.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_FILE: &str = "train.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// A bundle, or a directory whose subdirectories are bundles.
    pub dataset: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Total iterations, counting those of a resumed checkpoint.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Continue from a checkpoint written by an earlier run. Its optimiser
    /// settings are kept; only the iteration target comes from this run.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TrainOutput<'a> {
    format_version: u32,
    config: &'a Config,
    dataset: Vec<PathBuf>,
    resumed_from: Option<&'a Path>,
    start_iteration: usize,
    iterations: usize,
    initial_loss: f64,
    final_loss: f64,
    loss_ratio: f64,
}

/// Bundle directories of a dataset, sorted by path.
pub fn dataset_bundles(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("dataset directory not found: {}", dir.display())));
    }
    if is_bundle(dir) {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_bundle(p))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Usage(format!("no scene bundles in {}", dir.display())));
    }
    Ok(out)
}

pub fn run(common: &CommonArgs, args: TrainArgs) -> Result<()> {
    let mut cfg = common.resolve()?;
    let bundles = dataset_bundles(&args.dataset)?;
    if let Some(p) = &args.resume {
        require_file(p, "checkpoint")?;
    }
    let opt = &mut cfg.train.optimizer;
    if let Some(v) = args.lr {
        opt.learning_rate = v;
    }
    if let Some(v) = args.iterations {
        opt.iterations = v;
    }
    if let Some(v) = common.seed {
        opt.seed = v;
    }

    let clock = Instant::now();
    let mut scenes = Vec::new();
    for b in &bundles {
        scenes.push(read_bundle(b)?.scene);
    }
    let mode = scenes[0].mode;
    let dim = scenes[0].source.descriptor_dim();
    if scenes.iter().any(|s| s.mode != mode || s.source.descriptor_dim() != dim || s.target.descriptor_dim() != dim) {
        return Err(CliError::Usage("bundles must share mode and descriptor dimension".into()));
    }
    let dim = dim.ok_or_else(|| CliError::Usage("training needs bundles with descriptors".into()))?;
    cfg.diffusion.mode = mode;
    cfg.diffusion.validate()?;
    let examples: Vec<TrainingExample> = scenes.iter().map(|s| s.to_training_example()).collect::<diffreg_core::Result<_>>()?;

    let mut trainer = match &args.resume {
        Some(p) => {
            let archive = read_archive(p)?;
            if archive.params.dim != dim {
                return Err(CliError::Usage(format!("checkpoint has dimension {}, dataset {dim}", archive.params.dim)));
            }
            if let Some(state) = &archive.trainer {
                cfg.train.optimizer = diffreg_core::denoiser::TrainConfig {
                    iterations: cfg.train.optimizer.iterations,
                    ..state.config
                };
            }
            archive.into_trainer(cfg.train.optimizer)
        }
        None => {
            let t = &cfg.train;
            let encoding = PositionalEncoding::new(t.bands, dim, t.encoding_scale)?;
            let params = AttentionParams::random(dim, t.layers, encoding, t.optimizer.seed)?;
            Archive { params, trainer: None }.into_trainer(t.optimizer)
        }
    };
    let load = clock.elapsed().as_secs_f64();

    let eval = |p: &AttentionParams| mean_loss(p, &examples, &cfg.diffusion, &cfg.train.optimizer, &cfg.train.eval_timesteps, cfg.train.eval_seed);
    let clock = Instant::now();
    let start = trainer.iteration;
    let initial_loss = eval(&trainer.params)?;
    trainer.run(&examples, &cfg.diffusion)?;
    let final_loss = eval(&trainer.params)?;
    let train_time = clock.elapsed().as_secs_f64();
    let ratio = final_loss / initial_loss;

    let mut history = csv::Writer::from_writer(Vec::new());
    history.write_record(["iteration", "loss"]).map_err(|e| CliError::Usage(e.to_string()))?;
    for (k, loss) in trainer.history.iter().enumerate() {
        history
            .write_record([(start + k).to_string(), loss.to_string()])
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let history = history.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut staged = Staged::new();
    staged.add(PARAMS_FILE, params::to_bytes(&Archive::checkpoint(&trainer)));
    staged.add(HISTORY_FILE, history);
    staged.add_json(
        TRAIN_FILE,
        &TrainOutput {
            format_version: FORMAT_VERSION,
            config: &cfg,
            dataset: bundles,
            resumed_from: args.resume.as_deref(),
            start_iteration: start,
            iterations: trainer.iteration,
            initial_loss,
            final_loss,
            loss_ratio: ratio,
        },
    );
    staged.add_json(TIMING_FILE, &TimingFile { timing: serde_json::json!({ "load": load, "train": train_time }) });
    staged.commit(&args.out)?;
    println!("initial loss {initial_loss}");
    println!("final loss {final_loss}");
    println!("loss ratio {ratio}");
    Ok(())
}
