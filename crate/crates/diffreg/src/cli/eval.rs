use std::path::PathBuf;

use clap::Args;
use diffreg_core::bench::MetricsReport;
use diffreg_core::diffusion::Mode;
use diffreg_core::geometry::{FlowField, RigidTransform};
use diffreg_core::matrixspace::{Correspondence, Correspondences};
use serde::{Deserialize, Serialize};

use super::{require_bundle, require_file, CommonArgs};
use crate::config::Config;
use crate::error::Result;
use crate::io::bundle::read_bundle;
use crate::io::{json_bytes, read_json, Staged, FORMAT_VERSION};

pub const EVAL_FILE: &str = "eval.json";

/// A stored prediction. `result.json` from `register` parses as one; a
/// hand-written file may list bare `pairs` instead of correspondences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prediction {
    pub correspondences: Correspondences,
    pub pairs: Vec<(usize, usize)>,
    pub transform: Option<RigidTransform>,
    pub flow: Option<FlowField>,
}

impl Prediction {
    /// Correspondences followed by the bare pairs, which get unit weight.
    pub fn all_correspondences(&self) -> Correspondences {
        let bare = self.pairs.iter().map(|&(source, target)| Correspondence {
            source,
            target,
            confidence: 1.0,
            weight: 1.0,
        });
        self.correspondences.iter().copied().chain(bare).collect()
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scene bundle directory holding the ground truth.
    pub bundle: PathBuf,
    /// Prediction JSON.
    #[arg(long)]
    pub pred: PathBuf,
    /// Write `eval.json` here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalOutput<'a> {
    format_version: u32,
    config: &'a Config,
    bundle: &'a PathBuf,
    prediction: &'a PathBuf,
    report: MetricsReport,
}

pub fn run(common: &CommonArgs, args: EvalArgs) -> Result<()> {
    let cfg = common.resolve()?;
    require_bundle(&args.bundle)?;
    require_file(&args.pred, "prediction file")?;
    let scene = read_bundle(&args.bundle)?.scene;
    let pred: Prediction = read_json(&args.pred)?;
    let corr = pred.all_correspondences();
    let tau = cfg.registration.tau_fraction * scene.scene_diameter;
    let pose = pred.transform.as_ref().filter(|_| scene.mode == Mode::Rigid);
    let flow = pred.flow.clone().or_else(|| pred.transform.map(|t| FlowField::from_rigid(&scene.source, &t)));
    let report = MetricsReport::evaluate(&corr, &scene, tau, pose, flow.as_ref())?;
    let output = EvalOutput {
        format_version: FORMAT_VERSION,
        config: &cfg,
        bundle: &args.bundle,
        prediction: &args.pred,
        report,
    };
    let bytes = json_bytes(&output);
    if let Some(dir) = &args.out {
        let mut staged = Staged::new();
        staged.add(EVAL_FILE, bytes.clone());
        staged.commit(dir)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}
