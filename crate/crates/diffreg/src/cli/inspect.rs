use std::path::PathBuf;

use clap::Args;
use diffreg_core::matrixspace::{argmax_agreement, MatrixStats};
use serde::Serialize;

use super::{require_file, CommonArgs};
use crate::config::Config;
use crate::error::Result;
use crate::io::{json_bytes, matrix, Staged, FORMAT_VERSION};

pub const INSPECT_FILE: &str = "inspect.json";

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Matrix file: binary, or JSON with a `.json` extension.
    pub matrix: PathBuf,
    /// Second matrix of the same shape to compare row argmaxes with.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Write `inspect.json` here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct InspectOutput<'a> {
    format_version: u32,
    config: &'a Config,
    matrix: &'a PathBuf,
    stats: MatrixStats,
    reference: Option<&'a PathBuf>,
    argmax_agreement: Option<f64>,
}

pub fn run(common: &CommonArgs, args: InspectArgs) -> Result<()> {
    let cfg = common.resolve()?;
    require_file(&args.matrix, "matrix file")?;
    if let Some(r) = &args.reference {
        require_file(r, "reference matrix")?;
    }
    let m = matrix::read_matrix(&args.matrix)?;
    let agreement = match &args.reference {
        Some(r) => Some(argmax_agreement(&m, &matrix::read_matrix(r)?)?),
        None => None,
    };
    let bytes = json_bytes(&InspectOutput {
        format_version: FORMAT_VERSION,
        config: &cfg,
        matrix: &args.matrix,
        stats: MatrixStats::of(&m),
        reference: args.reference.as_ref(),
        argmax_agreement: agreement,
    });
    if let Some(dir) = &args.out {
        let mut staged = Staged::new();
        staged.add(INSPECT_FILE, bytes.clone());
        staged.commit(dir)?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}
