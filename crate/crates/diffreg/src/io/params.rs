use std::path::Path;

use diffreg_core::denoiser::{AttentionParams, PositionalEncoding, TrainConfig, Trainer, TENSOR_NAMES};
use serde::{Deserialize, Serialize};

use super::FORMAT_VERSION;
use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"DRPARAMS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Index of the first value in the data section.
    pub offset: usize,
}

/// Optimiser state stored next to the parameters so training can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerManifest {
    pub iteration: usize,
    pub config: TrainConfig,
    pub velocity_offset: usize,
}

/// JSON header of a parameter archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub format_version: u32,
    pub dim: usize,
    pub layers: usize,
    pub encoding: PositionalEncoding,
    pub tensors: Vec<TensorEntry>,
    pub trainer: Option<TrainerManifest>,
}

/// Parameters plus, for checkpoints, the optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub params: AttentionParams,
    pub trainer: Option<TrainerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub iteration: usize,
    pub config: TrainConfig,
    pub velocity: Vec<f64>,
}

impl Archive {
    pub fn checkpoint(trainer: &Trainer) -> Self {
        Self {
            params: trainer.params.clone(),
            trainer: Some(TrainerState {
                iteration: trainer.iteration,
                config: trainer.config,
                velocity: trainer.velocity.clone(),
            }),
        }
    }

    /// A trainer continuing from this archive; a parameters-only archive
    /// starts with zero velocity at iteration 0.
    pub fn into_trainer(self, config: TrainConfig) -> Trainer {
        let mut trainer = Trainer::new(self.params, config);
        if let Some(state) = self.trainer {
            trainer.iteration = state.iteration;
            trainer.velocity = state.velocity;
        }
        trainer
    }
}

fn manifest_for(archive: &Archive) -> ParamsManifest {
    let p = &archive.params;
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (layer, l) in p.layers.iter().enumerate() {
        for (name, t) in TENSOR_NAMES.iter().zip(l.tensors()) {
            tensors.push(TensorEntry {
                layer,
                name: name.to_string(),
                rows: t.nrows(),
                cols: t.ncols(),
                offset,
            });
            offset += t.len();
        }
    }
    ParamsManifest {
        format_version: FORMAT_VERSION,
        dim: p.dim,
        layers: p.layers.len(),
        encoding: p.encoding,
        tensors,
        trainer: archive.trainer.as_ref().map(|s| TrainerManifest {
            iteration: s.iteration,
            config: s.config,
            velocity_offset: offset,
        }),
    }
}

/// `DRPARAMS`, little-endian `u32` manifest length, the JSON manifest,
/// then every value as little-endian `f64` (parameters in column-major
/// tensor order, followed by the velocity for checkpoints).
pub fn to_bytes(archive: &Archive) -> Vec<u8> {
    let manifest = serde_json::to_vec(&manifest_for(archive)).expect("serialisable manifest");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    let velocity = archive.trainer.iter().flat_map(|s| s.velocity.iter().copied());
    for v in archive.params.to_flat().into_iter().chain(velocity) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Archive> {
    let bad = |reason: String| CliError::format(path, reason);
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter archive".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("manifest truncated".into()))?;
    let manifest: ParamsManifest = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {}", manifest.format_version)));
    }
    let data: Vec<f64> = bytes[12 + len..]
        .chunks(8)
        .map(|c| c.try_into().map(f64::from_le_bytes))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("data section is not a whole number of f64".into()))?;
    let mut params = AttentionParams::random(manifest.dim, manifest.layers, manifest.encoding, 0).map_err(|e| bad(e.to_string()))?;
    let expected = manifest_for(&Archive {
        params: params.clone(),
        trainer: None,
    });
    if expected.tensors != manifest.tensors {
        return Err(bad("tensor table does not match the declared shape".into()));
    }
    let n = params.num_params();
    let want = n * if manifest.trainer.is_some() { 2 } else { 1 };
    if data.len() != want {
        return Err(bad(format!("expected {want} values, found {}", data.len())));
    }
    params.set_flat(&data[..n]).map_err(|e| bad(e.to_string()))?;
    let trainer = manifest.trainer.map(|t| TrainerState {
        iteration: t.iteration,
        config: t.config,
        velocity: data[n..].to_vec(),
    });
    Ok(Archive { params, trainer })
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    from_bytes(&super::read_bytes(path)?, path)
}
