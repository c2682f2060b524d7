//! Experiment configuration: a TOML file with `generator`, `denoiser`,
//! `diffusion`, `registration` and `train` tables plus top-level `seed`,
//! `trials` and `steps`. Every key has a default; `--set a.b=value`
//! overrides are applied on top.

use std::path::{Path, PathBuf};

use diffreg_core::bench::{RegistrationConfig, SceneSpec};
use diffreg_core::denoiser::{AnalyticConfig, GThetaConfig, TrainConfig};
use diffreg_core::diffusion::DiffusionConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    Analytic,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    /// Parameter archive, required for `trained`.
    pub path: Option<PathBuf>,
    pub analytic: AnalyticConfig,
    pub gtheta: GThetaConfig,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Analytic,
            path: None,
            analytic: AnalyticConfig::default(),
            gtheta: GThetaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Attention layers of a freshly initialised network.
    pub layers: usize,
    /// Frequency bands of the positional encoding.
    pub bands: usize,
    /// Positional encoding half-period of the lowest band, meters.
    pub encoding_scale: f64,
    /// Timesteps of the fixed evaluation set used for the loss ratio.
    pub eval_timesteps: Vec<usize>,
    pub eval_seed: u64,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            layers: 2,
            bands: 1,
            encoding_scale: 1.0,
            eval_timesteps: vec![1, 125, 250, 375, 500, 625, 750, 875, 1000],
            eval_seed: 99,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub trials: usize,
    /// Sampling step counts compared by experiments.
    pub steps: Vec<usize>,
    pub generator: SceneSpec,
    pub denoiser: DenoiserSection,
    pub diffusion: DiffusionConfig,
    pub registration: RegistrationConfig,
    pub train: TrainSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10,
            steps: vec![1, 20],
            generator: SceneSpec::default(),
            denoiser: DenoiserSection::default(),
            diffusion: DiffusionConfig::default(),
            registration: RegistrationConfig::default(),
            train: TrainSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::format(path, e))
    }

    /// Defaults, or the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&crate::io::read_string(p)?, p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Applies `key=value` overrides; the value is read as a TOML value
    /// and falls back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut root = toml::Value::try_from(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut keys = Vec::new();
        for o in overrides {
            let (key, value) = parse_override(o.as_ref())?;
            set_path(&mut root, &key, value)?;
            keys.push(key);
        }
        let cfg: Config = root.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("invalid override: {e}")))?;
        let check = toml::Value::try_from(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
        for key in keys {
            if lookup(&check, &key).is_none() {
                return Err(CliError::Usage(format!("unknown config key `{key}`")));
            }
        }
        Ok(cfg)
    }

    /// Checks the sections every subcommand relies on.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.diffusion.validate()?;
        if self.steps.is_empty() || self.steps.iter().any(|&s| s == 0 || s > self.diffusion.schedule.t_max()) {
            return Err(CliError::Usage(format!("steps must lie in 1..={}", self.diffusion.schedule.t_max())));
        }
        if self.denoiser.kind == DenoiserKind::Trained && self.denoiser.path.is_none() {
            return Err(CliError::Usage("trained denoiser needs a parameter path".into()));
        }
        Ok(())
    }
}

fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{s}` is not key=value")))?;
    let key = key.trim().to_string();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| CliError::Usage(format!("unknown config key `{key}`")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Usage(format!("`{key}` does not name a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn lookup<'a>(root: &'a toml::Value, key: &str) -> Option<&'a toml::Value> {
    key.split('.').try_fold(root, |node, part| node.as_table()?.get(part))
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffreg_core::bench::DescriptorKind;
    use diffreg_core::diffusion::Mode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let back = Config::from_toml(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = Config::from_toml("trials = 3\n[generator]\noverlap_fraction = 0.3\n", Path::new("x")).unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.generator.overlap_fraction, 0.3);
        assert_eq!(cfg.generator.n_points, SceneSpec::default().n_points);
        assert_eq!(cfg.diffusion, DiffusionConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = Config::default()
            .with_overrides(&[
                "generator.mode=deformable",
                "generator.descriptor.dim=8",
                "steps=[1,5]",
                "denoiser.kind=trained",
                "denoiser.path=p.bin",
                "diffusion.inference_steps=7",
            ])
            .unwrap();
        assert_eq!(cfg.generator.mode, Mode::Deformable);
        assert_eq!(cfg.generator.descriptor, DescriptorKind::Oracle { dim: 8, corruption: 0.2 });
        assert_eq!(cfg.steps, [1, 5]);
        assert_eq!(cfg.denoiser.kind, DenoiserKind::Trained);
        assert_eq!(cfg.denoiser.path.as_deref(), Some(Path::new("p.bin")));
        assert_eq!(cfg.diffusion.inference_steps, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::default().with_overrides(&["generator.n_pointz=3"]).is_err());
        assert!(Config::default().with_overrides(&["nope.x=3"]).is_err());
        assert!(Config::default().with_overrides(&["trials"]).is_err());
        assert!(Config::default().with_overrides(&["trials=many"]).is_err());
    }
}
