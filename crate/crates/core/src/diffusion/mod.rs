//! Diffusion over matching matrices: noise schedules, the forward kernel
//! with its feasibility projections, the Gaussian posterior, DDIM reverse
//! steps, the sampler loop and the focal training objective.

mod ddim;
mod forward;
mod loss;
mod posterior;
mod sampler;
mod schedule;

pub use ddim::{ddim_sigma, ddim_step, ddim_step_raw, DdimOutput};
pub use forward::{f_eps, forward_diffuse, forward_diffuse_sampled, gaussian_noise, noise_map, project_raw, ForwardSample};
pub use loss::{simple_loss, simple_loss_with_grad, FocalParams, POSITIVE_MASS, PROBABILITY_CLAMP};
pub use posterior::{posterior_params, posterior_scalar, Posterior};
pub use sampler::{reverse_sample, Initial, SampleResult};
pub use schedule::{NoiseSchedule, ScheduleKind, ScheduleSpec, COSINE_OFFSET, MAX_BETA};

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which feasibility projection follows the noise injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Clipped fractional noise, then subtract the global minimum.
    Rigid,
    /// Plain Gaussian noise, then an elementwise sigmoid.
    Deformable,
}

/// Multiplier applied to a polytope matrix before diffusion.
///
/// Polytope entries are `O(1/N)`, far below unit-variance noise; scaling by
/// the row count puts a clean matching on the `{0, 1}` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalScale {
    Rows,
    Fixed(f64),
}

impl SignalScale {
    pub fn factor(self, rows: usize) -> f64 {
        match self {
            SignalScale::Rows => rows as f64,
            SignalScale::Fixed(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub schedule: NoiseSchedule,
    pub mode: Mode,
    /// `η` of the clipped noise map.
    pub eta_clip: f64,
    /// Sinkhorn iterations after each projection.
    pub sinkhorn_iterations: usize,
    /// DDIM stochasticity in `[0, 1]`; 0 is deterministic.
    pub ddim_eta: f64,
    pub inference_steps: usize,
    pub signal_scale: SignalScale,
}

impl DiffusionConfig {
    pub fn new(schedule: NoiseSchedule, mode: Mode) -> Self {
        Self {
            schedule,
            mode,
            eta_clip: 1.5,
            sinkhorn_iterations: 100,
            ddim_eta: 0.0,
            inference_steps: 20,
            signal_scale: SignalScale::Rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if !(self.eta_clip > 0.0 && self.eta_clip.is_finite()) {
            return bad("eta_clip", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.ddim_eta) {
            return bad("ddim_eta", "must lie in [0, 1]");
        }
        if self.inference_steps == 0 || self.inference_steps > self.schedule.t_max() {
            return bad("inference_steps", "must lie in 1..=T");
        }
        if self.sinkhorn_iterations == 0 {
            return bad("sinkhorn_iterations", "must be at least 1");
        }
        if let SignalScale::Fixed(s) = self.signal_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("signal_scale", "must be positive");
            }
        }
        Ok(())
    }
}

impl Default for DiffusionConfig {
    /// Cosine schedule with `T = 1000`, rigid mode.
    fn default() -> Self {
        Self::new(NoiseSchedule::cosine(1000).expect("valid default schedule"), Mode::Rigid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = DiffusionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.schedule.t_max(), 1000);
        assert_eq!(cfg.eta_clip, 1.5);
        assert_eq!(cfg.inference_steps, 20);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = DiffusionConfig::default();
        cfg.inference_steps = 1001;
        assert!(cfg.validate().is_err());
        let mut cfg = DiffusionConfig::default();
        cfg.ddim_eta = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = DiffusionConfig::default();
        cfg.eta_clip = 0.0;
        assert!(cfg.validate().is_err());
    }
}
