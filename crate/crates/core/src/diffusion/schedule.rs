#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clip on a single step's beta; keeps every `α_t` strictly positive.
pub const MAX_BETA: f64 = 0.999;

/// Offset of the cosine schedule that keeps the first betas away from zero.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Cosine,
    LinearBeta { beta_start: f64, beta_end: f64 },
}

/// Serialisable description from which a [`NoiseSchedule`] is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub timesteps: usize,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

/// Per-step `α_t` and cumulative `ᾱ_t` for `t = 0..=T`, with `α_0 = ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        let t_max = spec.timesteps;
        if t_max == 0 {
            return Err(Error::InvalidParameter {
                name: "timesteps",
                reason: "must be at least 1",
            });
        }
        let betas: Vec<f64> = match spec.kind {
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / t_max as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    let c = (x * FRAC_PI_2).cos();
                    c * c
                };
                (1..=t_max)
                    .map(|t| (1.0 - f(t) / f(t - 1)).min(MAX_BETA))
                    .collect()
            }
            ScheduleKind::LinearBeta { beta_start, beta_end } => {
                let valid = |b: f64| b > 0.0 && b < 1.0;
                if !valid(beta_start) || !valid(beta_end) {
                    return Err(Error::InvalidParameter {
                        name: "beta",
                        reason: "linear betas must lie in (0, 1)",
                    });
                }
                (1..=t_max)
                    .map(|t| {
                        let s = if t_max == 1 { 0.0 } else { (t - 1) as f64 / (t_max - 1) as f64 };
                        beta_start + s * (beta_end - beta_start)
                    })
                    .collect()
            }
        };
        let mut alphas = Vec::with_capacity(t_max + 1);
        let mut alpha_bars = Vec::with_capacity(t_max + 1);
        alphas.push(1.0);
        alpha_bars.push(1.0);
        for beta in betas {
            let alpha = 1.0 - beta;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "schedule",
                    reason: "every alpha must lie strictly inside (0, 1)",
                });
            }
            let prev = *alpha_bars.last().unwrap();
            alphas.push(alpha);
            alpha_bars.push(prev * alpha);
        }
        Ok(Self {
            kind: spec.kind,
            alphas,
            alpha_bars,
        })
    }

    pub fn cosine(timesteps: usize) -> Result<Self> {
        Self::new(ScheduleSpec {
            timesteps,
            kind: ScheduleKind::Cosine,
        })
    }

    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleSpec {
            timesteps,
            kind: ScheduleKind::LinearBeta { beta_start, beta_end },
        })
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            timesteps: self.t_max(),
            kind: self.kind,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Total number of diffusion steps `T`.
    pub fn t_max(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn check(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.t_max() {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.t_max(),
            });
        }
        Ok(())
    }

    /// `α_t`; panics if `t > T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// `ᾱ_t`; panics if `t > T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Descending timesteps `T = t_S > … > t_1 > t_0 = 0` for `S` sampling
    /// steps, with `t_k = round(T·k/S)`.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let t_max = self.t_max();
        if steps == 0 || steps > t_max {
            return Err(Error::InvalidParameter {
                name: "inference_steps",
                reason: "must lie in 1..=T",
            });
        }
        Ok((0..=steps)
            .rev()
            .map(|k| ((t_max * k) as f64 / steps as f64).round() as usize)
            .collect())
    }
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        Self::new(spec)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec()
    }
}
