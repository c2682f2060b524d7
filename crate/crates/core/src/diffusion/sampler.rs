#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use rand::Rng;

use super::{ddim_sigma, ddim_step, gaussian_noise, noise_map, project_raw, DiffusionConfig};
use crate::denoiser::{CloudPair, Denoiser};
use crate::error::Result;
use crate::matrixspace::MatchMatrix;

/// Starting point of the reverse process.
#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    /// Pure noise at `t = T`, passed through the mode's noise map.
    WhiteNoise,
    /// A polytope matrix treated as the state at `t = T` (e.g. a previous
    /// solution to refine).
    Matrix(MatchMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Final projected matrix.
    pub matrix: MatchMatrix,
    /// Projected state at every visited timestep, starting at `t = T`.
    pub trajectory: Vec<MatchMatrix>,
    /// Visited timesteps, aligned with `trajectory`.
    pub timesteps: Vec<usize>,
    /// The denoiser's prediction of `E⁰` at every step, aligned with
    /// `timesteps[..steps]`.
    pub predictions: Vec<MatchMatrix>,
}

impl SampleResult {
    /// The denoiser's final prediction of `E⁰`.
    pub fn last_prediction(&self) -> &MatchMatrix {
        self.predictions.last().unwrap_or(&self.matrix)
    }
}

/// DDIM reverse sampling over `cfg.inference_steps` evenly spaced timesteps.
///
/// The DDIM algebra runs on unconstrained states; the denoiser always sees
/// the projected state. Fresh noise is only drawn when `ddim_eta > 0`, so a
/// deterministic run consumes randomness only for the white-noise start.
pub fn reverse_sample<D, R>(
    initial: &Initial,
    denoiser: &D,
    pair: CloudPair<'_>,
    cfg: &DiffusionConfig,
    rng: &mut R,
) -> Result<SampleResult>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let (n, m) = (pair.source.len(), pair.target.len());
    let timesteps = cfg.schedule.sampling_timesteps(cfg.inference_steps)?;
    let mut raw = match initial {
        Initial::WhiteNoise => {
            let data = gaussian_noise(n * m, rng)
                .into_iter()
                .map(|z| noise_map(cfg.mode, z, cfg.eta_clip))
                .collect();
            MatchMatrix::new(n, m, data)?
        }
        Initial::Matrix(e) => {
            e.check_same_shape(&MatchMatrix::zeros(n, m))?;
            e.scaled(cfg.signal_scale.factor(n))
        }
    };
    let mut state = project_raw(&raw, cfg.mode, cfg.sinkhorn_iterations)?;
    let mut trajectory = Vec::with_capacity(timesteps.len());
    trajectory.push(state.clone());
    let mut predictions = Vec::with_capacity(timesteps.len() - 1);
    for w in timesteps.windows(2) {
        let (t_from, t_to) = (w[0], w[1]);
        let prediction = denoiser.predict(&state, t_from, pair)?;
        let sigma = ddim_sigma(cfg.schedule.alpha_bar(t_from), cfg.schedule.alpha_bar(t_to), cfg.ddim_eta);
        let z = (sigma > 0.0).then(|| gaussian_noise(n * m, rng));
        let out = ddim_step(&raw, &prediction, t_from, t_to, cfg, z.as_deref())?;
        predictions.push(prediction);
        raw = out.raw;
        state = out.projected;
        trajectory.push(state.clone());
    }
    Ok(SampleResult {
        matrix: state,
        trajectory,
        timesteps,
        predictions,
    })
}
