#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{DiffusionConfig, Mode};
use crate::error::{Error, Result};
use crate::matrixspace::{sinkhorn_project, MatchMatrix};

/// Clipped fractional noise map: `|x − trunc(x)| · sign(x) · η`, zero at zero.
pub fn f_eps(x: f64, eta: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    (x - x.trunc()).abs() * x.signum() * eta
}

/// The noise transform used by `mode` (`f_eps` for rigid, identity otherwise).
pub fn noise_map(mode: Mode, eps: f64, eta: f64) -> f64 {
    match mode {
        Mode::Rigid => f_eps(eps, eta),
        Mode::Deformable => eps,
    }
}

pub fn gaussian_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unconstrained matrix back onto the polytope: the mode's
/// positivity transform followed by Sinkhorn. A constant matrix in rigid
/// mode has nothing left after subtracting its minimum and maps to uniform.
pub fn project_raw(raw: &MatchMatrix, mode: Mode, iterations: usize) -> Result<MatchMatrix> {
    let positive = match mode {
        Mode::Rigid => {
            let lo = raw.min();
            if raw.max() - lo <= 0.0 {
                let (n, m) = raw.shape();
                return Ok(MatchMatrix::uniform(n, m));
            }
            raw.map(|v| v - lo)
        }
        Mode::Deformable => raw.map(sigmoid),
    };
    sinkhorn_project(&positive, iterations, false)
}

/// A diffused matrix before and after the feasibility projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub raw: MatchMatrix,
    pub projected: MatchMatrix,
}

/// `E^t = √ᾱ_t·s·E⁰ + √(1−ᾱ_t)·g(ε)` followed by [`project_raw`], where `s`
/// is the configured signal scale and `ε` the supplied standard-normal draw.
pub fn forward_diffuse(e0: &MatchMatrix, t: usize, cfg: &DiffusionConfig, noise: &[f64]) -> Result<ForwardSample> {
    cfg.schedule.check(t, 0)?;
    let (n, m) = e0.shape();
    if noise.len() != n * m {
        return Err(Error::LengthMismatch {
            expected: n * m,
            found: noise.len(),
        });
    }
    if noise.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteNoise);
    }
    let ab = cfg.schedule.alpha_bar(t);
    let signal = ab.sqrt() * cfg.signal_scale.factor(n);
    let spread = (1.0 - ab).sqrt();
    let data = e0
        .as_slice()
        .iter()
        .zip(noise)
        .map(|(&e, &z)| signal * e + spread * noise_map(cfg.mode, z, cfg.eta_clip))
        .collect();
    let raw = MatchMatrix::new(n, m, data)?;
    let projected = project_raw(&raw, cfg.mode, cfg.sinkhorn_iterations)?;
    Ok(ForwardSample { raw, projected })
}

/// [`forward_diffuse`] with noise drawn from `rng`.
pub fn forward_diffuse_sampled<R: Rng + ?Sized>(
    e0: &MatchMatrix,
    t: usize,
    cfg: &DiffusionConfig,
    rng: &mut R,
) -> Result<ForwardSample> {
    let noise = gaussian_noise(e0.as_slice().len(), rng);
    forward_diffuse(e0, t, cfg, &noise)
}
