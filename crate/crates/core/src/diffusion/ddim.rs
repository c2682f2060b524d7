#[allow(unused_imports)]
use num_traits::Float;
use super::{project_raw, DiffusionConfig};
use crate::error::{Error, Result};
use crate::matrixspace::MatchMatrix;

/// Below this, `1 − ᾱ` is treated as zero and the implied noise is undefined.
const MIN_NOISE_LEVEL: f64 = 1e-12;

/// DDIM noise level `σ = η·√[(1−ᾱ_to)/(1−ᾱ_from)]·√[1−ᾱ_from/ᾱ_to]`.
pub fn ddim_sigma(alpha_bar_from: f64, alpha_bar_to: f64, eta: f64) -> f64 {
    let ratio = ((1.0 - alpha_bar_to) / (1.0 - alpha_bar_from)).max(0.0);
    let jump = (1.0 - alpha_bar_from / alpha_bar_to).max(0.0);
    eta * (ratio * jump).sqrt()
}

/// One DDIM update on unconstrained states.
///
/// `e0_hat` is a polytope matrix and is lifted by the configured signal scale
/// before the algebra, so `et_raw` must live on that same scale. `z` is the
/// fresh standard-normal draw and is required whenever `σ > 0`.
pub fn ddim_step_raw(
    et_raw: &MatchMatrix,
    e0_hat: &MatchMatrix,
    t_from: usize,
    t_to: usize,
    cfg: &DiffusionConfig,
    z: Option<&[f64]>,
) -> Result<MatchMatrix> {
    if t_to >= t_from {
        return Err(Error::TimestepOrder { from: t_from, to: t_to });
    }
    cfg.schedule.check(t_from, 1)?;
    et_raw.check_same_shape(e0_hat)?;
    let ab_from = cfg.schedule.alpha_bar(t_from);
    let ab_to = cfg.schedule.alpha_bar(t_to);
    if 1.0 - ab_from < MIN_NOISE_LEVEL {
        return Err(Error::DegenerateAlphaBar(t_from));
    }
    let sigma = ddim_sigma(ab_from, ab_to, cfg.ddim_eta);
    let scale = cfg.signal_scale.factor(et_raw.n_rows());
    let x0 = e0_hat.scaled(scale);
    let eps_hat = et_raw.axpby(1.0 / (1.0 - ab_from).sqrt(), &x0, -ab_from.sqrt() / (1.0 - ab_from).sqrt())?;
    let direction = (1.0 - ab_to - sigma * sigma).max(0.0).sqrt();
    let mut next = x0.axpby(ab_to.sqrt(), &eps_hat, direction)?;
    if sigma > 0.0 {
        let z = z.ok_or(Error::InvalidParameter {
            name: "noise",
            reason: "a fresh draw is required when ddim_eta > 0",
        })?;
        if z.len() != next.as_slice().len() {
            return Err(Error::LengthMismatch {
                expected: next.as_slice().len(),
                found: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteNoise);
        }
        let (n, m) = next.shape();
        let data = next.as_slice().iter().zip(z).map(|(x, w)| x + sigma * w).collect();
        next = MatchMatrix::new(n, m, data)?;
    }
    Ok(next)
}

/// A DDIM step's unconstrained state and its projection onto the polytope.
#[derive(Debug, Clone, PartialEq)]
pub struct DdimOutput {
    pub raw: MatchMatrix,
    pub projected: MatchMatrix,
}

/// [`ddim_step_raw`] followed by the mode's projection and Sinkhorn.
pub fn ddim_step(
    et_raw: &MatchMatrix,
    e0_hat: &MatchMatrix,
    t_from: usize,
    t_to: usize,
    cfg: &DiffusionConfig,
    z: Option<&[f64]>,
) -> Result<DdimOutput> {
    let raw = ddim_step_raw(et_raw, e0_hat, t_from, t_to, cfg, z)?;
    let projected = project_raw(&raw, cfg.mode, cfg.sinkhorn_iterations)?;
    Ok(DdimOutput { raw, projected })
}
