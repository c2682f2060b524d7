#[allow(unused_imports)]
use num_traits::Float;
use super::NoiseSchedule;
use crate::error::Result;
use crate::matrixspace::MatchMatrix;

/// Mean and (isotropic) variance of `q(E^{t−1} | E^t, E⁰)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: MatchMatrix,
    pub variance: f64,
}

/// Scalar posterior given `α_t`, `ᾱ_{t−1}` and the two endpoint values;
/// returns `(mean, variance)`.
pub fn posterior_scalar(alpha_t: f64, alpha_bar_prev: f64, e0: f64, et: f64) -> (f64, f64) {
    let alpha_bar_t = alpha_t * alpha_bar_prev;
    let denom = 1.0 - alpha_bar_t;
    let ct = alpha_t.sqrt() * (1.0 - alpha_bar_prev) / denom;
    let c0 = alpha_bar_prev.sqrt() * (1.0 - alpha_t) / denom;
    let variance = (1.0 - alpha_t) * (1.0 - alpha_bar_prev) / denom;
    (ct * et + c0 * e0, variance)
}

/// Gaussian posterior for `1 ≤ t ≤ T`; at `t = 1` it collapses onto `E⁰`.
pub fn posterior_params(e0: &MatchMatrix, et: &MatchMatrix, t: usize, schedule: &NoiseSchedule) -> Result<Posterior> {
    schedule.check(t, 1)?;
    e0.check_same_shape(et)?;
    let alpha_t = schedule.alpha(t);
    let alpha_bar_prev = schedule.alpha_bar(t - 1);
    let (ct, _) = posterior_scalar(alpha_t, alpha_bar_prev, 0.0, 1.0);
    let (c0, variance) = posterior_scalar(alpha_t, alpha_bar_prev, 1.0, 0.0);
    Ok(Posterior {
        mean: et.axpby(ct, e0, c0)?,
        variance,
    })
}
