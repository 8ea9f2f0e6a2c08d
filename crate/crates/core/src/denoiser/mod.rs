//! Conditional denoisers `d(x_t, x_prev, t) ~ E[x^{k+1} | x^k = x_prev, x_t^{k+1} = x_t]`
//! and the score they imply.

mod analytic;
mod checkpoint;
mod mlp;
mod train;

pub use analytic::AnalyticLgDenoiser;
pub use checkpoint::{load_checkpoint, read_array_file, save_checkpoint, write_array_file, CheckpointHeader};
pub use mlp::{MlpDenoiser, Preconditioning};
pub use train::{train_denoiser, TrainConfig, TrainReport};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// A denoiser evaluated at one point, with its Jacobian available through
/// vector-Jacobian products.
pub trait Linearization {
    /// Denoised estimate at the linearization point.
    fn mean(&self) -> &DVector<f64>;
    /// `J^T u`, where `J = d mean / d x_t`.
    fn vjp(&self, u: &DVector<f64>) -> DVector<f64>;
}

pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &NoiseSchedule;

    fn evaluate(&self, x_t: &DVector<f64>, x_prev: &DVector<f64>, t: f64) -> DVector<f64>;

    /// u-weighted gradient of `evaluate` with respect to `x_t`.
    fn vjp(
        &self,
        x_t: &DVector<f64>,
        x_prev: &DVector<f64>,
        t: f64,
        u: &DVector<f64>,
    ) -> DVector<f64>;

    /// Evaluate once and keep whatever is needed for repeated VJPs.
    fn linearize<'a>(
        &'a self,
        x_t: &DVector<f64>,
        x_prev: &DVector<f64>,
        t: f64,
    ) -> Box<dyn Linearization + 'a> {
        Box::new(Recompute {
            mean: self.evaluate(x_t, x_prev, t),
            den: self,
            x_t: x_t.clone(),
            x_prev: x_prev.clone(),
            t,
        })
    }
}

struct Recompute<'a, D: ?Sized> {
    den: &'a D,
    mean: DVector<f64>,
    x_t: DVector<f64>,
    x_prev: DVector<f64>,
    t: f64,
}

impl<D: Denoiser + ?Sized> Linearization for Recompute<'_, D> {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    fn vjp(&self, u: &DVector<f64>) -> DVector<f64> {
        self.den.vjp(&self.x_t, &self.x_prev, self.t, u)
    }
}

/// Score from a denoised estimate: `(alpha_t mean - x_t) / sigma_t^2`.
pub(crate) fn score_from_mean(
    schedule: &NoiseSchedule,
    x_t: &DVector<f64>,
    mean: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let c = schedule.coefficients(t)?;
    if !(c.sigma > 0.0) {
        return Err(Error::Domain(format!("sigma_t = 0 at t = {t}; score undefined")));
    }
    Ok((mean * c.alpha - x_t) / (c.sigma * c.sigma))
}

/// Tweedie score estimate `sigma_t^-2 (alpha_t d(x_t, x_prev, t) - x_t)`.
pub fn score_from_denoiser(
    den: &dyn Denoiser,
    x_t: &DVector<f64>,
    x_prev: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let mean = den.evaluate(x_t, x_prev, t);
    score_from_mean(den.schedule(), x_t, &mean, t)
}
