//! Reverse-SDE sampler: variable-step third-order Adams–Bashforth on the drift,
//! exact-variance Gaussian increments for the noise, Langevin corrections.
//!
//! The reverse SDE integrated from `t = 1` to `0` is
//! `dx = [f_t x - (1 + eta^2)/2 g_t^2 s(x, t)] dt + eta g_t dw`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::denoiser::{score_from_denoiser, Denoiser};
use crate::dynamics::standard_normal;
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Number of grid points from `t = 1` to `t = 0`.
    #[serde(rename = "steps")]
    pub n_steps: usize,
    pub eta: f64,
    #[serde(rename = "corrections")]
    pub n_corrections: usize,
    /// Langevin step is `scale * sigma_t^2`.
    pub correction_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 40,
            eta: 1.0,
            n_corrections: 2,
            correction_scale: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 4 {
            return Err(Error::Config(format!(
                "sampler.steps must be >= 4 for the third-order scheme, got {}",
                self.n_steps
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("sampler.eta must be >= 0, got {}", self.eta)));
        }
        if !(self.correction_scale >= 0.0 && self.correction_scale.is_finite()) {
            return Err(Error::Config("sampler.correction_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Score field `x_t -> grad log p(x_t | ...)` on diffusion time `(0, 1]`.
pub trait ScoreSource: Sync {
    fn dim(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;
    fn score(&self, x_t: &DVector<f64>, t: f64) -> Result<DVector<f64>>;
}

/// Unconditional score of `p(x_t^{k+1} | x^k)` from a denoiser.
pub struct PriorScore<'a> {
    pub den: &'a dyn Denoiser,
    pub x_prev: &'a DVector<f64>,
}

impl ScoreSource for PriorScore<'_> {
    fn dim(&self) -> usize {
        self.den.dim()
    }
    fn schedule(&self) -> &NoiseSchedule {
        self.den.schedule()
    }
    fn score(&self, x_t: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        score_from_denoiser(self.den, x_t, self.x_prev, t)
    }
}

/// Draw from `N(0, sigma_1^2 I)`.
pub fn sample_prior_noise(schedule: &NoiseSchedule, dim: usize, rng: &mut Rng) -> DVector<f64> {
    standard_normal(rng, dim) * schedule.sigma_terminal()
}

/// Weights `w_j` with `int_{ts[0]}^{t_next} p(t) dt = sum_j w_j p(ts[j])` for every
/// polynomial `p` of degree `< ts.len()`; `ts` is newest first.
pub fn adams_bashforth_weights(ts: &[f64], t_next: f64) -> Vec<f64> {
    // Two-point Gauss–Legendre is exact up to cubics.
    let (a, b) = (ts[0], t_next);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let g = 1.0 / 3f64.sqrt();
    let nodes = [mid - half * g, mid + half * g];
    (0..ts.len())
        .map(|j| {
            nodes
                .iter()
                .map(|&x| {
                    let mut l = 1.0;
                    for (m, &tm) in ts.iter().enumerate() {
                        if m != j {
                            l *= (x - tm) / (ts[j] - tm);
                        }
                    }
                    l * half
                })
                .sum()
        })
        .collect()
}

/// One unadjusted Langevin step `x + delta s + sqrt(2 delta) z`, `delta = scale sigma_t^2`.
pub fn langevin_correction(
    x_t: &DVector<f64>,
    score_at_t: &DVector<f64>,
    t: f64,
    schedule: &NoiseSchedule,
    scale: f64,
    rng: &mut Rng,
) -> DVector<f64> {
    if scale == 0.0 {
        return x_t.clone();
    }
    let sigma = schedule.sigma_at(t);
    let delta = scale * sigma * sigma;
    x_t + score_at_t * delta + standard_normal(rng, x_t.len()) * (2.0 * delta).sqrt()
}

fn check_finite(x: &DVector<f64>, step: usize, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step, t })
    }
}

/// Integrate the reverse SDE from a given state at `t = 1` down to `t = 0`.
pub fn integrate_reverse_sde(
    score: &dyn ScoreSource,
    x1: DVector<f64>,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    check_dim("reverse SDE initial state", score.dim(), x1.len())?;
    let schedule = score.schedule();
    let grid = schedule.time_grid(cfg.n_steps)?;
    let drift_scale = 0.5 * (1.0 + cfg.eta * cfg.eta);
    let mut x = x1;
    check_finite(&x, 0, grid[0])?;
    // newest first: (t, drift)
    let mut history: Vec<(f64, DVector<f64>)> = Vec::with_capacity(3);
    let mut s = score.score(&x, grid[0])?;
    for n in 0..grid.len() - 1 {
        let (t, t_next) = (grid[n], grid[n + 1]);
        let c = schedule.coefficients_at(t);
        let drift = &x * c.drift_f - &s * (drift_scale * c.diff_g * c.diff_g);
        history.insert(0, (t, drift));
        history.truncate(3);
        let ts: Vec<f64> = history.iter().map(|h| h.0).collect();
        let w = adams_bashforth_weights(&ts, t_next);
        for (wj, (_, bj)) in w.iter().zip(&history) {
            x.axpy(*wj, bj, 1.0);
        }
        if cfg.eta > 0.0 {
            let var = cfg.eta * cfg.eta * schedule.integrated_diffusion(t_next, t);
            x += standard_normal(rng, x.len()) * var.sqrt();
        }
        check_finite(&x, n + 1, t_next)?;
        s = score.score(&x, t_next)?;
        for _ in 0..cfg.n_corrections {
            x = langevin_correction(&x, &s, t_next, schedule, cfg.correction_scale, rng);
            check_finite(&x, n + 1, t_next)?;
            s = score.score(&x, t_next)?;
        }
    }
    Ok(x)
}

/// Draw `x_1 ~ N(0, sigma_1^2 I)` and integrate to `t = 0`.
pub fn reverse_sde_solve(score: &dyn ScoreSource, cfg: &SamplerConfig, rng: &mut Rng) -> Result<DVector<f64>> {
    let x1 = sample_prior_noise(score.schedule(), score.dim(), rng);
    integrate_reverse_sde(score, x1, cfg, rng)
}
