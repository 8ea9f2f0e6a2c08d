//! Fully-adapted auxiliary particle filter with diffusion-sampled proposals.
//!
//! Each step: predict `mu_i ~ E[x^{k+1} | x_i^k]` with one denoiser call at
//! `t = 1`, weight by `p(y | mu_i)^alpha` with `alpha` tuned so the ESS lands
//! in a target band, resample, and move every survivor with a guided reverse
//! SDE solve targeting `p(x^{k+1} | x^k, y^{k+1})`.

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::dynamics::{standard_normal, ObservationModel};
use crate::error::{check_dim, Error, Result};
use crate::guidance::{GuidanceConfig, GuidedScore};
use crate::parallel::{try_map_indexed, Execution};
use crate::rng::{self, tag, Rng};
use crate::sampler::{reverse_sde_solve, PriorScore, SamplerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    Multinomial,
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub particles: usize,
    pub ess_min: f64,
    pub ess_max: f64,
    pub alpha_min: f64,
    pub max_adapt_iters: usize,
    pub resampling: Resampling,
    /// Noise draws averaged in each predicted mean.
    pub mean_draws: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 256,
            ess_min: 60.0,
            ess_max: 70.0,
            alpha_min: 1e-4,
            max_adapt_iters: 60,
            resampling: Resampling::Multinomial,
            mean_draws: 1,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.particles as f64;
        if self.particles < 2 {
            return Err(Error::Config("filter.particles must be >= 2".into()));
        }
        if !(1.0 < self.ess_min && self.ess_min < self.ess_max && self.ess_max <= n) {
            return Err(Error::Config(format!(
                "filter thresholds need 1 < ess_min < ess_max <= particles, got {} / {} / {}",
                self.ess_min, self.ess_max, self.particles
            )));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(Error::Config("filter.alpha_min must be in (0, 1]".into()));
        }
        if self.mean_draws == 0 || self.max_adapt_iters == 0 {
            return Err(Error::Config("filter.mean_draws and filter.max_adapt_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// ESS band scaled from the defaults (60..70 of 256) to `particles`.
    pub fn with_scaled_band(mut self, particles: usize) -> Self {
        let n = particles as f64;
        self.particles = particles;
        self.ess_min = (60.0 / 256.0 * n).max(1.5);
        self.ess_max = (70.0 / 256.0 * n).max(self.ess_min + 0.5).min(n);
        self
    }
}

/// `E[x^{k+1} | x^k] ~ d(sigma_1 eps, x_prev, 1)`.
pub fn predict_mean(den: &dyn Denoiser, x_prev: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
    let sigma1 = den.schedule().sigma_terminal();
    let eps = standard_normal(rng, den.dim());
    den.evaluate(&(eps * sigma1), x_prev, 1.0)
}

/// `log N(y | H mu, Sigma_y)`.
pub fn log_obs_density(obs: &ObservationModel, y: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    check_dim("observation", obs.obs_dim(), y.len())?;
    check_dim("predicted mean", obs.state_dim(), mu.len())?;
    obs.require_positive_noise()?;
    let r = y - obs.apply(mu);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(r
        .iter()
        .zip(obs.noise_std().iter())
        .map(|(ri, s)| -0.5 * (ri / s).powi(2) - s.ln() - half_ln_2pi)
        .sum())
}

/// `(sum w)^2 / sum w^2`, i.e. `1 / sum w^2` for normalized weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s > 0.0) || !s2.is_finite() || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::DegenerateWeights(format!(
            "cannot normalize weights (sum = {s})"
        )));
    }
    Ok(s * s / s2)
}

/// Normalized `exp(alpha * logliks)` computed with a max shift.
pub fn tempered_weights(logliks: &[f64], alpha: f64) -> Vec<f64> {
    let max = logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logliks.iter().map(|l| (alpha * (l - max)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clamp {
    /// Untempered weights already have ESS above the band.
    Upper,
    /// Even `alpha_min` leaves ESS below the band.
    Lower,
}

impl Clamp {
    pub fn label(self) -> &'static str {
        match self {
            Clamp::Upper => "upper",
            Clamp::Lower => "lower",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adaptation {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub ess: f64,
    pub clamp: Option<Clamp>,
    pub iters: usize,
}

/// Choose `alpha in [alpha_min, 1]` so the ESS of `exp(alpha * logliks)` is in
/// `[ess_min, ess_max]`, by bisection on `log alpha`.
pub fn adapt_inflation(logliks: &[f64], cfg: &FilterConfig) -> Result<Adaptation> {
    if logliks.is_empty() || logliks.iter().any(|l| !l.is_finite()) {
        return Err(Error::DegenerateWeights("log-likelihoods must be finite".into()));
    }
    let eval = |alpha: f64| -> Result<(Vec<f64>, f64)> {
        let w = tempered_weights(logliks, alpha);
        let e = ess(&w)?;
        Ok((w, e))
    };
    let done = |alpha, (weights, ess): (Vec<f64>, f64), clamp, iters| Adaptation {
        alpha,
        weights,
        ess,
        clamp,
        iters,
    };
    let top = eval(1.0)?;
    if top.1 > cfg.ess_max {
        return Ok(done(1.0, top, Some(Clamp::Upper), 0));
    }
    if top.1 >= cfg.ess_min {
        return Ok(done(1.0, top, None, 0));
    }
    let bottom = eval(cfg.alpha_min)?;
    if bottom.1 < cfg.ess_min {
        return Ok(done(cfg.alpha_min, bottom, Some(Clamp::Lower), 0));
    }
    if bottom.1 <= cfg.ess_max {
        return Ok(done(cfg.alpha_min, bottom, None, 0));
    }
    let (mut lo, mut hi) = (cfg.alpha_min.ln(), 0.0);
    for iter in 1..=cfg.max_adapt_iters {
        let mid = 0.5 * (lo + hi);
        let alpha = mid.exp();
        let cur = eval(alpha)?;
        if cur.1 > cfg.ess_max {
            lo = mid;
        } else if cur.1 < cfg.ess_min {
            hi = mid;
        } else {
            return Ok(done(alpha, cur, None, iter));
        }
    }
    Err(Error::AdaptationFailed(cfg.max_adapt_iters))
}

/// Ancestor indices drawn from the categorical distribution `weights`.
pub fn resample(weights: &[f64], n: usize, kind: Resampling, rng: &mut Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w / total;
        cum.push(acc);
    }
    let last = weights.len() - 1;
    let locate = |u: f64| cum.partition_point(|c| *c <= u).min(last);
    match kind {
        Resampling::Multinomial => (0..n).map(|_| locate(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / n as f64;
            (0..n).map(|i| locate(u0 + i as f64 / n as f64)).collect()
        }
    }
}

/// Diagnostics of one assimilation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Index `k + 1` of the assimilated observation.
    pub step: usize,
    pub logliks: Vec<f64>,
    pub weights: Vec<f64>,
    pub ess: f64,
    pub alpha: f64,
    pub clamp: Option<Clamp>,
    pub ancestors: Vec<usize>,
    pub predicted_means: Vec<DVector<f64>>,
    /// Equally weighted particles after propagation.
    pub ensemble: Vec<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    pub initial: Vec<DVector<f64>>,
    pub steps: Vec<StepRecord>,
}

impl FilterTrace {
    /// Ensemble at step `k` (0 is the initial Dirac ensemble).
    pub fn ensemble(&self, k: usize) -> &[DVector<f64>] {
        if k == 0 {
            &self.initial
        } else {
            &self.steps[k - 1].ensemble
        }
    }
}

fn particle_error(step: usize, particle: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteState { .. } => Error::NonFiniteParticle { step, particle },
        other => other,
    }
}

/// Run the filter from all particles at `x0` over the observations `ys`.
pub fn faapf_run(
    den: &dyn Denoiser,
    obs: &ObservationModel,
    sampler: &SamplerConfig,
    guidance: &GuidanceConfig,
    cfg: &FilterConfig,
    x0: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<FilterTrace> {
    cfg.validate()?;
    sampler.validate()?;
    guidance.validate()?;
    obs.require_positive_noise()?;
    check_dim("x0", den.dim(), x0.len())?;
    check_dim("observation operator columns", den.dim(), obs.state_dim())?;
    for y in ys {
        check_dim("observation", obs.obs_dim(), y.len())?;
    }
    let n = cfg.particles;
    let mut particles = vec![x0.clone(); n];
    let mut trace = FilterTrace {
        initial: particles.clone(),
        steps: Vec::with_capacity(ys.len()),
    };
    for (k, y) in ys.iter().enumerate() {
        let step = k + 1;
        let kk = k as u64;
        let predicted = try_map_indexed(cfg.execution, n, |i| -> Result<DVector<f64>> {
            let mut r = rng::stream(cfg.seed, tag::PREDICT, kk, i as u64);
            let mut mu = predict_mean(den, &particles[i], &mut r);
            for _ in 1..cfg.mean_draws {
                mu += predict_mean(den, &particles[i], &mut r);
            }
            mu /= cfg.mean_draws as f64;
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParticle { step, particle: i });
            }
            Ok(mu)
        })?;
        let logliks = predicted
            .iter()
            .map(|mu| log_obs_density(obs, y, mu))
            .collect::<Result<Vec<_>>>()?;
        let adapt = adapt_inflation(&logliks, cfg)?;
        let ancestors = resample(
            &adapt.weights,
            n,
            cfg.resampling,
            &mut rng::stream(cfg.seed, tag::RESAMPLE, kk, 0),
        );
        let moved = try_map_indexed(cfg.execution, n, |i| -> Result<DVector<f64>> {
            let src = GuidedScore {
                den,
                obs,
                y,
                x_prev: &particles[ancestors[i]],
                cfg: guidance,
            };
            let mut r = rng::stream(cfg.seed, tag::PROPAGATE, kk, i as u64);
            reverse_sde_solve(&src, sampler, &mut r).map_err(particle_error(step, i))
        })?;
        particles = moved;
        trace.steps.push(StepRecord {
            step,
            logliks,
            weights: adapt.weights,
            ess: adapt.ess,
            alpha: adapt.alpha,
            clamp: adapt.clamp,
            ancestors,
            predicted_means: predicted,
            ensemble: particles.clone(),
        });
    }
    Ok(trace)
}

/// Propagate `n` members independently with the unguided sampler for `steps`
/// steps. Returns the `steps + 1` ensembles including the start.
pub fn unconditional_ensemble_run(
    den: &dyn Denoiser,
    sampler: &SamplerConfig,
    n: usize,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<Vec<DVector<f64>>>> {
    sampler.validate()?;
    check_dim("x0", den.dim(), x0.len())?;
    if n == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let mut out = vec![vec![x0.clone(); n]];
    for k in 0..steps {
        let prev = out.last().expect("non-empty");
        let next = try_map_indexed(execution, n, |i| -> Result<DVector<f64>> {
            let src = PriorScore {
                den,
                x_prev: &prev[i],
            };
            let mut r = rng::stream(seed, tag::BASELINE, k as u64, i as u64);
            reverse_sde_solve(&src, sampler, &mut r).map_err(particle_error(k + 1, i))
        })?;
        out.push(next);
    }
    Ok(out)
}

/// `m` draws from the guided proposal `q(x^{k+1} | x_prev, y)` for a single
/// parent, as used by the conditional posterior predictive check. `step` only
/// keys the random streams.
#[allow(clippy::too_many_arguments)]
pub fn proposal_samples(
    den: &dyn Denoiser,
    obs: &ObservationModel,
    sampler: &SamplerConfig,
    guidance: &GuidanceConfig,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
    m: usize,
    seed: u64,
    step: u64,
    execution: Execution,
) -> Result<Vec<DVector<f64>>> {
    sampler.validate()?;
    guidance.validate()?;
    check_dim("x_prev", den.dim(), x_prev.len())?;
    check_dim("observation", obs.obs_dim(), y.len())?;
    let src = GuidedScore {
        den,
        obs,
        y,
        x_prev,
        cfg: guidance,
    };
    try_map_indexed(execution, m, |j| {
        let mut r = rng::stream(seed, tag::CHECK, step, j as u64);
        reverse_sde_solve(&src, sampler, &mut r).map_err(particle_error(step as usize, j))
    })
}
