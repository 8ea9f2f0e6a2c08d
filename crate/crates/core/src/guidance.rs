//! Moment-matching likelihood score for linear-Gaussian observations.
//!
//! With `x_hat = d(x_t, x_prev, t)` and `V = (sigma_t^2 / alpha_t) dx_hat/dx_t`,
//! the observation likelihood is approximated by `N(y | H x_hat, Sigma_y + H V H^T)`
//! and its gradient (holding `V` fixed) is `J^T H^T u` with
//! `(Sigma_y + H V H^T) u = y - H x_hat`. The system is solved matrix-free.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::denoiser::{score_from_mean, Denoiser, Linearization};
use crate::dynamics::ObservationModel;
use crate::error::{check_dim, Error, Result};
use crate::sampler::ScoreSource;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KrylovMethod {
    Bicgstab,
    ConjugateGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceModel {
    /// `V` applied through the denoiser's vector-Jacobian product.
    TweedieVjp,
    /// `V = sigma_t^2 / (alpha_t^2 + sigma_t^2) I`, for diagnostics.
    ScalarFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub solver: KrylovMethod,
    pub max_iters: usize,
    pub tol: f64,
    pub variance_model: VarianceModel,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            solver: KrylovMethod::Bicgstab,
            max_iters: 2,
            tol: 1e-8,
            variance_model: VarianceModel::TweedieVjp,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("guidance.max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("guidance.tol must be >= 0".into()));
        }
        Ok(())
    }

    /// Solver settings used for oracle comparisons.
    pub fn converged() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-13,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovResult {
    pub solution: DVector<f64>,
    pub residual_norm: f64,
    pub iters: usize,
    /// A zero denominator stopped the iteration; `solution` is the last iterate.
    pub breakdown: bool,
}

/// Solve `apply(u) = b` from `u = 0`, stopping at `max_iters` or when
/// `||r|| <= tol ||b||`.
pub fn krylov_solve(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    cfg: &GuidanceConfig,
) -> KrylovResult {
    let b_norm = b.norm();
    let mut res = KrylovResult {
        solution: DVector::zeros(b.len()),
        residual_norm: b_norm,
        iters: 0,
        breakdown: false,
    };
    if b_norm == 0.0 {
        return res;
    }
    let target = cfg.tol * b_norm;
    match cfg.solver {
        KrylovMethod::ConjugateGradient => cg(apply, b, cfg.max_iters, target, &mut res),
        KrylovMethod::Bicgstab => bicgstab(apply, b, cfg.max_iters, target, &mut res),
    }
    res
}

fn cg(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iters: usize,
    target: f64,
    res: &mut KrylovResult,
) {
    let x = &mut res.solution;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    while res.iters < max_iters && rr.sqrt() > target {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap == 0.0 || !pap.is_finite() {
            res.breakdown = true;
            break;
        }
        let a = rr / pap;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &ap, 1.0);
        let rr_new = r.norm_squared();
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        res.iters += 1;
    }
    res.residual_norm = rr.sqrt();
}

fn bicgstab(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iters: usize,
    target: f64,
    res: &mut KrylovResult,
) {
    let x = &mut res.solution;
    let mut r = b.clone();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = DVector::zeros(b.len());
    let mut p = DVector::zeros(b.len());
    let mut r_norm = r.norm();
    while res.iters < max_iters && r_norm > target {
        let rho_new = r_hat.dot(&r);
        if rho_new == 0.0 {
            res.breakdown = true;
            break;
        }
        p = &r + (&p - &v * omega) * ((rho_new / rho) * (alpha / omega));
        v = apply(&p);
        let denom = r_hat.dot(&v);
        if denom == 0.0 || !denom.is_finite() {
            res.breakdown = true;
            break;
        }
        alpha = rho_new / denom;
        rho = rho_new;
        let s = &r - &v * alpha;
        x.axpy(alpha, &p, 1.0);
        res.iters += 1;
        let s_norm = s.norm();
        if s_norm <= target {
            r_norm = s_norm;
            break;
        }
        let t = apply(&s);
        let tt = t.norm_squared();
        if tt == 0.0 {
            r_norm = s_norm;
            res.breakdown = true;
            break;
        }
        omega = t.dot(&s) / tt;
        x.axpy(omega, &s, 1.0);
        r = s - &t * omega;
        r_norm = r.norm();
        if omega == 0.0 {
            res.breakdown = true;
            break;
        }
    }
    res.residual_norm = r_norm;
}

/// `Sigma_y v + (sigma_t^2 / alpha_t) H J^T H^T v` for the linearization `lin`.
pub fn matfree_apply(
    lin: &dyn Linearization,
    obs: &ObservationModel,
    schedule: &NoiseSchedule,
    t: f64,
    variance_model: VarianceModel,
    v: &DVector<f64>,
) -> DVector<f64> {
    let alpha = schedule.alpha_at(t);
    let sigma = schedule.sigma_at(t);
    let noise = v.component_mul(&obs.noise_var());
    let ht_v = obs.apply_transpose(v);
    let cov = match variance_model {
        VarianceModel::TweedieVjp => obs.apply(&lin.vjp(&ht_v)) * (sigma * sigma / alpha),
        VarianceModel::ScalarFallback => {
            obs.apply(&ht_v) * (sigma * sigma / (alpha * alpha + sigma * sigma))
        }
    };
    noise + cov
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodScoreResult {
    pub score: DVector<f64>,
    pub residual_norm: f64,
    pub iters_used: usize,
    pub breakdown: bool,
}

/// Likelihood score for an already-evaluated linearization.
pub fn likelihood_score_at(
    lin: &dyn Linearization,
    obs: &ObservationModel,
    y: &DVector<f64>,
    schedule: &NoiseSchedule,
    t: f64,
    cfg: &GuidanceConfig,
) -> Result<LikelihoodScoreResult> {
    check_dim("observation", obs.obs_dim(), y.len())?;
    let v = y - obs.apply(lin.mean());
    let apply = |w: &DVector<f64>| matfree_apply(lin, obs, schedule, t, cfg.variance_model, w);
    let sol = krylov_solve(&apply, &v, cfg);
    if !sol.residual_norm.is_finite() {
        return Err(Error::NonFiniteState { step: sol.iters, t });
    }
    Ok(LikelihoodScoreResult {
        score: lin.vjp(&obs.apply_transpose(&sol.solution)),
        residual_norm: sol.residual_norm,
        iters_used: sol.iters,
        breakdown: sol.breakdown,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn likelihood_score(
    den: &dyn Denoiser,
    obs: &ObservationModel,
    y: &DVector<f64>,
    x_t: &DVector<f64>,
    x_prev: &DVector<f64>,
    t: f64,
    cfg: &GuidanceConfig,
) -> Result<LikelihoodScoreResult> {
    check_dim("x_t", den.dim(), x_t.len())?;
    check_dim("x_prev", den.dim(), x_prev.len())?;
    check_dim("observation operator columns", den.dim(), obs.state_dim())?;
    let lin = den.linearize(x_t, x_prev, t);
    likelihood_score_at(lin.as_ref(), obs, y, den.schedule(), t, cfg)
}

/// Prior score plus, when `y` is given, the likelihood score; both share one
/// denoiser evaluation.
#[allow(clippy::too_many_arguments)]
pub fn posterior_score(
    den: &dyn Denoiser,
    obs: &ObservationModel,
    y: Option<&DVector<f64>>,
    x_t: &DVector<f64>,
    x_prev: &DVector<f64>,
    t: f64,
    cfg: &GuidanceConfig,
) -> Result<DVector<f64>> {
    check_dim("x_t", den.dim(), x_t.len())?;
    check_dim("x_prev", den.dim(), x_prev.len())?;
    let lin = den.linearize(x_t, x_prev, t);
    let prior = score_from_mean(den.schedule(), x_t, lin.mean(), t)?;
    match y {
        None => Ok(prior),
        Some(y) => {
            let like = likelihood_score_at(lin.as_ref(), obs, y, den.schedule(), t, cfg)?;
            Ok(prior + like.score)
        }
    }
}

/// Posterior score field for one particle, ready for the sampler.
pub struct GuidedScore<'a> {
    pub den: &'a dyn Denoiser,
    pub obs: &'a ObservationModel,
    pub y: &'a DVector<f64>,
    pub x_prev: &'a DVector<f64>,
    pub cfg: &'a GuidanceConfig,
}

impl ScoreSource for GuidedScore<'_> {
    fn dim(&self) -> usize {
        self.den.dim()
    }
    fn schedule(&self) -> &NoiseSchedule {
        self.den.schedule()
    }
    fn score(&self, x_t: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        posterior_score(self.den, self.obs, Some(self.y), x_t, self.x_prev, t, self.cfg)
    }
}
