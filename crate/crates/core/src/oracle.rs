//! Exact linear-Gaussian references: Kalman filter, one-step evidence and the
//! optimal proposal. Dense linear algebra only; meant for verification.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{LinearGaussianSsm, ObservationModel};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `log N(x | mean, cov)` via a Cholesky factor.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("Gaussian covariance"))?;
    let r = x - mean;
    let z = chol.l().solve_lower_triangular(&r).expect("Cholesky factor is invertible");
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let n = x.len() as f64;
    Ok(-0.5 * (z.norm_squared() + log_det + n * (2.0 * std::f64::consts::PI).ln()))
}

/// Condition `prior` on `y = H x + e`.
fn update(prior: &KalmanState, obs: &ObservationModel, y: &DVector<f64>) -> Result<KalmanState> {
    let h = obs.operator();
    let s = symmetrize(&(h * &prior.cov * h.transpose() + obs.noise_cov()));
    let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
    // K = P H^T S^-1
    let pht = &prior.cov * h.transpose();
    let gain = chol.solve(&pht.transpose()).transpose();
    let mean = &prior.mean + &gain * (y - h * &prior.mean);
    let cov = symmetrize(&(&prior.cov - &gain * h * &prior.cov));
    Ok(KalmanState { mean, cov })
}

fn check_shapes(ssm: &LinearGaussianSsm, obs: &ObservationModel) -> Result<()> {
    check_dim("observation operator columns", ssm.dim(), obs.state_dim())
}

/// Filtering distributions `p(x^k | y^{1:k})` for `k = 0..=K`, starting from a
/// Dirac at `x0`.
pub fn kalman_filter(
    ssm: &LinearGaussianSsm,
    obs: &ObservationModel,
    x0: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Result<Vec<KalmanState>> {
    check_shapes(ssm, obs)?;
    check_dim("x0", ssm.dim(), x0.len())?;
    let d = ssm.dim();
    let a = ssm.transition();
    let mut out = Vec::with_capacity(ys.len() + 1);
    out.push(KalmanState {
        mean: x0.clone(),
        cov: DMatrix::zeros(d, d),
    });
    for y in ys {
        check_dim("observation", obs.obs_dim(), y.len())?;
        let prev = out.last().expect("non-empty");
        let pred = KalmanState {
            mean: a * &prev.mean,
            cov: symmetrize(&(a * &prev.cov * a.transpose() + ssm.noise_cov())),
        };
        out.push(update(&pred, obs, y)?);
    }
    Ok(out)
}

/// `log p(y^{k+1} | x^k) = log N(y | H A x_prev, H Q H^T + Sigma_y)`.
pub fn exact_transition_evidence(
    ssm: &LinearGaussianSsm,
    obs: &ObservationModel,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_shapes(ssm, obs)?;
    check_dim("observation", obs.obs_dim(), y.len())?;
    let h = obs.operator();
    let mean = h * (ssm.transition() * x_prev);
    let cov = symmetrize(&(h * ssm.noise_cov() * h.transpose() + obs.noise_cov()));
    gaussian_log_density(y, &mean, &cov)
}

/// `p(x^{k+1} | x^k, y^{k+1})`.
pub fn exact_guided_posterior(
    ssm: &LinearGaussianSsm,
    obs: &ObservationModel,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    check_shapes(ssm, obs)?;
    check_dim("x_prev", ssm.dim(), x_prev.len())?;
    let prior = KalmanState {
        mean: ssm.transition() * x_prev,
        cov: ssm.noise_cov().clone(),
    };
    update(&prior, obs, y)
}
