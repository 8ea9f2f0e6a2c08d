use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Denoiser, Linearization};
use crate::dynamics::LinearGaussianSsm;
use crate::schedule::NoiseSchedule;

/// Exact conditional mean for the conjugate pair
/// `x^{k+1} | x^k ~ N(A x^k, Q)`, `x_t | x^{k+1} ~ N(alpha_t x^{k+1}, sigma_t^2 I)`:
///
/// `E = (Q^-1 + c I)^-1 (Q^-1 A x^k + (alpha_t / sigma_t^2) x_t)`, `c = alpha_t^2 / sigma_t^2`.
///
/// Evaluated in the eigenbasis of `Q` so no inverse of `Q` is ever formed.
#[derive(Clone, Debug)]
pub struct AnalyticLgDenoiser {
    ssm: LinearGaussianSsm,
    schedule: NoiseSchedule,
    basis: DMatrix<f64>,
    eig: DVector<f64>,
}

impl AnalyticLgDenoiser {
    pub fn new(ssm: LinearGaussianSsm, schedule: NoiseSchedule) -> Self {
        // Q is SPD by construction of the SSM.
        let SymmetricEigen {
            eigenvectors,
            eigenvalues,
        } = ssm.noise_cov().clone().symmetric_eigen();
        Self {
            ssm,
            schedule,
            basis: eigenvectors,
            eig: eigenvalues,
        }
    }

    pub fn ssm(&self) -> &LinearGaussianSsm {
        &self.ssm
    }

    fn gains(&self, t: f64) -> (f64, f64, DVector<f64>) {
        let alpha = self.schedule.alpha_at(t);
        let sigma = self.schedule.sigma_at(t);
        let c = alpha * alpha / (sigma * sigma);
        let shrink = self.eig.map(|l| 1.0 / (1.0 + c * l));
        (alpha, sigma, shrink)
    }

    /// `Cov[x^{k+1} | x^k, x_t] = (Q^-1 + c I)^-1`.
    pub fn posterior_covariance(&self, t: f64) -> DMatrix<f64> {
        let (_, _, shrink) = self.gains(t);
        let diag = shrink.component_mul(&self.eig);
        &self.basis * DMatrix::from_diagonal(&diag) * self.basis.transpose()
    }

    fn jacobian_apply(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        let (alpha, sigma, shrink) = self.gains(t);
        let w = self.basis.tr_mul(u);
        let scaled = w.component_mul(&shrink).component_mul(&self.eig) * (alpha / (sigma * sigma));
        &self.basis * scaled
    }
}

impl Denoiser for AnalyticLgDenoiser {
    fn dim(&self) -> usize {
        self.ssm.dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn evaluate(&self, x_t: &DVector<f64>, x_prev: &DVector<f64>, t: f64) -> DVector<f64> {
        let (alpha, sigma, shrink) = self.gains(t);
        let prior = self.basis.tr_mul(&(self.ssm.transition() * x_prev));
        let data = self.basis.tr_mul(x_t);
        let k = alpha / (sigma * sigma);
        let coeffs = DVector::from_fn(self.dim(), |j, _| {
            shrink[j] * (prior[j] + k * self.eig[j] * data[j])
        });
        &self.basis * coeffs
    }

    /// The Jacobian is symmetric and independent of `x_t`.
    fn vjp(&self, _x_t: &DVector<f64>, _x_prev: &DVector<f64>, t: f64, u: &DVector<f64>) -> DVector<f64> {
        self.jacobian_apply(t, u)
    }

    fn linearize<'a>(
        &'a self,
        x_t: &DVector<f64>,
        x_prev: &DVector<f64>,
        t: f64,
    ) -> Box<dyn Linearization + 'a> {
        Box::new(AnalyticLinearization {
            den: self,
            mean: self.evaluate(x_t, x_prev, t),
            t,
        })
    }
}

struct AnalyticLinearization<'a> {
    den: &'a AnalyticLgDenoiser,
    mean: DVector<f64>,
    t: f64,
}

impl Linearization for AnalyticLinearization<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    fn vjp(&self, u: &DVector<f64>) -> DVector<f64> {
        self.den.jacobian_apply(self.t, u)
    }
}
