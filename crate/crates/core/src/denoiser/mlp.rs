use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Denoiser, Linearization};
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;

/// Data-dependent constants of the input/output preconditioning.
///
/// The denoiser is parameterized around the previous state:
/// `D = x_prev + c_skip (z - x_prev) + c_out F(c_in (z - x_prev), (x_prev - mean) / scale, c_noise)`
/// with `z = x_t / alpha_t` at noise level `s = sigma_t / alpha_t` and
/// `c_skip = sd^2 / (s^2 + sd^2)`, `c_out = s sd / sqrt(s^2 + sd^2)`,
/// `c_in = 1 / sqrt(s^2 + sd^2)`, `c_noise = ln(s) / 4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preconditioning {
    /// Scale of `x^{k+1}` around its conditional mean given `x^k`.
    pub sigma_data: f64,
    pub state_mean: f64,
    pub state_scale: f64,
}

impl Preconditioning {
    /// `sigma_data` is the residual RMS of an affine least-squares fit of
    /// `x^{k+1}` on `x^k` (exact for linear-Gaussian transitions). With too few
    /// pairs to fit it falls back to the RMS increment.
    pub fn from_pairs(pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Domain("training set is empty".into()));
        }
        let d = pairs[0].0.len();
        let (mut inc2, mut s, mut s2, mut n) = (0.0, 0.0, 0.0, 0.0);
        for (prev, next) in pairs {
            check_dim("training state", d, prev.len())?;
            check_dim("training state", d, next.len())?;
            inc2 += (next - prev).norm_squared();
            s += prev.sum();
            s2 += prev.norm_squared();
            n += prev.len() as f64;
        }
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        let sigma_data = affine_residual_rms(pairs).unwrap_or((inc2 / n).sqrt());
        Ok(Self {
            sigma_data: sigma_data.max(1e-6),
            state_mean: mean,
            state_scale: var.sqrt().max(1e-6),
        })
    }
}

fn affine_residual_rms(pairs: &[(DVector<f64>, DVector<f64>)]) -> Option<f64> {
    let d = pairs[0].0.len();
    if pairs.len() <= 2 * (d + 1) {
        return None;
    }
    let mut gram = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut cross = DMatrix::<f64>::zeros(d + 1, d);
    let mut yy = 0.0;
    let mut a = DVector::<f64>::zeros(d + 1);
    for (prev, next) in pairs {
        a.rows_mut(0, d).copy_from(prev);
        a[d] = 1.0;
        gram.ger(1.0, &a, &a, 1.0);
        cross.ger(1.0, &a, next, 1.0);
        yy += next.norm_squared();
    }
    let coef = gram.clone().cholesky()?.solve(&cross);
    // ||Y - A W||^2 = tr(Y'Y) - tr(W' A'Y) at the least-squares solution
    let sse = yy - coef.component_mul(&cross).sum();
    let dof = (pairs.len() - (d + 1)) as f64 * d as f64;
    Some((sse.max(0.0) / dof).sqrt())
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PrecondCoeffs {
    pub alpha: f64,
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Fully connected denoiser with SiLU hidden activations and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    pub(crate) widths: Vec<usize>,
    /// Layer `l` maps `widths[l] -> widths[l + 1]`; stored as `out x in`.
    pub(crate) weights: Vec<DMatrix<f64>>,
    pub(crate) biases: Vec<DVector<f64>>,
    pub(crate) precond: Preconditioning,
    pub(crate) schedule: NoiseSchedule,
}

impl MlpDenoiser {
    pub fn new_random(
        widths: Vec<usize>,
        precond: Preconditioning,
        schedule: NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::check_widths(&widths)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let std = (1.0 / w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| {
                std * rng.sample::<f64, _>(StandardNormal)
            }));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Self {
            widths,
            weights,
            biases,
            precond,
            schedule,
        })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(Error::Config("MLP needs at least two non-zero layer widths".into()));
        }
        let d = widths[widths.len() - 1];
        if widths[0] != 2 * d + 1 {
            return Err(Error::Config(format!(
                "MLP input width must be 2d+1 = {}, got {}",
                2 * d + 1,
                widths[0]
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn preconditioning(&self) -> &Preconditioning {
        &self.precond
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flat parameter vector: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn from_params(
        widths: Vec<usize>,
        params: &[f64],
        precond: Preconditioning,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        Self::check_widths(&widths)?;
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for w in widths.windows(2) {
            let n = w[0] * w[1];
            weights.push(DMatrix::from_row_slice(w[1], w[0], &params[off..off + n]));
            off += n;
            biases.push(DVector::from_column_slice(&params[off..off + w[1]]));
            off += w[1];
        }
        Ok(Self {
            widths,
            weights,
            biases,
            precond,
            schedule,
        })
    }

    pub(crate) fn coeffs(&self, t: f64) -> PrecondCoeffs {
        let alpha = self.schedule.alpha_at(t);
        let s = self.schedule.sigma_at(t) / alpha;
        Self::coeffs_for(alpha, s, self.precond.sigma_data)
    }

    pub(crate) fn coeffs_for(alpha: f64, s: f64, sd: f64) -> PrecondCoeffs {
        let norm = (s * s + sd * sd).sqrt();
        PrecondCoeffs {
            alpha,
            c_skip: sd * sd / (norm * norm),
            c_out: s * sd / norm,
            c_in: 1.0 / norm,
            c_noise: s.ln() / 4.0,
        }
    }

    pub(crate) fn network_input(
        &self,
        z_minus_prev: &DVector<f64>,
        x_prev: &DVector<f64>,
        c: &PrecondCoeffs,
        out: &mut [f64],
    ) {
        let d = x_prev.len();
        for i in 0..d {
            out[i] = c.c_in * z_minus_prev[i];
            out[d + i] = (x_prev[i] - self.precond.state_mean) / self.precond.state_scale;
        }
        out[2 * d] = c.c_noise;
    }

    /// Network output `F` plus hidden pre-activations.
    fn forward(&self, input: DVector<f64>) -> (DVector<f64>, Vec<DVector<f64>>) {
        let n_layers = self.weights.len();
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut h = input;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = w * &h + b;
            if l + 1 < n_layers {
                h = a.map(silu);
                pre.push(a);
            } else {
                h = a;
            }
        }
        (h, pre)
    }

    /// `(dF/d input)^T g`.
    fn backward_input(&self, pre: &[DVector<f64>], g: &DVector<f64>) -> DVector<f64> {
        let mut g = g.clone();
        for l in (0..self.weights.len()).rev() {
            g = self.weights[l].tr_mul(&g);
            if l > 0 {
                g.zip_apply(&pre[l - 1], |gi, a| *gi *= silu_grad(a));
            }
        }
        g
    }

    fn linearize_impl(&self, x_t: &DVector<f64>, x_prev: &DVector<f64>, t: f64) -> MlpLinearization<'_> {
        let d = self.dim();
        let c = self.coeffs(t);
        let dz = x_t / c.alpha - x_prev;
        let mut input = DVector::zeros(2 * d + 1);
        self.network_input(&dz, x_prev, &c, input.as_mut_slice());
        let (f, pre) = self.forward(input);
        let mean = x_prev + dz * c.c_skip + f * c.c_out;
        MlpLinearization {
            net: self,
            mean,
            pre,
            c,
        }
    }
}

struct MlpLinearization<'a> {
    net: &'a MlpDenoiser,
    mean: DVector<f64>,
    pre: Vec<DVector<f64>>,
    c: PrecondCoeffs,
}

impl Linearization for MlpLinearization<'_> {
    fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    fn vjp(&self, u: &DVector<f64>) -> DVector<f64> {
        let d = u.len();
        let g_in = self.net.backward_input(&self.pre, &(u * self.c.c_out));
        let mut out = u * self.c.c_skip;
        for i in 0..d {
            out[i] += self.c.c_in * g_in[i];
        }
        out / self.c.alpha
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn evaluate(&self, x_t: &DVector<f64>, x_prev: &DVector<f64>, t: f64) -> DVector<f64> {
        self.linearize_impl(x_t, x_prev, t).mean
    }

    fn vjp(&self, x_t: &DVector<f64>, x_prev: &DVector<f64>, t: f64, u: &DVector<f64>) -> DVector<f64> {
        self.linearize_impl(x_t, x_prev, t).vjp(u)
    }

    fn linearize<'a>(
        &'a self,
        x_t: &DVector<f64>,
        x_prev: &DVector<f64>,
        t: f64,
    ) -> Box<dyn Linearization + 'a> {
        Box::new(self.linearize_impl(x_t, x_prev, t))
    }
}
