//! Ground-truth systems and the observation model for twin experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Rng};

pub type StateVector = DVector<f64>;

/// Vector of `n` independent standard normal draws.
pub fn standard_normal(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `x_{k+1} = A x_k + w`, `w ~ N(0, Q)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianSsm {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_chol: DMatrix<f64>,
    x0: DVector<f64>,
    spectral_radius: f64,
}

impl LinearGaussianSsm {
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        let d = x0.len();
        if d == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        check_dim("transition matrix rows", d, a.nrows())?;
        check_dim("transition matrix cols", d, a.ncols())?;
        check_dim("noise covariance rows", d, q.nrows())?;
        check_dim("noise covariance cols", d, q.ncols())?;
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("transition noise covariance is not symmetric"));
        }
        let q_chol = q
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("transition noise covariance"))?
            .l();
        let spectral_radius = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        Ok(Self {
            a,
            q,
            q_chol,
            x0,
            spectral_radius,
        })
    }

    /// Pairwise-rotation dynamics: coordinates `(2i, 2i+1)` are rotated by
    /// `angle` and scaled by `decay`; `Q = noise_std^2 I`, `x0 = (1, ..., 1)`.
    ///
    /// With a stride-2 observation mask the rotation couples every unobserved
    /// coordinate to an observed one.
    pub fn coupled_rotation(dim: usize, decay: f64, angle: f64, noise_std: f64) -> Result<Self> {
        let mut a = DMatrix::zeros(dim, dim);
        let (c, s) = (angle.cos(), angle.sin());
        let mut i = 0;
        while i + 1 < dim {
            a[(i, i)] = decay * c;
            a[(i, i + 1)] = -decay * s;
            a[(i + 1, i)] = decay * s;
            a[(i + 1, i + 1)] = decay * c;
            i += 2;
        }
        if dim % 2 == 1 {
            a[(dim - 1, dim - 1)] = decay;
        }
        let q = DMatrix::identity(dim, dim) * (noise_std * noise_std);
        Self::new(a, q, DVector::from_element(dim, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    /// Largest eigenvalue modulus of `A`; above one the system is unstable.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn step(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        check_dim("state", self.dim(), x.len())?;
        let z = standard_normal(rng, self.dim());
        Ok(&self.a * x + &self.q_chol * z)
    }
}

/// Lorenz-96 with RK4 integration; one assimilation cycle spans
/// `cycle_length` integrator steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96System {
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
    pub cycle_length: usize,
    /// Std of additive Gaussian noise applied once per cycle (0 = deterministic).
    pub process_noise_std: f64,
}

impl Default for Lorenz96System {
    fn default() -> Self {
        Self {
            dim: 40,
            forcing: 8.0,
            dt: 0.01,
            cycle_length: 10,
            process_noise_std: 0.0,
        }
    }
}

impl Lorenz96System {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::Config("lorenz96 needs dim >= 4".into()));
        }
        if !(self.dt > 0.0) || self.cycle_length == 0 {
            return Err(Error::Config("lorenz96 needs dt > 0 and cycle_length >= 1".into()));
        }
        if !(self.process_noise_std >= 0.0) {
            return Err(Error::Config("lorenz96 process_noise_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Rest state `F` with a small kick on coordinate 0.
    pub fn default_initial_state(&self) -> DVector<f64> {
        let mut x = DVector::from_element(self.dim, self.forcing);
        x[0] += 0.01;
        x
    }

    pub fn tendency(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |i, _| {
            let ip1 = (i + 1) % n;
            let im1 = (i + n - 1) % n;
            let im2 = (i + n - 2) % n;
            (x[ip1] - x[im2]) * x[im1] - x[i] + self.forcing
        })
    }

    pub fn rk4_step(&self, x: &DVector<f64>, dt: f64) -> DVector<f64> {
        let k1 = self.tendency(x);
        let k2 = self.tendency(&(x + &k1 * (0.5 * dt)));
        let k3 = self.tendency(&(x + &k2 * (0.5 * dt)));
        let k4 = self.tendency(&(x + &k3 * dt));
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    /// Deterministic flow over `n` integrator steps of size `dt`.
    pub fn integrate(&self, x: &DVector<f64>, n: usize, dt: f64) -> DVector<f64> {
        let mut x = x.clone();
        for _ in 0..n {
            x = self.rk4_step(&x, dt);
        }
        x
    }

    pub fn step(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        check_dim("state", self.dim, x.len())?;
        let mut next = self.integrate(x, self.cycle_length, self.dt);
        if self.process_noise_std > 0.0 {
            next += standard_normal(rng, self.dim) * self.process_noise_std;
        }
        Ok(next)
    }
}

#[derive(Clone, Debug)]
pub enum System {
    LinearGaussian(LinearGaussianSsm),
    Lorenz96(Lorenz96System),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::LinearGaussian(s) => s.dim(),
            System::Lorenz96(s) => s.dim,
        }
    }

    /// One assimilation cycle of the truth.
    pub fn step_truth(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        match self {
            System::LinearGaussian(s) => s.step(x, rng),
            System::Lorenz96(s) => s.step(x, rng),
        }
    }
}

/// `y = H x + e`, `e ~ N(0, diag(noise_std^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    h: DMatrix<f64>,
    noise_std: DVector<f64>,
    observed: Option<Vec<usize>>,
}

impl ObservationModel {
    pub fn new(h: DMatrix<f64>, noise_std: DVector<f64>) -> Result<Self> {
        check_dim("observation noise", h.nrows(), noise_std.len())?;
        if h.nrows() == 0 || h.nrows() > h.ncols() {
            return Err(Error::Config(format!(
                "observation operator must have 1 <= m <= d rows, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("observation noise std must be finite and >= 0".into()));
        }
        Ok(Self {
            h,
            noise_std,
            observed: None,
        })
    }

    /// Observe every `stride`-th coordinate starting at 0.
    pub fn subsample(dim: usize, stride: usize, noise_std: f64) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("observation stride must be >= 1".into()));
        }
        let idx: Vec<usize> = (0..dim).step_by(stride).collect();
        let mut h = DMatrix::zeros(idx.len(), dim);
        for (r, &c) in idx.iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        let mut obs = Self::new(h, DVector::from_element(idx.len(), noise_std))?;
        obs.observed = Some(idx);
        Ok(obs)
    }

    pub fn identity(dim: usize, noise_std: f64) -> Result<Self> {
        Self::subsample(dim, 1, noise_std)
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }
    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn noise_std(&self) -> &DVector<f64> {
        &self.noise_std
    }
    pub fn noise_var(&self) -> DVector<f64> {
        self.noise_std.map(|s| s * s)
    }
    /// Diagonal of `Sigma_y` as a dense matrix.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_var())
    }

    /// State indices picked by a coordinate mask, when `H` is one.
    pub fn observed_indices(&self) -> Option<&[usize]> {
        self.observed.as_deref()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }

    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        self.h.tr_mul(v)
    }

    pub fn observe(&self, x: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        let z = standard_normal(rng, self.obs_dim());
        Ok(self.apply(x) + z.component_mul(&self.noise_std))
    }

    pub(crate) fn require_positive_noise(&self) -> Result<()> {
        if self.noise_std.iter().all(|s| *s > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain("observation noise std must be strictly positive".into()))
        }
    }
}

/// Truth trajectory `x^{0:K}` and observations `y^{1:K}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinDataset {
    pub truth: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

impl TwinDataset {
    pub fn steps(&self) -> usize {
        self.observations.len()
    }
}

/// Simulate a truth run from `x0` and observe every cycle.
///
/// For Lorenz-96, `spin_up` integrator steps are run (deterministically)
/// before recording, and the resulting state becomes `truth[0]`.
pub fn generate_truth_and_obs(
    system: &System,
    obs: &ObservationModel,
    x0: &DVector<f64>,
    steps: usize,
    spin_up: usize,
    seed: u64,
) -> Result<TwinDataset> {
    if steps == 0 {
        return Err(Error::Domain("twin experiment needs at least one step".into()));
    }
    check_dim("initial state", system.dim(), x0.len())?;
    check_dim("observation operator", system.dim(), obs.state_dim())?;
    let mut x = match system {
        System::Lorenz96(l96) if spin_up > 0 => l96.integrate(x0, spin_up, l96.dt),
        _ => x0.clone(),
    };
    let mut truth_rng = rng::stream(seed, rng::tag::TRUTH, 0, 0);
    let mut obs_rng = rng::stream(seed, rng::tag::TRUTH, 1, 0);
    let mut truth = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps);
    truth.push(x.clone());
    for _ in 0..steps {
        x = system.step_truth(&x, &mut truth_rng)?;
        observations.push(obs.observe(&x, &mut obs_rng)?);
        truth.push(x.clone());
    }
    Ok(TwinDataset {
        truth,
        observations,
    })
}
