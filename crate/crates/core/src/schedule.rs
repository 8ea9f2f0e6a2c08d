//! Diffusion noise schedules.
//!
//! A schedule maps diffusion time `t in [0, 1]` to the perturbation kernel
//! `x_t = alpha_t x + sigma_t eps` and to the drift/diffusion coefficients
//! `(f_t, g_t)` of the forward SDE, related by
//! `f_t = d log(alpha_t)/dt` and `g_t^2 = d(sigma_t^2)/dt - 2 f_t sigma_t^2`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    VarianceExploding,
    VariancePreserving,
}

/// How the sampler's time grid is spaced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridWarping {
    /// Uniform in `t`.
    Linear,
    /// Uniform in `log sigma_t`.
    LogSigma,
    /// Uniform in `sigma_t^(1/rho)`.
    Polynomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Linear beta(t) endpoints, variance-preserving only.
    pub beta_min: f64,
    pub beta_max: f64,
    pub warping: GridWarping,
    /// Exponent of the polynomial warping.
    pub rho: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::VarianceExploding,
            sigma_min: 0.02,
            sigma_max: 100.0,
            beta_min: 0.1,
            beta_max: 20.0,
            warping: GridWarping::LogSigma,
            rho: 7.0,
        }
    }
}

/// The coefficient quadruple at one diffusion time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub sigma: f64,
    pub drift_f: f64,
    pub diff_g: f64,
}

impl NoiseSchedule {
    pub fn variance_exploding(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let s = Self {
            sigma_min,
            sigma_max,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn variance_preserving(beta_min: f64, beta_max: f64, sigma_min: f64) -> Result<Self> {
        let s = Self {
            kind: ScheduleKind::VariancePreserving,
            beta_min,
            beta_max,
            sigma_min,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_warping(mut self, warping: GridWarping) -> Self {
        self.warping = warping;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma_min, self.sigma_max, self.beta_min, self.beta_max, self.rho]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("schedule parameters must be finite".into()));
        }
        if self.sigma_min <= 0.0 {
            return Err(Error::Config("schedule.sigma_min must be positive".into()));
        }
        match self.kind {
            ScheduleKind::VarianceExploding => {
                if self.sigma_max <= self.sigma_min {
                    return Err(Error::Config(
                        "schedule.sigma_max must exceed schedule.sigma_min".into(),
                    ));
                }
            }
            ScheduleKind::VariancePreserving => {
                if self.sigma_min >= 1.0 {
                    return Err(Error::Config(
                        "variance-preserving schedule needs sigma_min < 1".into(),
                    ));
                }
                if self.beta_min <= 0.0 || self.beta_max < self.beta_min {
                    return Err(Error::Config(
                        "schedule needs 0 < beta_min <= beta_max".into(),
                    ));
                }
            }
        }
        if self.warping == GridWarping::Polynomial && self.rho <= 0.0 {
            return Err(Error::Config("schedule.rho must be positive".into()));
        }
        Ok(())
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain(format!("diffusion time {t} outside [0, 1]")))
        }
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// Integrated beta, B(t) = int_0^t beta(s) ds.
    fn big_b(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    fn beta(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    // Infallible internals for callers that already validated t.

    pub(crate) fn alpha_at(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => 1.0,
            ScheduleKind::VariancePreserving => (-0.5 * self.big_b(t)).exp(),
        }
    }

    pub(crate) fn sigma_at(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => self.sigma_min * (self.log_ratio() * t).exp(),
            ScheduleKind::VariancePreserving => {
                // sigma_t^2 = 1 - (1 - sigma_min^2) alpha_t^2
                let a2 = (-self.big_b(t)).exp();
                (1.0 - (1.0 - self.sigma_min * self.sigma_min) * a2).sqrt()
            }
        }
    }

    pub(crate) fn coefficients_at(&self, t: f64) -> Coefficients {
        let alpha = self.alpha_at(t);
        let sigma = self.sigma_at(t);
        let (drift_f, g2) = match self.kind {
            ScheduleKind::VarianceExploding => (0.0, 2.0 * sigma * sigma * self.log_ratio()),
            ScheduleKind::VariancePreserving => (-0.5 * self.beta(t), self.beta(t)),
        };
        Coefficients {
            alpha,
            sigma,
            drift_f,
            diff_g: g2.sqrt(),
        }
    }

    /// `(alpha_t, sigma_t, f_t, g_t)` at diffusion time `t`.
    pub fn coefficients(&self, t: f64) -> Result<Coefficients> {
        Self::check_t(t)?;
        Ok(self.coefficients_at(t))
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.sigma_at(t))
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.alpha_at(t))
    }

    /// Terminal noise scale sigma_1.
    pub fn sigma_terminal(&self) -> f64 {
        self.sigma_at(1.0)
    }

    /// `int_{t_lo}^{t_hi} g_s^2 ds`, the variance injected by the diffusion term
    /// over one solver interval.
    pub fn integrated_diffusion(&self, t_lo: f64, t_hi: f64) -> f64 {
        match self.kind {
            ScheduleKind::VarianceExploding => {
                let (a, b) = (self.sigma_at(t_lo), self.sigma_at(t_hi));
                b * b - a * a
            }
            ScheduleKind::VariancePreserving => self.big_b(t_hi) - self.big_b(t_lo),
        }
    }

    /// Inverse of `t -> sigma_t` on `[sigma_0, sigma_1]`.
    pub fn time_of_sigma(&self, sigma: f64) -> f64 {
        let t = match self.kind {
            ScheduleKind::VarianceExploding => (sigma / self.sigma_min).ln() / self.log_ratio(),
            ScheduleKind::VariancePreserving => {
                let a2 = (1.0 - sigma * sigma) / (1.0 - self.sigma_min * self.sigma_min);
                let b = -a2.ln();
                let db = self.beta_max - self.beta_min;
                if db.abs() < 1e-14 {
                    b / self.beta_min
                } else {
                    (-self.beta_min + (self.beta_min * self.beta_min + 2.0 * db * b).sqrt()) / db
                }
            }
        };
        t.clamp(0.0, 1.0)
    }

    /// Short content hash of the parameters that affect training targets.
    pub fn hash(&self) -> String {
        let canonical = format!(
            "{:?}|{:e}|{:e}|{:e}|{:e}",
            self.kind, self.sigma_min, self.sigma_max, self.beta_min, self.beta_max
        );
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Decreasing grid of `n_steps` diffusion times from 1 to 0.
    pub fn time_grid(&self, n_steps: usize) -> Result<Vec<f64>> {
        if n_steps < 2 {
            return Err(Error::Domain(format!(
                "time grid needs at least 2 points, got {n_steps}"
            )));
        }
        self.validate()?;
        let last = (n_steps - 1) as f64;
        let (s0, s1) = (self.sigma_at(0.0), self.sigma_at(1.0));
        let mut grid: Vec<f64> = (0..n_steps)
            .map(|i| {
                let frac = i as f64 / last;
                match self.warping {
                    GridWarping::Linear => 1.0 - frac,
                    GridWarping::LogSigma => {
                        let s = (s1.ln() + frac * (s0.ln() - s1.ln())).exp();
                        self.time_of_sigma(s)
                    }
                    GridWarping::Polynomial => {
                        let inv = 1.0 / self.rho;
                        let s = (s1.powf(inv) + frac * (s0.powf(inv) - s1.powf(inv)))
                            .powf(self.rho);
                        self.time_of_sigma(s)
                    }
                }
            })
            .collect();
        grid[0] = 1.0;
        grid[n_steps - 1] = 0.0;
        if grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Domain(
                "time grid is not strictly decreasing; reduce n_steps".into(),
            ));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd(f: impl Fn(f64) -> f64, t: f64) -> f64 {
        let h = 1e-6;
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn ve_boundaries() {
        let s = NoiseSchedule::variance_exploding(0.02, 100.0).unwrap();
        let c0 = s.coefficients(0.0).unwrap();
        assert_eq!(c0.alpha, 1.0);
        assert_relative_eq!(c0.sigma, 0.02, max_relative = 1e-14);
        assert_eq!(c0.drift_f, 0.0);
        let c1 = s.coefficients(1.0).unwrap();
        assert_relative_eq!(c1.sigma, 100.0, max_relative = 1e-12);
        assert_eq!(c1.alpha, 1.0);
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let s = NoiseSchedule::default();
        assert!(matches!(s.coefficients(1.5), Err(Error::Domain(_))));
        assert!(matches!(s.coefficients(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn ve_g_matches_finite_difference_at_half() {
        let s = NoiseSchedule::variance_exploding(0.02, 100.0).unwrap();
        let c = s.coefficients(0.5).unwrap();
        let oracle = fd(|t| s.sigma_at(t).powi(2), 0.5);
        assert_relative_eq!(c.diff_g * c.diff_g, oracle, max_relative = 1e-6);
    }

    #[test]
    fn consistency_relation_holds_for_both_kinds() {
        let schedules = [
            NoiseSchedule::variance_exploding(0.02, 100.0).unwrap(),
            NoiseSchedule::variance_exploding(0.5, 3.0).unwrap(),
            NoiseSchedule::variance_preserving(0.1, 20.0, 0.02).unwrap(),
            NoiseSchedule::variance_preserving(1.0, 1.0, 0.1).unwrap(),
        ];
        for s in schedules {
            for i in 1..20 {
                let t = i as f64 / 20.0;
                let c = s.coefficients(t).unwrap();
                let f_fd = fd(|t| s.alpha_at(t).ln(), t);
                let s2_fd = fd(|t| s.sigma_at(t).powi(2), t);
                let g2_fd = s2_fd - 2.0 * c.drift_f * c.sigma * c.sigma;
                assert!((c.drift_f - f_fd).abs() <= 1e-5 * (1.0 + f_fd.abs()), "{s:?} t={t}");
                assert!(
                    (c.diff_g.powi(2) - g2_fd).abs() <= 1e-5 * (1.0 + g2_fd.abs()),
                    "{s:?} t={t}"
                );
            }
        }
    }

    #[test]
    fn sigma_monotone_and_vp_snr_monotone() {
        let vp = NoiseSchedule::variance_preserving(0.1, 20.0, 0.02).unwrap();
        let ve = NoiseSchedule::default();
        let mut prev = (0.0, 0.0, 0.0);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let ratio = vp.sigma_at(t).powi(2) / vp.alpha_at(t).powi(2);
            let cur = (ve.sigma_at(t), vp.sigma_at(t), ratio);
            if i > 0 {
                assert!(cur.0 > prev.0 && cur.1 > prev.1 && cur.2 > prev.2);
            }
            assert!(vp.alpha_at(t) > 0.0 && vp.alpha_at(t) <= 1.0);
            prev = cur;
        }
        assert_relative_eq!(vp.sigma_at(0.0), 0.02, max_relative = 1e-12);
    }

    #[test]
    fn time_of_sigma_inverts() {
        for s in [
            NoiseSchedule::default(),
            NoiseSchedule::variance_preserving(0.1, 20.0, 0.02).unwrap(),
        ] {
            for i in 0..=10 {
                let t = i as f64 / 10.0;
                assert_relative_eq!(s.time_of_sigma(s.sigma_at(t)), t, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn grid_endpoints_and_monotonicity() {
        let lin = NoiseSchedule::default().with_warping(GridWarping::Linear);
        assert_eq!(lin.time_grid(2).unwrap(), vec![1.0, 0.0]);
        for warping in [GridWarping::Linear, GridWarping::LogSigma, GridWarping::Polynomial] {
            for s in [
                NoiseSchedule::default().with_warping(warping),
                NoiseSchedule::variance_preserving(0.1, 20.0, 0.02)
                    .unwrap()
                    .with_warping(warping),
            ] {
                let g = s.time_grid(40).unwrap();
                assert_eq!(g.len(), 40);
                assert_eq!(g[0], 1.0);
                assert_eq!(g[39], 0.0);
                assert!(g.windows(2).all(|w| w[1] < w[0]));
            }
        }
        assert!(matches!(NoiseSchedule::default().time_grid(1), Err(Error::Domain(_))));
    }

    #[test]
    fn log_sigma_grid_is_geometric_in_sigma() {
        let s = NoiseSchedule::default();
        let g = s.time_grid(40).unwrap();
        let ratios: Vec<f64> = g
            .windows(2)
            .map(|w| s.sigma_at(w[0]) / s.sigma_at(w[1]))
            .collect();
        for r in &ratios {
            assert_relative_eq!(*r, ratios[0], max_relative = 1e-9);
        }
    }

    #[test]
    fn integrated_diffusion_matches_quadrature() {
        for s in [
            NoiseSchedule::default(),
            NoiseSchedule::variance_preserving(0.1, 20.0, 0.02).unwrap(),
        ] {
            let (lo, hi) = (0.3, 0.45);
            let n = 2000;
            let h = (hi - lo) / n as f64;
            // Simpson
            let mut acc = 0.0;
            for i in 0..=n {
                let t = lo + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * s.coefficients_at(t).diff_g.powi(2);
            }
            acc *= h / 3.0;
            assert_relative_eq!(s.integrated_diffusion(lo, hi), acc, max_relative = 1e-9);
        }
    }

    #[test]
    fn hash_tracks_parameters() {
        let a = NoiseSchedule::default();
        let b = NoiseSchedule::variance_exploding(0.02, 80.0).unwrap();
        assert_eq!(a.hash(), NoiseSchedule::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.with_warping(GridWarping::Linear).hash());
    }
}
