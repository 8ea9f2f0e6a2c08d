//! Run configuration: one TOML document with a section per module.
//!
//! Every key has a default, so an empty file is a valid configuration
//! (the Lorenz-96 twin experiment). Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::denoiser::TrainConfig;
use crate::dynamics::{LinearGaussianSsm, Lorenz96System, ObservationModel, System};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::guidance::GuidanceConfig;
use crate::sampler::SamplerConfig;
use crate::schedule::{GridWarping, NoiseSchedule, ScheduleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz96,
    LinearGaussian,
}

/// `[schedule]`. `steps`, when present, overrides `sampler.steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub warping: GridWarping,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = NoiseSchedule::default();
        Self {
            kind: s.kind,
            sigma_min: s.sigma_min,
            sigma_max: s.sigma_max,
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            warping: s.warping,
            rho: s.rho,
            steps: None,
        }
    }
}

impl ScheduleSection {
    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            kind: self.kind,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
            warping: self.warping,
            rho: self.rho,
        }
    }
}

/// `[system]`. Keys not used by the selected kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub kind: SystemKind,
    pub dim: usize,
    /// Lorenz-96: additive noise per cycle. Linear-Gaussian: `Q = std^2 I`.
    pub process_noise_std: f64,
    pub forcing: f64,
    pub dt: f64,
    pub cycle_length: usize,
    pub decay: f64,
    pub angle: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let l96 = Lorenz96System::default();
        Self {
            kind: SystemKind::Lorenz96,
            dim: l96.dim,
            process_noise_std: 0.2,
            forcing: l96.forcing,
            dt: l96.dt,
            cycle_length: l96.cycle_length,
            decay: 0.95,
            angle: 0.3,
        }
    }
}

impl SystemSection {
    pub fn build(&self) -> Result<System> {
        match self.kind {
            SystemKind::Lorenz96 => {
                let l96 = Lorenz96System {
                    dim: self.dim,
                    forcing: self.forcing,
                    dt: self.dt,
                    cycle_length: self.cycle_length,
                    process_noise_std: self.process_noise_std,
                };
                l96.validate()?;
                Ok(System::Lorenz96(l96))
            }
            SystemKind::LinearGaussian => {
                if !(self.process_noise_std > 0.0) {
                    return Err(Error::Config("system.process_noise_std must be > 0 for linear-gaussian".into()));
                }
                Ok(System::LinearGaussian(LinearGaussianSsm::coupled_rotation(
                    self.dim,
                    self.decay,
                    self.angle,
                    self.process_noise_std,
                )?))
            }
        }
    }
}

/// `[observation]`: every `stride`-th coordinate, starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationSection {
    pub stride: usize,
    pub noise_std: f64,
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self {
            stride: 4,
            noise_std: 0.1,
        }
    }
}

/// `[experiment]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Assimilation cycles `K`.
    pub steps: usize,
    /// Lorenz-96 integrator steps discarded before `x^0`.
    pub spin_up: usize,
    /// Length of the separate trajectory used to train the denoiser.
    pub train_steps: usize,
    pub seed: u64,
    /// Step and observed coordinate of the posterior-predictive check.
    pub ppc_step: usize,
    pub ppc_coordinate: usize,
    /// Write ensemble snapshots every this many steps (0 = never).
    pub snapshot_every: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            steps: 40,
            spin_up: 1000,
            train_steps: 50_000,
            seed: 0,
            ppc_step: 1,
            ppc_coordinate: 0,
            snapshot_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub schedule: ScheduleSection,
    pub system: SystemSection,
    pub observation: ObservationSection,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
}

impl Config {
    /// Parse and validate. Errors name the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_hint(text, e.span())))?;
        if let Some(steps) = cfg.schedule.steps.take() {
            cfg.sampler.n_steps = steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.sampler.validate()?;
        self.guidance.validate()?;
        self.filter.validate()?;
        self.train.validate()?;
        self.system.build()?;
        self.observation_model()?;
        if self.experiment.steps == 0 {
            return Err(Error::Config("experiment.steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule.schedule()
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        if self.observation.stride == 0 {
            return Err(Error::Config("observation.stride must be >= 1".into()));
        }
        if !(self.observation.noise_std > 0.0) {
            return Err(Error::Config("observation.noise_std must be > 0".into()));
        }
        ObservationModel::subsample(self.system.dim, self.observation.stride, self.observation.noise_std)
    }

    /// Apply a `--seed` override to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = seed;
        self.filter.seed = seed;
        self.train.seed = seed;
        self
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) if r.start < text.len() => {
            let line = text[..r.start].lines().count().max(1);
            format!(" (line {line}: `{}`)", text[r].trim())
        }
        _ => String::new(),
    }
}
