//! Skill, spread, posterior-predictive checks and weak-convergence errors.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dynamics::ObservationModel;
use crate::error::{check_dim, Error, Result};

fn require_subset(subset: &[usize], dim: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Domain("coordinate subset is empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= dim) {
        return Err(Error::Domain(format!("coordinate {bad} out of range for dimension {dim}")));
    }
    Ok(())
}

fn require_members(ensemble: &[DVector<f64>], min: usize) -> Result<usize> {
    if ensemble.len() < min {
        return Err(Error::Domain(format!(
            "ensemble needs at least {min} members, got {}",
            ensemble.len()
        )));
    }
    let d = ensemble[0].len();
    for m in ensemble {
        check_dim("ensemble member", d, m.len())?;
    }
    Ok(d)
}

pub fn ensemble_mean(ensemble: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(ensemble[0].len());
    for x in ensemble {
        m += x;
    }
    m / ensemble.len() as f64
}

/// RMSE of the ensemble mean against the truth over `subset`.
pub fn skill(ensemble: &[DVector<f64>], truth: &DVector<f64>, subset: &[usize]) -> Result<f64> {
    let d = require_members(ensemble, 1)?;
    check_dim("truth", d, truth.len())?;
    require_subset(subset, d)?;
    let mean = ensemble_mean(ensemble);
    let sq: f64 = subset.iter().map(|&i| (mean[i] - truth[i]).powi(2)).sum();
    Ok((sq / subset.len() as f64).sqrt())
}

/// Square root of the mean over `subset` of the unbiased per-coordinate variance.
pub fn spread(ensemble: &[DVector<f64>], subset: &[usize]) -> Result<f64> {
    let d = require_members(ensemble, 2)?;
    require_subset(subset, d)?;
    let n = ensemble.len() as f64;
    let mean = ensemble_mean(ensemble);
    let total: f64 = subset
        .iter()
        .map(|&i| ensemble.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0))
        .sum();
    Ok((total / subset.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveCheck {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Predictive CDF at the observed value.
    pub rank: f64,
    pub observed: f64,
}

pub const PPC_GRID_POINTS: usize = 512;
pub const PPC_MIN_SAMPLES: usize = 32;

/// Predictive distribution of observation component `coord`: the equal-weight
/// mixture of `N((H x_j)_coord, sigma_coord^2)` over conditional samples `x_j`.
pub fn posterior_predictive_check(
    samples: &[DVector<f64>],
    obs: &ObservationModel,
    y: &DVector<f64>,
    coord: usize,
) -> Result<PredictiveCheck> {
    let d = require_members(samples, PPC_MIN_SAMPLES)?;
    check_dim("samples", obs.state_dim(), d)?;
    check_dim("observation", obs.obs_dim(), y.len())?;
    if coord >= obs.obs_dim() {
        return Err(Error::Domain(format!("observation component {coord} out of range")));
    }
    let sd = obs.noise_std()[coord];
    if !(sd > 0.0) {
        return Err(Error::Domain("predictive check needs positive observation noise".into()));
    }
    let row = obs.operator().row(coord);
    let centres: Vec<f64> = samples.iter().map(|x| (row * x)[0]).collect();
    let n = centres.len() as f64;
    let mean = centres.iter().sum::<f64>() / n;
    let var = sd * sd + centres.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    let half = 5.0 * var.sqrt();
    let kernels: Vec<Normal> = centres
        .iter()
        .map(|&c| Normal::new(c, sd).expect("positive std"))
        .collect();
    let grid: Vec<f64> = (0..PPC_GRID_POINTS)
        .map(|i| mean - half + 2.0 * half * i as f64 / (PPC_GRID_POINTS - 1) as f64)
        .collect();
    let density = grid
        .iter()
        .map(|&g| kernels.iter().map(|k| k.pdf(g)).sum::<f64>() / n)
        .collect();
    let observed = y[coord];
    let rank = kernels.iter().map(|k| k.cdf(observed)).sum::<f64>() / n;
    Ok(PredictiveCheck {
        grid,
        density,
        rank,
        observed,
    })
}

/// `|sum_i w_i g(x_i) - oracle|`.
pub fn weak_convergence_error(
    particles: &[DVector<f64>],
    weights: &[f64],
    g: impl Fn(&DVector<f64>) -> f64,
    oracle: f64,
) -> f64 {
    let est: f64 = particles.iter().zip(weights).map(|(x, w)| w * g(x)).sum();
    (est - oracle).abs()
}

/// One-sample Kolmogorov–Smirnov statistic against `U(0, 1)`.
pub fn ks_statistic_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 5% critical value of the KS statistic.
pub fn ks_critical_value_5pct(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    Observed,
    Unobserved,
}

/// One row of the per-step metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub group: Group,
    pub skill: f64,
    pub spread: f64,
    pub ess: Option<f64>,
    pub alpha: Option<f64>,
    pub clamp: Option<String>,
}

/// Coordinate groups: everything, the masked coordinates, and the rest.
/// Groups that would be empty are skipped.
pub fn coordinate_groups(obs: &ObservationModel) -> Vec<(Group, Vec<usize>)> {
    let d = obs.state_dim();
    let mut groups = vec![(Group::All, (0..d).collect::<Vec<_>>())];
    if let Some(idx) = obs.observed_indices() {
        let unobs: Vec<usize> = (0..d).filter(|i| !idx.contains(i)).collect();
        groups.push((Group::Observed, idx.to_vec()));
        if !unobs.is_empty() {
            groups.push((Group::Unobserved, unobs));
        }
    }
    groups
}

pub fn grouped_rows(
    step: usize,
    ensemble: &[DVector<f64>],
    truth: &DVector<f64>,
    groups: &[(Group, Vec<usize>)],
    ess: Option<f64>,
    alpha: Option<f64>,
    clamp: Option<String>,
) -> Result<Vec<MetricRow>> {
    groups
        .iter()
        .map(|(g, idx)| {
            Ok(MetricRow {
                step,
                group: *g,
                skill: skill(ensemble, truth, idx)?,
                spread: if ensemble.len() >= 2 { spread(ensemble, idx)? } else { 0.0 },
                ess,
                alpha,
                clamp: clamp.clone(),
            })
        })
        .collect()
}
