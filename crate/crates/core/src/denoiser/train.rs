//! Denoising score-matching training for [`MlpDenoiser`].

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{silu, silu_grad, MlpDenoiser, Preconditioning};
use super::Denoiser;
use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Rng};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSampling {
    /// `sigma_t` log-uniform on `[sigma_0, sigma_1]`.
    LogUniform,
    /// `t` uniform on `[0, 1]`.
    UniformTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// `lambda = (s^2 + sd^2) / (s sd)^2`, unit-variance targets for `F`.
    Edm,
    /// Plain squared error on the denoised output.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub hidden: Vec<usize>,
    pub noise_sampling: NoiseSampling,
    pub loss_weighting: LossWeighting,
    pub heldout_fraction: f64,
    /// Preconditioning scale; estimated from the data when absent.
    pub sigma_data: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 256,
            learning_rate: 2e-3,
            final_lr_fraction: 0.02,
            hidden: vec![256, 256],
            noise_sampling: NoiseSampling::LogUniform,
            loss_weighting: LossWeighting::Edm,
            heldout_fraction: 0.1,
            sigma_data: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("train needs batch_size >= 1 and learning_rate > 0".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("train.heldout_fraction must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("train.final_lr_fraction must be in [0, 1]".into()));
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(Error::Config("train.hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean weighted training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub heldout_loss: f64,
    /// Held-out loss of the predictor `x_t / alpha_t`.
    pub trivial_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Noisy training examples in network coordinates, one per column.
struct Batch {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    /// Network output under which `D = x_t / alpha_t`.
    trivial: DMatrix<f64>,
    weights: Vec<f64>,
}

fn draw_time(schedule: &NoiseSchedule, law: NoiseSampling, r: &mut Rng) -> f64 {
    let u: f64 = r.random();
    match law {
        NoiseSampling::UniformTime => u,
        NoiseSampling::LogUniform => {
            let (s0, s1) = (schedule.sigma_at(0.0), schedule.sigma_at(1.0));
            schedule.time_of_sigma((s0.ln() + u * (s1.ln() - s0.ln())).exp())
        }
    }
}

fn make_batch(
    net: &MlpDenoiser,
    pairs: &[(DVector<f64>, DVector<f64>)],
    idx: &[usize],
    cfg: &TrainConfig,
    r: &mut Rng,
) -> Batch {
    let d = net.dim();
    let b = idx.len();
    let mut inputs = DMatrix::zeros(2 * d + 1, b);
    let mut targets = DMatrix::zeros(d, b);
    let mut trivial = DMatrix::zeros(d, b);
    let mut weights = Vec::with_capacity(b);
    for (col, &i) in idx.iter().enumerate() {
        let (prev, next) = &pairs[i];
        let t = draw_time(&net.schedule, cfg.noise_sampling, r);
        let c = net.coeffs(t);
        let sigma = net.schedule.sigma_at(t);
        let eps = DVector::from_iterator(d, (0..d).map(|_| r.sample::<f64, _>(StandardNormal)));
        let x_t = next * c.alpha + eps * sigma;
        let dz = &x_t / c.alpha - prev;
        net.network_input(&dz, prev, &c, inputs.column_mut(col).as_mut_slice());
        let target = (next - prev - &dz * c.c_skip) / c.c_out;
        targets.set_column(col, &target);
        trivial.set_column(col, &(dz * ((1.0 - c.c_skip) / c.c_out)));
        weights.push(match cfg.loss_weighting {
            LossWeighting::Edm => 1.0,
            LossWeighting::Unit => c.c_out * c.c_out,
        });
    }
    Batch {
        inputs,
        targets,
        trivial,
        weights,
    }
}

fn add_bias(a: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in a.column_iter_mut() {
        col += b;
    }
}

/// Mean weighted loss of the batch and, if requested, flat parameter gradients.
fn loss_and_grad(net: &MlpDenoiser, batch: &Batch, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let n_layers = net.weights.len();
    let bsz = batch.inputs.ncols();
    let d = net.dim();
    let mut acts = Vec::with_capacity(n_layers + 1);
    let mut pres = Vec::with_capacity(n_layers);
    acts.push(batch.inputs.clone());
    for l in 0..n_layers {
        let mut a = &net.weights[l] * &acts[l];
        add_bias(&mut a, &net.biases[l]);
        if l + 1 < n_layers {
            acts.push(a.map(silu));
            pres.push(a);
        } else {
            acts.push(a);
        }
    }
    let mut resid = &acts[n_layers] - &batch.targets;
    let norm = 1.0 / (bsz * d) as f64;
    let mut loss = 0.0;
    for (j, mut col) in resid.column_iter_mut().enumerate() {
        loss += batch.weights[j] * col.norm_squared();
        col *= 2.0 * norm * batch.weights[j];
    }
    loss *= norm;
    if !want_grad {
        return (loss, None);
    }
    let mut grads_w = vec![DMatrix::zeros(0, 0); n_layers];
    let mut grads_b = vec![DVector::zeros(0); n_layers];
    let mut g = resid;
    for l in (0..n_layers).rev() {
        grads_w[l] = &g * acts[l].transpose();
        grads_b[l] = g.column_sum();
        if l > 0 {
            let mut prev = net.weights[l].tr_mul(&g);
            prev.zip_apply(&pres[l - 1], |gi, a| *gi *= silu_grad(a));
            g = prev;
        }
    }
    let mut flat = Vec::with_capacity(net.n_params());
    for (w, b) in grads_w.iter().zip(&grads_b) {
        for r in 0..w.nrows() {
            flat.extend(w.row(r).iter());
        }
        flat.extend(b.iter());
    }
    (loss, Some(flat))
}

fn set_params(net: &mut MlpDenoiser, params: &[f64]) {
    let mut off = 0;
    for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
        let (rows, cols) = w.shape();
        for r in 0..rows {
            for c in 0..cols {
                w[(r, c)] = params[off + r * cols + c];
            }
        }
        off += rows * cols;
        b.copy_from_slice(&params[off..off + rows]);
        off += rows;
    }
}

/// Held-out losses of the network and of the trivial predictor `x_t / alpha_t`,
/// both under the configured weighting.
fn heldout_losses(
    net: &MlpDenoiser,
    pairs: &[(DVector<f64>, DVector<f64>)],
    idx: &[usize],
    cfg: &TrainConfig,
) -> (f64, f64) {
    const DRAWS: usize = 4;
    let mut r = rng::stream(cfg.seed, rng::tag::TRAIN, 3, 0);
    let (mut model, mut trivial, mut n) = (0.0, 0.0, 0.0);
    for _ in 0..DRAWS {
        for chunk in idx.chunks(cfg.batch_size) {
            let batch = make_batch(net, pairs, chunk, cfg, &mut r);
            let w = chunk.len() as f64;
            model += loss_and_grad(net, &batch, false).0 * w;
            trivial += weighted_mse(&batch.trivial, &batch) * w;
            n += w;
        }
    }
    (model / n, trivial / n)
}

fn weighted_mse(out: &DMatrix<f64>, batch: &Batch) -> f64 {
    let resid = out - &batch.targets;
    let total: f64 = resid
        .column_iter()
        .zip(&batch.weights)
        .map(|(c, w)| w * c.norm_squared())
        .sum();
    total / resid.len() as f64
}

/// Fit an MLP denoiser to transition pairs `(x^k, x^{k+1})`.
pub fn train_denoiser(
    pairs: &[(DVector<f64>, DVector<f64>)],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(MlpDenoiser, TrainReport)> {
    cfg.validate()?;
    schedule.validate()?;
    let mut precond = Preconditioning::from_pairs(pairs)?;
    if let Some(sd) = cfg.sigma_data {
        precond.sigma_data = sd;
    }
    let d = pairs[0].0.len();
    for (a, b) in pairs {
        check_dim("training pair (x^k)", d, a.len())?;
        check_dim("training pair (x^k+1)", d, b.len())?;
    }
    let mut widths = vec![2 * d + 1];
    widths.extend(&cfg.hidden);
    widths.push(d);
    let mut init_rng = rng::stream(cfg.seed, rng::tag::TRAIN, 0, 0);
    let mut net = MlpDenoiser::new_random(widths, precond, *schedule, &mut init_rng)?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, rng::tag::TRAIN, 1, 0));
    let n_held = ((pairs.len() as f64) * cfg.heldout_fraction).floor() as usize;
    let (held, train) = if n_held == 0 || n_held == pairs.len() {
        (order.clone(), order)
    } else {
        let train = order[n_held..].to_vec();
        order.truncate(n_held);
        (order, train)
    };

    let mut report = TrainReport::default();
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1) as f64;
    let mut step = 0usize;
    let mut data_rng = rng::stream(cfg.seed, rng::tag::TRAIN, 2, 0);
    let mut shuffled = train.clone();
    for epoch in 0..cfg.epochs {
        shuffled.shuffle(&mut data_rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in shuffled.chunks(cfg.batch_size).enumerate() {
            let batch = make_batch(&net, pairs, chunk, cfg, &mut data_rng);
            let (loss, grads) = loss_and_grad(&net, &batch, true);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            let progress = step as f64 / total_steps;
            let lr_scale = cfg.final_lr_fraction
                + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            adam.update(&mut params, &grads.expect("requested"), cfg.learning_rate * lr_scale);
            set_params(&mut net, &params);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / train.len() as f64);
    }
    let (model, trivial) = heldout_losses(&net, pairs, &held, cfg);
    report.heldout_loss = model;
    report.trivial_loss = trivial;
    Ok((net, report))
}
