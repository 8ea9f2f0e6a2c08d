use std::fs;
use std::path::{Path, PathBuf};

use diffda::config::{Config, ExperimentSection, ObservationSection, SystemKind, SystemSection};
use diffda::denoiser::{load_checkpoint, save_checkpoint, train_denoiser, AnalyticLgDenoiser, Denoiser};
use diffda::dynamics::{generate_truth_and_obs, System};
use diffda::filter::{faapf_run, proposal_samples, unconditional_ensemble_run};
use diffda::io::{self, Manifest};
use diffda::metrics::{coordinate_groups, grouped_rows, posterior_predictive_check, Group, MetricRow, PPC_MIN_SAMPLES};
use diffda::Error;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::plot::{self, Series};
use crate::{Baseline, DenoiserKind};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_SHAPE: u8 = 4;
pub const EXIT_DATA: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: EXIT_CONFIG, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Checkpoint(_) => EXIT_CONFIG,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound) => {
                EXIT_MISSING
            }
            Error::DimensionMismatch { .. } => EXIT_SHAPE,
            Error::Data(_) | Error::Csv(_) | Error::Json(_) => EXIT_DATA,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn missing(path: &Path) -> CliError {
    CliError {
        code: EXIT_MISSING,
        message: format!("missing input {}", path.display()),
    }
}

fn require(path: &Path) -> CliResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(path))
    }
}

fn shape(what: &str, expected: usize, found: usize) -> CliError {
    CliError {
        code: EXIT_SHAPE,
        message: format!("{what}: expected dimension {expected}, found {found}"),
    }
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<Config> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| missing(p))?;
            Config::from_toml_str(&text)?
        }
        None => Config::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Sidecar describing a generated dataset.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    system: SystemSection,
    observation: ObservationSection,
    experiment: ExperimentSection,
    state_dim: usize,
    obs_dim: usize,
    observed_indices: Vec<usize>,
}

/// Extra integrator steps separating the training run from the truth run.
const TRAIN_OFFSET: usize = 5000;

fn initial_state(system: &System) -> DVector<f64> {
    match system {
        System::Lorenz96(l96) => l96.default_initial_state(),
        System::LinearGaussian(ssm) => ssm.x0().clone(),
    }
}

fn finish(manifest: &mut Manifest, out: &Path, name: &str, outputs: &[PathBuf]) -> CliResult {
    for p in outputs {
        manifest.add_output(p)?;
    }
    manifest.write(&out.join(format!("manifest-{name}.json")))?;
    Ok(())
}

pub fn generate(cfg: &Config, out: &Path) -> CliResult {
    let system = cfg.system.build()?;
    let obs = cfg.observation_model()?;
    let ex = &cfg.experiment;
    let x0 = initial_state(&system);
    let data = generate_truth_and_obs(&system, &obs, &x0, ex.steps, ex.spin_up, ex.seed)?;
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut outputs = vec![out.join("truth.csv"), out.join("observations.csv"), out.join("dataset.json")];
    io::write_states_csv(&outputs[0], "x", 0, &data.truth)?;
    io::write_states_csv(&outputs[1], "y", 1, &data.observations)?;
    let meta = DatasetMeta {
        system: cfg.system.clone(),
        observation: cfg.observation.clone(),
        experiment: ex.clone(),
        state_dim: obs.state_dim(),
        obs_dim: obs.obs_dim(),
        observed_indices: obs.observed_indices().map(<[usize]>::to_vec).unwrap_or_default(),
    };
    fs::write(&outputs[2], serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n").map_err(Error::from)?;
    if ex.train_steps > 0 {
        let train = generate_truth_and_obs(
            &system,
            &obs,
            &x0,
            ex.train_steps,
            ex.spin_up + TRAIN_OFFSET,
            ex.seed.wrapping_add(1),
        )?;
        let p = out.join("train.csv");
        io::write_states_csv(&p, "x", 0, &train.truth)?;
        outputs.push(p);
    }
    let mut manifest = Manifest::new("generate", ex.seed, cfg)?;
    finish(&mut manifest, out, "generate", &outputs)
}

fn check_state_dim(cfg: &Config, what: &str, rows: &[DVector<f64>]) -> CliResult {
    let d = cfg.system.dim;
    match rows.iter().find(|r| r.len() != d) {
        Some(r) => Err(shape(what, d, r.len())),
        None => Ok(()),
    }
}

pub fn train(cfg: &Config, out: &Path) -> CliResult {
    let path = out.join("train.csv");
    let (_, states) = io::read_states_csv(require(&path)?)?;
    check_state_dim(cfg, "train.csv", &states)?;
    if states.len() < 2 {
        return Err(CliError {
            code: EXIT_DATA,
            message: "train.csv needs at least two states".into(),
        });
    }
    let pairs: Vec<_> = states.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    let mut train_cfg = cfg.train.clone();
    // Chaotic transitions are far from affine over one cycle, so the affine
    // residual overstates the conditional spread; the injected noise is the
    // better scale when it is known.
    if train_cfg.sigma_data.is_none() && cfg.system.kind == SystemKind::Lorenz96 && cfg.system.process_noise_std > 0.0 {
        train_cfg.sigma_data = Some(cfg.system.process_noise_std);
    }
    let (net, report) = train_denoiser(&pairs, &cfg.schedule(), &train_cfg)?;
    let ckpt = out.join("denoiser.ckpt");
    save_checkpoint(&net, &ckpt)?;
    let losses = out.join("train_loss.csv");
    io::write_xy_csv(
        &losses,
        ["epoch", "loss"],
        report.epoch_losses.iter().enumerate().map(|(i, l)| ((i + 1) as f64, *l)),
    )?;
    let summary = out.join("train_report.json");
    let json = serde_json::json!({
        "heldout_loss": report.heldout_loss,
        "trivial_loss": report.trivial_loss,
        "sigma_data": net.preconditioning().sigma_data,
    });
    fs::write(&summary, serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n").map_err(Error::from)?;
    eprintln!(
        "held-out loss {:.4} (trivial predictor {:.4})",
        report.heldout_loss, report.trivial_loss
    );
    let mut manifest = Manifest::new("train", cfg.train.seed, cfg)?;
    manifest.add_input(&path)?;
    finish(&mut manifest, out, "train", &[ckpt, losses, summary])
}

fn build_denoiser(cfg: &Config, out: &Path, kind: DenoiserKind, manifest: &mut Manifest) -> CliResult<Box<dyn Denoiser>> {
    match kind {
        DenoiserKind::Analytic => match cfg.system.build()? {
            System::LinearGaussian(ssm) => Ok(Box::new(AnalyticLgDenoiser::new(ssm, cfg.schedule()))),
            System::Lorenz96(_) => Err(CliError::config(
                "--denoiser analytic requires system.kind = \"linear-gaussian\"".into(),
            )),
        },
        DenoiserKind::Mlp => {
            let path = out.join("denoiser.ckpt");
            let net = load_checkpoint(require(&path)?, &cfg.schedule())?;
            manifest.add_input(&path)?;
            Ok(Box::new(net))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PpcSummary {
    step: usize,
    coordinate: usize,
    observed: f64,
    rank: f64,
}

pub fn assimilate(cfg: &Config, out: &Path, kind: DenoiserKind, baseline: Baseline) -> CliResult {
    let truth_path = out.join("truth.csv");
    let obs_path = out.join("observations.csv");
    let (_, truth) = io::read_states_csv(require(&truth_path)?)?;
    let (first, ys) = io::read_states_csv(require(&obs_path)?)?;
    let obs = cfg.observation_model()?;
    check_state_dim(cfg, "truth.csv", &truth)?;
    if let Some(y) = ys.iter().find(|y| y.len() != obs.obs_dim()) {
        return Err(shape("observations.csv", obs.obs_dim(), y.len()));
    }
    if first != 1 || truth.len() != ys.len() + 1 {
        return Err(CliError {
            code: EXIT_DATA,
            message: "truth.csv must hold steps 0..=K and observations.csv steps 1..=K".into(),
        });
    }
    let mut manifest = Manifest::new("assimilate", cfg.filter.seed, cfg)?;
    manifest.add_input(&truth_path)?;
    manifest.add_input(&obs_path)?;
    let den = build_denoiser(cfg, out, kind, &mut manifest)?;
    if den.dim() != truth[0].len() {
        return Err(shape("denoiser", truth[0].len(), den.dim()));
    }

    let trace = faapf_run(den.as_ref(), &obs, &cfg.sampler, &cfg.guidance, &cfg.filter, &truth[0], &ys)?;
    let groups = coordinate_groups(&obs);
    let mut rows = Vec::new();
    for rec in &trace.steps {
        rows.extend(grouped_rows(
            rec.step,
            &rec.ensemble,
            &truth[rec.step],
            &groups,
            Some(rec.ess),
            Some(rec.alpha),
            rec.clamp.map(|c| c.label().to_string()),
        )?);
    }
    let metrics = out.join("filter_metrics.csv");
    io::write_metrics_csv(&metrics, &rows)?;
    let mut outputs = vec![metrics];

    let every = cfg.experiment.snapshot_every;
    if every > 0 {
        let dir = out.join("snapshots");
        fs::create_dir_all(&dir).map_err(Error::from)?;
        for k in (every..=ys.len()).step_by(every) {
            let p = dir.join(format!("step_{k:05}.bin"));
            io::write_snapshot(&p, k, trace.ensemble(k))?;
            outputs.push(p);
        }
    }

    let k = cfg.experiment.ppc_step.clamp(1, ys.len());
    let coord = cfg.experiment.ppc_coordinate;
    // Predictive of y^k given one filtering particle at k - 1 and y^k itself.
    let samples = proposal_samples(
        den.as_ref(),
        &obs,
        &cfg.sampler,
        &cfg.guidance,
        &trace.ensemble(k - 1)[0],
        &ys[k - 1],
        cfg.filter.particles.max(PPC_MIN_SAMPLES),
        cfg.filter.seed,
        k as u64,
        cfg.filter.execution,
    )?;
    let ppc = posterior_predictive_check(&samples, &obs, &ys[k - 1], coord)?;
    let ppc_csv = out.join("ppc.csv");
    io::write_xy_csv(&ppc_csv, ["y", "density"], ppc.grid.iter().copied().zip(ppc.density.iter().copied()))?;
    let ppc_json = out.join("ppc.json");
    let summary = PpcSummary {
        step: k,
        coordinate: coord,
        observed: ppc.observed,
        rank: ppc.rank,
    };
    fs::write(&ppc_json, serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n").map_err(Error::from)?;
    outputs.extend([ppc_csv, ppc_json]);

    if baseline == Baseline::Unconditional {
        let ens = unconditional_ensemble_run(
            den.as_ref(),
            &cfg.sampler,
            cfg.filter.particles,
            &truth[0],
            ys.len(),
            cfg.filter.seed,
            cfg.filter.execution,
        )?;
        let mut rows = Vec::new();
        for (k, e) in ens.iter().enumerate().skip(1) {
            rows.extend(grouped_rows(k, e, &truth[k], &groups, None, None, None)?);
        }
        let p = out.join("baseline_metrics.csv");
        io::write_metrics_csv(&p, &rows)?;
        outputs.push(p);
    }
    finish(&mut manifest, out, "assimilate", &outputs)
}

fn load_rows(path: &Path) -> CliResult<Vec<MetricRow>> {
    Ok(io::read_metrics_csv(require(path)?)?)
}

fn series_for(rows: &[MetricRow], label: &str, value: fn(&MetricRow) -> f64) -> Vec<Series> {
    let mut groups: Vec<Group> = Vec::new();
    for r in rows {
        if !groups.contains(&r.group) {
            groups.push(r.group);
        }
    }
    // Drop the aggregate when the split groups are present.
    if groups.len() > 1 {
        groups.retain(|g| *g != Group::All);
    }
    groups
        .into_iter()
        .map(|g| Series {
            name: format!("{label} ({})", group_name(g)),
            points: rows.iter().filter(|r| r.group == g).map(|r| (r.step as f64, value(r))).collect(),
        })
        .collect()
}

fn group_name(g: Group) -> &'static str {
    match g {
        Group::All => "all",
        Group::Observed => "observed",
        Group::Unobserved => "unobserved",
    }
}

pub fn plot(out: &Path, metrics: &[PathBuf]) -> CliResult {
    let paths: Vec<PathBuf> = if metrics.is_empty() {
        let mut v = vec![out.join("filter_metrics.csv")];
        let b = out.join("baseline_metrics.csv");
        if b.exists() {
            v.push(b);
        }
        v
    } else {
        metrics.to_vec()
    };
    let mut skill = Vec::new();
    let mut spread = Vec::new();
    for p in &paths {
        let rows = load_rows(p)?;
        let label = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().trim_end_matches("_metrics").to_string());
        skill.extend(series_for(&rows, &label, |r| r.skill));
        spread.extend(series_for(&rows, &label, |r| r.spread));
    }
    fs::create_dir_all(out).map_err(Error::from)?;
    let mut manifest = Manifest::new("plot", 0, &serde_json::json!({ "metrics": paths }))?;
    for p in &paths {
        manifest.add_input(p)?;
    }
    let mut outputs = vec![out.join("skill.svg"), out.join("spread.svg")];
    fs::write(&outputs[0], plot::line_chart("Skill", "step", "RMSE of ensemble mean", &skill, None)).map_err(Error::from)?;
    fs::write(&outputs[1], plot::line_chart("Spread", "step", "RMS ensemble std", &spread, None)).map_err(Error::from)?;

    let ppc_csv = out.join("ppc.csv");
    let ppc_json = out.join("ppc.json");
    if ppc_csv.exists() && ppc_json.exists() {
        let curve = io::read_xy_csv(&ppc_csv)?;
        let text = fs::read_to_string(&ppc_json).map_err(Error::from)?;
        let summary: PpcSummary = serde_json::from_str(&text).map_err(Error::from)?;
        let title = format!(
            "Predictive density, step {}, observation {} (rank {:.3})",
            summary.step, summary.coordinate, summary.rank
        );
        let series = [Series {
            name: "predictive".into(),
            points: curve,
        }];
        let p = out.join("ppc.svg");
        fs::write(&p, plot::line_chart(&title, "y", "density", &series, Some(summary.observed))).map_err(Error::from)?;
        manifest.add_input(&ppc_csv)?;
        manifest.add_input(&ppc_json)?;
        outputs.push(p);
    }
    finish(&mut manifest, out, "plot", &outputs)
}
