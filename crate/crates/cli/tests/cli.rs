use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const LG: &str = r#"
[system]
kind = "linear-gaussian"
dim = 4
process_noise_std = 0.3

[observation]
stride = 2
noise_std = 0.2

[sampler]
steps = 12

[filter]
particles = 32
ess_min = 7.0
ess_max = 9.0

[train]
epochs = 0
hidden = [8]

[experiment]
steps = 5
spin_up = 0
train_steps = 50
snapshot_every = 2
"#;

fn diffda(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffda"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_owned).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()));
    rows
}

#[test]
fn exit_codes_follow_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = with_config(d, "[filter]\nparticle = 3\n");
    let out = diffda(d, &["--config", &bad, "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("particle"));

    let cfg = with_config(d, LG);
    assert_eq!(diffda(d, &["--config", &cfg, "train"]).status.code(), Some(3));
    assert_eq!(diffda(d, &["--config", "/nonexistent.toml", "generate"]).status.code(), Some(3));

    ok(diffda(d, &["--config", &cfg, "generate"]));
    // truth written for 4 coordinates, then read back under a 6-dimensional config
    let wide = with_config(d, &LG.replace("dim = 4", "dim = 6"));
    assert_eq!(diffda(d, &["--config", &wide, "assimilate", "--denoiser", "analytic"]).status.code(), Some(4));

    fs::write(d.join("observations.csv"), "step,y0,y1\n1,0.1,oops\n").unwrap();
    let cfg = with_config(d, LG);
    assert_eq!(diffda(d, &["--config", &cfg, "assimilate", "--denoiser", "analytic"]).status.code(), Some(5));
}

#[test]
fn generate_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = with_config(d, &LG.replace("steps = 5", "steps = 1"));
    ok(diffda(d, &["--config", &cfg, "generate"]));
    let truth = fs::read(d.join("truth.csv")).unwrap();
    assert_eq!(csv_rows(&d.join("truth.csv")).len(), 1 + 2);
    assert_eq!(csv_rows(&d.join("observations.csv")).len(), 1 + 1);
    ok(diffda(d, &["--config", &cfg, "generate"]));
    assert_eq!(fs::read(d.join("truth.csv")).unwrap(), truth);

    let other = tempfile::tempdir().unwrap();
    ok(diffda(other.path(), &["--config", &cfg, "--seed", "7", "generate"]));
    assert_ne!(fs::read(other.path().join("truth.csv")).unwrap(), truth);
}

#[test]
fn lorenz_defaults_observe_every_fourth_coordinate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = with_config(d, "[experiment]\nsteps = 2\nspin_up = 10\ntrain_steps = 0\n");
    ok(diffda(d, &["--config", &cfg, "generate"]));
    let truth = csv_rows(&d.join("truth.csv"));
    assert_eq!(truth[0].len(), 1 + 40);
    let obs = csv_rows(&d.join("observations.csv"));
    assert_eq!(obs[0].len(), 1 + 10);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(d.join("dataset.json")).unwrap()).unwrap();
    let idx: Vec<u64> = meta["observed_indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(idx, (0..40).step_by(4).collect::<Vec<u64>>());
    assert!(!d.join("train.csv").exists());
}

#[test]
fn pipeline_writes_metrics_baseline_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = with_config(d, LG);
    ok(diffda(d, &["--config", &cfg, "generate"]));
    ok(diffda(d, &["--config", &cfg, "train"]));
    assert!(d.join("denoiser.ckpt").exists());
    assert_eq!(csv_rows(&d.join("train_loss.csv")).len(), 1);

    ok(diffda(d, &["--config", &cfg, "assimilate", "--denoiser", "analytic", "--baseline", "unconditional"]));
    let rows = csv_rows(&d.join("filter_metrics.csv"));
    assert_eq!(rows[0], ["step", "group", "skill", "spread", "ess", "alpha", "clamp"]);
    // three groups per step
    assert_eq!(rows.len() - 1, 3 * 5);
    for r in &rows[1..] {
        let ess: f64 = r[4].parse().unwrap();
        assert!((7.0..=9.0).contains(&ess) || !r[6].is_empty(), "{r:?}");
    }
    assert!(d.join("baseline_metrics.csv").exists());
    assert!(d.join("snapshots/step_00002.bin").exists());
    let ppc: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ppc.json")).unwrap()).unwrap();
    let rank = ppc["rank"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rank));
    assert!(d.join("manifest-assimilate.json").exists());

    // the MLP path runs from the untrained checkpoint
    ok(diffda(d, &["--config", &cfg, "assimilate"]));

    ok(diffda(d, &["plot"]));
    let first = fs::read_to_string(d.join("skill.svg")).unwrap();
    assert!(first.contains("baseline"));
    assert!(d.join("spread.svg").exists() && d.join("ppc.svg").exists());
    ok(diffda(d, &["plot"]));
    assert_eq!(fs::read_to_string(d.join("skill.svg")).unwrap(), first);
}

#[test]
fn printed_config_reloads_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = with_config(d, LG);
    let printed = ok(diffda(d, &["--config", &cfg, "--seed", "3", "print-config"])).stdout;
    let again = with_config(d, std::str::from_utf8(&printed).unwrap());
    assert_eq!(ok(diffda(d, &["--config", &again, "print-config"])).stdout, printed);
    assert!(String::from_utf8_lossy(&printed).contains("dim = 4"));
}
