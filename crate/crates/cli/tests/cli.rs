use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pacsnoc::inference::grid::{axes_for_prior, discretized_prior};
use pacsnoc::pac::prior::{Marginal, Prior};
use pacsnoc::sim::NoiseDataset;

const LTI: &str = r#"
seed = 3
output_dir = "OUT"
s = 8
horizon = 10
delta = 0.2
n_q = 10

[plant]
kind = "scalar_lti"
a = 0.8
b = 0.1
xbar = 2.0

[noise]
kind = "gaussian"
mean = 0.3
std = 0.3

[cost]
kind = "lti_quadratic"
q = 5.0
r = 0.003

[controller]
kind = "affine"

[prior]
kind = "product2d"
k = { kind = "gaussian", mean = 7.5622, variance = 1.0 }
beta = { kind = "uniform", lo = -5.0, hi = 5.0 }

[method]
kind = "grid"
resolution = 40
"#;

const ROBOTS: &str = r#"
seed = 1
output_dir = "OUT"
s = 3
horizon = 100
delta = 0.1

[plant]
kind = "planar_robots"

[noise]
kind = "initial_only"
mean = 0.0
std = 0.2

[cost]
kind = "robot_nav"
q_diag = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
r_diag = [0.01, 0.01, 0.01, 0.01]

[controller]
kind = "imc_ren"
xi = 2
zeta = 2

[prior]
kind = "zero_mean"
variance = 1.0

[method]
kind = "empirical"

[train]
epochs = 3
learning_rate = 1.0
"#;

fn setup(template: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = template.replace("OUT", out.to_str().unwrap());
    let path = dir.path().join("config.toml");
    fs::write(&path, cfg).unwrap();
    (dir, path)
}

fn pacsnoc(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacsnoc"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

fn ok(config: &Path, args: &[&str]) -> String {
    let out = pacsnoc(config, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn out_dir(config: &Path) -> PathBuf {
    config.parent().unwrap().join("out")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = read_csv(path);
    let i = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn lti_dataset_shape_and_reproducibility() {
    let (_d, cfg) = setup(LTI);
    ok(&cfg, &["gen-data"]);
    let path = out_dir(&cfg).join("dataset.json");
    let first = fs::read(&path).unwrap();
    let ds = NoiseDataset::load(&path).unwrap();
    assert_eq!(ds.len(), 8);
    assert!(ds.sequences.iter().all(|s| s.0.len() == 11));
    ok(&cfg, &["gen-data"]);
    assert_eq!(first, fs::read(&path).unwrap());
    assert!(out_dir(&cfg).join("config.toml").exists());
}

#[test]
fn robot_dataset_is_initial_only() {
    let (_d, cfg) = setup(ROBOTS);
    ok(&cfg, &["gen-data"]);
    let ds = NoiseDataset::load(out_dir(&cfg).join("dataset.json")).unwrap();
    for s in &ds.sequences {
        assert_eq!(s.0.len(), 101);
        assert!(s.0[0].iter().any(|v| *v != 0.0));
        assert!(s.0[1..].iter().flatten().all(|v| *v == 0.0));
    }
}

#[test]
fn grid_with_zero_lambda_returns_the_prior() {
    let (_d, cfg) = setup(LTI);
    ok(&cfg, &["gen-data"]);
    ok(&cfg, &["train", "--lambda", "0"]);
    let mass = column(&out_dir(&cfg).join("grid.csv"), "mass");
    let prior = Prior::Product2d {
        k: Marginal::Gaussian {
            mean: 7.5622,
            variance: 1.0,
        },
        beta: Marginal::Uniform { lo: -5.0, hi: 5.0 },
    };
    let (k, b) = axes_for_prior(&prior, 40, 3.0).unwrap();
    let lp = discretized_prior(&prior, &k, &b).unwrap();
    assert_eq!(mass.len(), lp.len());
    for (m, l) in mass.iter().zip(&lp) {
        assert!((m - l.exp()).abs() < 1e-12);
    }
}

#[test]
fn grid_sweep_bounds_and_selection() {
    let (_d, cfg) = setup(&LTI.replace("s = 8", "s = 128"));
    ok(&cfg, &["gen-data"]);
    let stdout = ok(&cfg, &["bound", "--sweep", "8,32,128"]);
    assert!(stdout.contains("jointly"));
    let bounds = out_dir(&cfg).join("bounds.csv");
    let upper = column(&bounds, "upper");
    let lower = column(&bounds, "lower");
    assert_eq!(upper.len(), 3);
    assert!(upper.windows(2).all(|w| w[1] < w[0] + 1e-3));
    assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));

    ok(&cfg, &["train"]);
    let stdout = ok(&cfg, &["select", "--resamples", "20"]);
    assert!(stdout.contains("delta' = 0.02"), "{stdout}");
    let (h, rows) = read_csv(&out_dir(&cfg).join("selection.csv"));
    assert_eq!(rows.len(), 10);
    let sel = h.iter().position(|c| c == "selected").unwrap();
    assert_eq!(rows.iter().filter(|r| r[sel] == "true").count(), 1);
    assert!(out_dir(&cfg).join("selected.json").exists());
}

#[test]
fn mc_bound_reports_correction() {
    let (_d, cfg) = setup(&LTI.replace("kind = \"grid\"\nresolution = 40", "kind = \"empirical\""));
    ok(&cfg, &["gen-data"]);
    ok(&cfg, &["bound", "--n-p", "2000"]);
    let bounds = out_dir(&cfg).join("bounds.csv");
    assert_eq!(column(&bounds, "n_p"), vec![2000.0]);
    assert!(column(&bounds, "mc_correction")[0] > 0.0);
}

#[test]
fn empirical_lti_recovers_the_offset() {
    let (_d, cfg) = setup(&LTI.replace("kind = \"grid\"\nresolution = 40", "kind = \"empirical\""));
    ok(&cfg, &["gen-data", "--s", "512"]);
    ok(&cfg, &["train", "--s", "512", "--epochs", "500", "--learning-rate", "200"]);
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir(&cfg).join("checkpoint.json")).unwrap()).unwrap();
    let beta = ck["theta"][1].as_f64().unwrap();
    assert!((beta - 3.0).abs() < 0.5, "beta = {beta}");
    let epochs = column(&out_dir(&cfg).join("metrics.csv"), "epoch");
    assert!(!epochs.is_empty());
}

#[test]
fn robots_at_target_do_not_collide() {
    let at_target = ROBOTS.replace(
        "[plant]\nkind = \"planar_robots\"",
        "[plant]\nkind = \"planar_robots\"\nstarts = [[2.0, 2.0], [-2.0, 2.0]]",
    );
    let (_d, cfg) = setup(&at_target.replace("kind = \"initial_only\"\nmean = 0.0\nstd = 0.2", "kind = \"zero\""));
    ok(&cfg, &["gen-data"]);
    ok(&cfg, &["train"]);
    let stdout = ok(&cfg, &["evaluate", "--n-test", "5"]);
    assert!(stdout.contains("collisions 0.0%"), "{stdout}");
    let t = column(&out_dir(&cfg).join("eval.csv"), "transformed_cost");
    assert_eq!(t.len(), 5);
    assert!(t.iter().all(|c| (0.0..1.0).contains(c)));
}

#[test]
fn robot_evaluation_costs_are_bounded() {
    let (_d, cfg) = setup(ROBOTS);
    ok(&cfg, &["gen-data"]);
    ok(&cfg, &["train"]);
    ok(&cfg, &["evaluate", "--n-test", "20", "--test-seed", "9"]);
    let eval = out_dir(&cfg).join("eval.csv");
    let t = column(&eval, "transformed_cost");
    let raw = column(&eval, "raw_cost");
    assert_eq!(t.len(), 20);
    assert!(t.iter().all(|c| (0.0..1.0).contains(c)));
    assert!(raw.iter().all(|c| *c >= 0.0));
    let pct = column(&out_dir(&cfg).join("eval_summary.csv"), "collision_percent")[0];
    assert!((0.0..=100.0).contains(&pct));
}

#[test]
fn config_errors_exit_with_two() {
    let (_d, cfg) = setup(LTI);
    // no dataset yet
    assert_eq!(pacsnoc(&cfg, &["train"]).status.code(), Some(2));
    assert_eq!(pacsnoc(&cfg, &["gen-data", "--delta", "1.5"]).status.code(), Some(2));
    assert_eq!(pacsnoc(&cfg, &["gen-data", "--lambda", "big"]).status.code(), Some(2));
    let missing = cfg.with_file_name("nope.toml");
    assert_eq!(pacsnoc(&missing, &["gen-data"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_pacsnoc"))
        .env("PACSNOC_THREADS", "0")
        .arg("--config")
        .arg(&cfg)
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let unstable = ROBOTS.replace(
        "[plant]\nkind = \"planar_robots\"",
        "[plant]\nkind = \"planar_robots\"\ndt = 50.0",
    );
    // explicit gamma: the nominal rollout used for the default would blow up too
    let unstable = unstable.replace("r_diag = [0.01, 0.01, 0.01, 0.01]", "r_diag = [0.01, 0.01, 0.01, 0.01]\ngamma = 1.0");
    let (_d, cfg) = setup(&unstable.replace("std = 0.2", "std = 100.0"));
    ok(&cfg, &["gen-data"]);
    let out = pacsnoc(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_cap_is_honored() {
    let (_d, cfg) = setup(LTI);
    let out = Command::new(env!("CARGO_BIN_EXE_pacsnoc"))
        .env("PACSNOC_THREADS", "1")
        .arg("--config")
        .arg(&cfg)
        .arg("gen-data")
        .output()
        .unwrap();
    assert!(out.status.success());
}
