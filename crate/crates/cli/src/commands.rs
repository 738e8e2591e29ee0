use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use pacsnoc::controller::ControllerParams;
use pacsnoc::inference::flow::{FlowTrainOptions, PlanarFlow};
use pacsnoc::inference::grid::{grid_posterior, GridPosterior};
use pacsnoc::inference::svgd::Bandwidth;
use pacsnoc::pac::bounds::{bounds_qstar_exact, union_delta, BoundReport};
use pacsnoc::pac::gibbs::{gibbs_bound_mc, prior_sample_costs, GibbsPosterior, Task};
use pacsnoc::pac::prior::{LogDensity, Prior};
use pacsnoc::pac::two_stage::{stage_lambdas, two_stage_split_search, LambdaChoice, Split};
use pacsnoc::selection::bootstrap_select;
use pacsnoc::sim::{generate_dataset, NoiseDataset, NoiseSequence};
use pacsnoc::training::{
    flow_base_init, split_train_val, train_empirical, train_flow, train_svgd, EpochRecord, SvgdOptions, TrainOptions,
};

use crate::config::{ExperimentConfig, MethodConfig};
use crate::{CliError, Result};

/// Offset separating the test-set stream from the training-set stream.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(pacsnoc::Error::from)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&raw).map_err(pacsnoc::Error::from)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<NoiseDataset> {
    let path = cfg.dataset_path();
    if !path.exists() {
        return Err(CliError::Config(format!(
            "dataset {} not found; run gen-data first",
            path.display()
        )));
    }
    let ds = NoiseDataset::load(&path)?;
    if ds.len() < cfg.s {
        return Err(CliError::Config(format!("dataset has {} sequences, config needs {}", ds.len(), cfg.s)));
    }
    Ok(ds)
}

fn training_data(cfg: &ExperimentConfig) -> Result<Vec<NoiseSequence>> {
    Ok(load_dataset(cfg)?.sequences[..cfg.s].to_vec())
}

/// Writes `dataset.json` with `s` sequences drawn from `seed`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    prepare(cfg)?;
    let ds = generate_dataset(&cfg.noise, cfg.plant.state_dim(), cfg.s, cfg.horizon, cfg.seed)?;
    let path = cfg.dataset_path();
    ds.save(&path)?;
    Ok(path)
}

#[derive(Serialize)]
struct MetricRow {
    epoch: usize,
    train_cost: f64,
    val_cost: Option<f64>,
}

fn metric_rows(h: &[EpochRecord]) -> Vec<MetricRow> {
    h.iter()
        .map(|r| MetricRow {
            epoch: r.epoch,
            train_cost: r.train_cost,
            val_cost: r.val_cost,
        })
        .collect()
}

#[derive(Serialize)]
struct GridRow {
    k: f64,
    beta: f64,
    mass: f64,
    cost: f64,
}

/// Summary printed by `train`.
#[derive(Debug)]
pub struct TrainSummary {
    pub method: &'static str,
    pub lambda: Option<f64>,
    pub checkpoint: ControllerParams,
    pub samples: usize,
}

fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.train.epochs,
        learning_rate: cfg.train.learning_rate,
        patience: cfg.train.patience,
        val_fraction: cfg.train.val_fraction,
        min_delta: 0.0,
    }
}

fn train_flow_on(
    cfg: &ExperimentConfig,
    task: &Task,
    prior: &Prior,
    data: &[NoiseSequence],
    lambda: f64,
    seed: u64,
) -> Result<(PlanarFlow, Vec<f64>)> {
    let MethodConfig::Flows {
        layers,
        scale,
        n_mc,
        steps,
        learning_rate,
        base_runs,
    } = cfg.method
    else {
        unreachable!("flows only");
    };
    let seeds: Vec<u64> = (0..base_runs.max(2) as u64).map(|i| seed + 1 + i).collect();
    let (mean, var) = flow_base_init(task, &data[0], &seeds, cfg.train.init_std, &train_options(cfg), scale)?;
    let flow = PlanarFlow::new(mean, &var, layers, 0.01, seed)?;
    let target = GibbsPosterior::new(prior, task, data, lambda)?;
    let opts = FlowTrainOptions {
        n_mc,
        steps,
        learning_rate,
        seed: seed + 101,
        max_grad_norm: Some(100.0),
    };
    Ok(train_flow(&flow, &target, &opts)?)
}

/// Trains with the configured method and writes the checkpoint files.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    prepare(cfg)?;
    let data = training_data(cfg)?;
    let task = cfg.task()?;
    let prior = cfg.prior()?;
    let out = &cfg.output_dir;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lambda, samples): (Option<f64>, Vec<Vec<f64>>) = match cfg.method {
        MethodConfig::Empirical => {
            let (train, val) = split_train_val(&data, cfg.train.val_fraction);
            let init = task.arch.init_gaussian(cfg.train.init_std, &mut rng)?;
            let res = train_empirical(&task, &train, &val, &init, &train_options(cfg))?;
            write_csv(&out.join("metrics.csv"), &metric_rows(&res.history))?;
            (None, vec![res.theta])
        }
        MethodConfig::Grid { resolution, n_std } => {
            let lambda = cfg.lambda.resolve(data.len(), cfg.delta, cfg.cost.bound)?;
            let q = grid_posterior(&prior, &task, &data, lambda, resolution, n_std)?;
            write_grid(&out.join("grid.csv"), &q)?;
            write_csv::<MetricRow>(&out.join("metrics.csv"), &[])?;
            let samples = q.sample(cfg.n_q, cfg.seed).into_iter().map(|t| t.to_vec()).collect();
            (Some(lambda), samples)
        }
        MethodConfig::Svgd { particles } => {
            let (train, val) = split_train_val(&data, cfg.train.val_fraction);
            let lambda = cfg.lambda.resolve(train.len(), cfg.delta, cfg.cost.bound)?;
            let target = GibbsPosterior::new(&prior, &task, &train, lambda)?;
            let init: Vec<Vec<f64>> = (0..particles.max(1)).map(|_| prior.sample(&mut rng)).collect();
            let eta = if lambda > 0.0 {
                cfg.train.learning_rate / lambda
            } else {
                cfg.train.learning_rate
            };
            let res = train_svgd(
                &target,
                init,
                &val,
                &SvgdOptions {
                    epochs: cfg.train.epochs,
                    step_size: eta,
                    bandwidth: Bandwidth::Median,
                    patience: cfg.train.patience,
                    tol: 1e-6,
                },
            )?;
            write_csv(&out.join("metrics.csv"), &metric_rows(&res.history))?;
            (Some(lambda), res.particles)
        }
        MethodConfig::Flows { .. } => {
            let lambda = cfg.lambda.resolve(data.len(), cfg.delta, cfg.cost.bound)?;
            let (flow, trace) = train_flow_on(cfg, &task, &prior, &data, lambda, cfg.seed)?;
            write_json(&out.join("flow.json"), &flow)?;
            let rows: Vec<MetricRow> = trace
                .iter()
                .enumerate()
                .map(|(i, j)| MetricRow {
                    epoch: i,
                    train_cost: *j,
                    val_cost: None,
                })
                .collect();
            write_csv(&out.join("metrics.csv"), &rows)?;
            let samples = (0..cfg.n_q).map(|_| flow.sample(&mut rng)).collect();
            (Some(lambda), samples)
        }
    };
    let checkpoint = ControllerParams::new(task.arch.clone(), samples[0].clone())?;
    checkpoint.save(out.join("checkpoint.json"))?;
    write_json(&out.join("samples.json"), &samples)?;
    Ok(TrainSummary {
        method: cfg.method.name(),
        lambda,
        checkpoint,
        samples: samples.len(),
    })
}

fn write_grid(path: &Path, q: &GridPosterior) -> Result<()> {
    let rows: Vec<GridRow> = (0..q.num_cells())
        .map(|c| {
            let [k, beta] = q.theta(c);
            GridRow {
                k,
                beta,
                mass: q.log_mass[c].exp(),
                cost: q.costs[c],
            }
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize)]
struct SplitRow {
    s1: usize,
    s2: usize,
    constant: f64,
    evaluated: bool,
    upper: Option<f64>,
}

/// Computes bounds for the configured method and writes `bounds.csv`.
///
/// * grid: exact bound for each size in `sweep` (prefixes of the dataset);
/// * empirical, svgd: Monte-Carlo bound for the Gibbs posterior from `n_p` prior draws;
/// * flows: two-stage bound with a stage-1 flow.
pub fn bound(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    prepare(cfg)?;
    let data = training_data(cfg)?;
    let task = cfg.task()?;
    let prior = cfg.prior()?;
    let c = cfg.cost.bound;
    let reports = match cfg.method {
        MethodConfig::Grid { resolution, n_std } => {
            let sizes = if cfg.sweep.is_empty() { vec![cfg.s] } else { cfg.sweep.clone() };
            let mut out = Vec::new();
            for s in sizes {
                let lambda = cfg.lambda.resolve(s, cfg.delta, c)?;
                let q = grid_posterior(&prior, &task, &data[..s], lambda, resolution, n_std)?;
                let emp: f64 = q.log_mass.iter().zip(&q.costs).map(|(l, v)| l.exp() * v).sum();
                out.push(bounds_qstar_exact(emp, q.ln_z, lambda, cfg.delta, c, s)?);
            }
            out
        }
        MethodConfig::Empirical | MethodConfig::Svgd { .. } => {
            let lambda = cfg.lambda.resolve(cfg.s, cfg.delta, c)?;
            let costs = prior_sample_costs(&task, &prior, &data, cfg.n_p, cfg.seed)?;
            vec![gibbs_bound_mc(&costs, lambda, cfg.delta, c, cfg.s)?]
        }
        MethodConfig::Flows { .. } => {
            if cfg.s < 2 {
                return Err(CliError::Config("the two-stage bound needs s >= 2".into()));
            }
            let candidates: Vec<Split> = match cfg.two_stage.s1 {
                Some(s1) => vec![Split::new(s1, cfg.s - s1)?],
                None => Split::all(cfg.s).into_iter().filter(|sp| sp.s1 >= 1).collect(),
            };
            let choice = match cfg.lambda {
                crate::config::LambdaSetting::Value(v) => LambdaChoice::Fixed(v),
                crate::config::LambdaSetting::Named(_) => LambdaChoice::Stage2Optimal,
            };
            let search = two_stage_split_search(&candidates, choice, cfg.delta, c, cfg.n_p, cfg.two_stage.top, |sp, lam| {
                let (l1, l2) = stage_lambdas(lam, sp);
                let (d1, d2) = data.split_at(sp.s1);
                let (q1, _) = train_flow_on(cfg, &task, &prior, d1, l1, cfg.seed).map_err(|e| match e {
                    CliError::Core(e) => e,
                    other => pacsnoc::Error::InvalidArgument(other.to_string()),
                })?;
                let costs = prior_sample_costs(&task, &q1, d2, cfg.n_p, cfg.seed + 7)?;
                gibbs_bound_mc(&costs, l2, cfg.delta, c, sp.s2)
            })?;
            let rows: Vec<SplitRow> = search
                .ranking
                .iter()
                .map(|(sp, k)| {
                    let ev = search.evaluated.iter().find(|(e, _)| e == sp);
                    SplitRow {
                        s1: sp.s1,
                        s2: sp.s2,
                        constant: *k,
                        evaluated: ev.is_some(),
                        upper: ev.map(|(_, r)| r.upper),
                    }
                })
                .collect();
            write_csv(&cfg.output_dir.join("splits.csv"), &rows)?;
            vec![search.report]
        }
    };
    write_csv(&cfg.output_dir.join("bounds.csv"), &reports)?;
    Ok(reports)
}

#[derive(Debug, Serialize)]
pub struct EvalRow {
    pub sequence: usize,
    pub raw_cost: f64,
    pub transformed_cost: f64,
    pub collision: bool,
}

#[derive(Debug, Serialize)]
pub struct EvalSummary {
    pub n_test: usize,
    pub seed: u64,
    pub mean_raw_cost: f64,
    pub mean_transformed_cost: f64,
    pub collision_percent: f64,
}

/// Evaluates a checkpoint on `n_test` fresh sequences.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, n_test: usize, seed: u64) -> Result<EvalSummary> {
    prepare(cfg)?;
    if n_test == 0 {
        return Err(CliError::Config("n_test must be positive".into()));
    }
    let task = cfg.task()?;
    if !checkpoint.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    let params = ControllerParams::load(checkpoint)?;
    if params.arch != task.arch {
        return Err(CliError::Config("checkpoint architecture does not match the config".into()));
    }
    let test = generate_dataset(&cfg.noise, cfg.plant.state_dim(), n_test, cfg.horizon, seed)?;
    let outcomes = task.evaluate(&params.theta, &test.sequences)?;
    let rows: Vec<EvalRow> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| EvalRow {
            sequence: i,
            raw_cost: o.raw,
            transformed_cost: o.transformed,
            collision: o.collision,
        })
        .collect();
    write_csv(&cfg.output_dir.join("eval.csv"), &rows)?;
    let n = rows.len() as f64;
    let summary = EvalSummary {
        n_test,
        seed,
        mean_raw_cost: rows.iter().map(|r| r.raw_cost).sum::<f64>() / n,
        mean_transformed_cost: rows.iter().map(|r| r.transformed_cost).sum::<f64>() / n,
        collision_percent: 100.0 * rows.iter().filter(|r| r.collision).count() as f64 / n,
    };
    write_csv(&cfg.output_dir.join("eval_summary.csv"), std::slice::from_ref(&summary))?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct SelectionRow {
    pub candidate: usize,
    pub full_cost: f64,
    pub score: f64,
    pub resamples: usize,
    pub selected: bool,
}

#[derive(Debug)]
pub struct SelectionSummary {
    pub selected: usize,
    pub candidates: usize,
    /// Confidence level to use for the selected controller's bound.
    pub delta_prime: f64,
}

/// Bootstrap selection among the posterior samples written by `train`.
pub fn select(cfg: &ExperimentConfig) -> Result<SelectionSummary> {
    prepare(cfg)?;
    let data = training_data(cfg)?;
    let task = cfg.task()?;
    let path = cfg.output_dir.join("samples.json");
    if !path.exists() {
        return Err(CliError::Config(format!("{} not found; run train first", path.display())));
    }
    let samples: Vec<Vec<f64>> = read_json(&path)?;
    if samples.is_empty() || samples.iter().any(|s| s.len() != task.dim()) {
        return Err(CliError::Config("samples do not match the controller dimension".into()));
    }
    let (best, estimates) = bootstrap_select(&task, &samples, &data, cfg.bootstrap_resamples, cfg.seed)?;
    let rows: Vec<SelectionRow> = estimates
        .iter()
        .map(|e| SelectionRow {
            candidate: e.candidate,
            full_cost: e.full_cost,
            score: e.score,
            resamples: e.resamples,
            selected: e.candidate == best,
        })
        .collect();
    write_csv(&cfg.output_dir.join("selection.csv"), &rows)?;
    ControllerParams::new(task.arch.clone(), samples[best].clone())?.save(cfg.output_dir.join("selected.json"))?;
    Ok(SelectionSummary {
        selected: best,
        candidates: samples.len(),
        delta_prime: union_delta(cfg.delta, samples.len())?,
    })
}
