//! Training loops: empirical gradient descent, SVGD on the Gibbs posterior,
//! and the planar-flow base initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{project_gain_in, Arch};
use crate::error::{Error, Result};
use crate::inference::flow::{flow_train, FlowTrainOptions, PlanarFlow};
use crate::inference::svgd::{max_displacement, svgd_step, Bandwidth};
use crate::pac::gibbs::{GibbsPosterior, Task};
use crate::pac::prior::LogDensity;
use crate::sim::{NoiseSequence, Plant};

/// Fixed-rate gradient descent with validation early stopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Improvement below this does not reset the patience counter.
    #[serde(default)]
    pub min_delta: f64,
}

fn default_patience() -> usize {
    500
}

fn default_val_fraction() -> f64 {
    0.25
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.01,
            patience: default_patience(),
            val_fraction: default_val_fraction(),
            min_delta: 0.0,
        }
    }
}

/// First `⌈(1 − f)S⌉` sequences train, the rest validate. A single sequence
/// is never held out.
pub fn split_train_val(seqs: &[NoiseSequence], val_fraction: f64) -> (Vec<NoiseSequence>, Vec<NoiseSequence>) {
    let n_val = if seqs.len() < 2 {
        0
    } else {
        ((seqs.len() as f64 * val_fraction).floor() as usize).min(seqs.len() - 1)
    };
    let n_train = seqs.len() - n_val;
    (seqs[..n_train].to_vec(), seqs[n_train..].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cost: f64,
    pub val_cost: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation cost (last iterate without validation data).
    pub theta: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn project_for(task: &Task, theta: &mut [f64]) {
    if let (Arch::Affine, Plant::ScalarLti(p)) = (&task.arch, &task.plant) {
        theta[0] = project_gain_in(theta[0], p.stable_gain_interval());
    }
}

struct Patience {
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl Patience {
    fn new() -> Self {
        Self {
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// Records `score`; returns whether it is a new best.
    fn observe(&mut self, epoch: usize, score: f64, min_delta: f64) -> bool {
        if score < self.best - min_delta || (self.best.is_infinite() && score.is_finite()) {
            self.best = score;
            self.best_epoch = epoch;
            self.wait = 0;
            true
        } else {
            self.wait += 1;
            false
        }
    }
}

/// Minimizes `L̂(θ, train)` by `θ ← θ − η∇L̂`. Affine gains on the scalar
/// plant are projected onto the stabilizing interval after every step.
pub fn train_empirical(
    task: &Task,
    train: &[NoiseSequence],
    val: &[NoiseSequence],
    init: &[f64],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if init.len() != task.dim() {
        return Err(Error::DimensionMismatch {
            expected: task.dim(),
            got: init.len(),
            context: "initial parameters",
        });
    }
    let mut theta = init.to_vec();
    project_for(task, &mut theta);
    let mut history = Vec::with_capacity(opts.epochs + 1);
    let mut best_theta = theta.clone();
    let mut patience = Patience::new();
    let mut stopped_early = false;
    for epoch in 0..=opts.epochs {
        let (c, g) = task.empirical_cost_grad(&theta, train)?;
        let val_cost = if val.is_empty() {
            None
        } else {
            Some(task.empirical_cost(&theta, val)?)
        };
        history.push(EpochRecord {
            epoch,
            train_cost: c,
            val_cost,
        });
        if patience.observe(epoch, val_cost.unwrap_or(c), opts.min_delta) || val.is_empty() {
            best_theta.clone_from(&theta);
        }
        if !val.is_empty() && patience.wait >= opts.patience {
            stopped_early = true;
            break;
        }
        if epoch == opts.epochs {
            break;
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { particle: 0 });
        }
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= opts.learning_rate * gi);
        project_for(task, &mut theta);
    }
    Ok(TrainOutcome {
        theta: best_theta,
        best_epoch: if val.is_empty() { history.len() - 1 } else { patience.best_epoch },
        history,
        stopped_early,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvgdOptions {
    pub epochs: usize,
    pub step_size: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Stop once no coordinate of any particle moves more than this.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::Median
}

fn default_tol() -> f64 {
    1e-6
}

impl Default for SvgdOptions {
    fn default() -> Self {
        Self {
            epochs: 500,
            step_size: 0.01,
            bandwidth: default_bandwidth(),
            patience: default_patience(),
            tol: default_tol(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SvgdOutcome {
    pub particles: Vec<Vec<f64>>,
    /// Every iterate, starting with the initial particles.
    pub trajectory: Vec<Vec<Vec<f64>>>,
    pub history: Vec<EpochRecord>,
    pub converged: bool,
    pub stopped_early: bool,
}

fn mean_cost(task: &Task, particles: &[Vec<f64>], seqs: &[NoiseSequence]) -> Result<f64> {
    let mut acc = 0.0;
    for p in particles {
        acc += task.empirical_cost(p, seqs)?;
    }
    Ok(acc / particles.len() as f64)
}

/// Runs SVGD against `target`; validation cost is the particle-averaged `L̂`
/// on `val` and drives early stopping with best-iterate restore.
pub fn train_svgd<P: LogDensity>(
    target: &GibbsPosterior<'_, P>,
    init: Vec<Vec<f64>>,
    val: &[NoiseSequence],
    opts: &SvgdOptions,
) -> Result<SvgdOutcome> {
    if init.is_empty() {
        return Err(Error::InvalidArgument("SVGD needs at least one particle".into()));
    }
    let task = target.task;
    let mut particles = init;
    let mut trajectory = vec![particles.clone()];
    let mut history = Vec::new();
    let mut best = particles.clone();
    let mut patience = Patience::new();
    let (mut converged, mut stopped_early) = (false, false);
    for epoch in 0..opts.epochs {
        let mut grads = Vec::with_capacity(particles.len());
        for p in &particles {
            grads.push(target.grad_log_unnorm(p)?.1);
        }
        let h = opts.bandwidth.resolve(&particles);
        let next = svgd_step(&particles, &grads, opts.step_size, h)?;
        let moved = max_displacement(&particles, &next);
        particles = next;
        trajectory.push(particles.clone());
        let train_cost = if target.data.is_empty() {
            f64::NAN
        } else {
            mean_cost(task, &particles, target.data)?
        };
        let val_cost = if val.is_empty() {
            None
        } else {
            Some(mean_cost(task, &particles, val)?)
        };
        history.push(EpochRecord {
            epoch,
            train_cost,
            val_cost,
        });
        match val_cost {
            Some(v) => {
                if patience.observe(epoch, v, 0.0) {
                    best.clone_from(&particles);
                }
            }
            None => best.clone_from(&particles),
        }
        if moved < opts.tol {
            converged = true;
            break;
        }
        if val_cost.is_some() && patience.wait >= opts.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(SvgdOutcome {
        particles: best,
        trajectory,
        history,
        converged,
        stopped_early,
    })
}

/// Plain gradient ascent `φ ← φ + η∇log Q(φ)`, returning every iterate.
pub fn gradient_ascent<P: LogDensity>(target: &GibbsPosterior<'_, P>, init: &[f64], step_size: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let mut phi = init.to_vec();
    let mut out = vec![phi.clone()];
    for _ in 0..steps {
        let (_, g) = target.grad_log_unnorm(&phi)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { particle: 0 });
        }
        phi.iter_mut().zip(&g).for_each(|(p, gi)| *p += step_size * gi);
        out.push(phi.clone());
    }
    Ok(out)
}

/// Base Gaussian for a flow from `seeds.len()` empirical trainings on one
/// sequence: mean of the trained parameters and `scale × max(var, 10⁻⁶)`.
pub fn flow_base_init(
    task: &Task,
    seq: &NoiseSequence,
    seeds: &[u64],
    init_std: f64,
    opts: &TrainOptions,
    scale: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("flow base init needs at least two runs".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    let data = std::slice::from_ref(seq);
    let mut runs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let init = task.arch.init_gaussian(init_std, &mut rng)?;
        runs.push(train_empirical(task, data, &[], &init, opts)?.theta);
    }
    let n = runs.len() as f64;
    let d = task.dim();
    let mean: Vec<f64> = (0..d).map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let var = (0..d)
        .map(|i| {
            let v = runs.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
            scale * v.max(1e-6)
        })
        .collect();
    Ok((mean, var))
}

/// Trains a flow against the Gibbs posterior.
pub fn train_flow<P: LogDensity>(
    flow: &PlanarFlow,
    target: &GibbsPosterior<'_, P>,
    opts: &FlowTrainOptions,
) -> Result<(PlanarFlow, Vec<f64>)> {
    flow_train(flow, target, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostKind, CostSpec};
    use crate::pac::prior::{Marginal, Prior};
    use crate::sim::{generate_dataset, NoiseDistribution, ScalarLti};
    use approx::assert_abs_diff_eq;

    fn lti() -> Task {
        Task::new(
            Plant::ScalarLti(ScalarLti::default()),
            CostSpec {
                kind: CostKind::lti_default(),
                bound: 1.0,
                gamma: 55.145_627_9,
            },
            Arch::Affine,
        )
        .unwrap()
    }

    fn seqs(s: usize, seed: u64) -> Vec<NoiseSequence> {
        generate_dataset(&NoiseDistribution::Gaussian { mean: 0.3, std: 0.3 }, 1, s, 10, seed)
            .unwrap()
            .sequences
    }

    #[test]
    fn split_is_75_25() {
        let d = seqs(8, 0);
        let (t, v) = split_train_val(&d, 0.25);
        assert_eq!((t.len(), v.len()), (6, 2));
        assert_eq!(t[..], d[..6]);
        let (t, v) = split_train_val(&d[..1], 0.25);
        assert_eq!((t.len(), v.len()), (1, 0));
    }

    #[test]
    fn gradient_descent_decreases_cost() {
        let task = lti();
        let d = seqs(16, 1);
        let (t, v) = split_train_val(&d, 0.25);
        let opts = TrainOptions {
            epochs: 50,
            learning_rate: 0.5,
            ..TrainOptions::default()
        };
        let out = train_empirical(&task, &t, &v, &[0.0, 0.0], &opts).unwrap();
        assert!(out.history.last().unwrap().train_cost < out.history[0].train_cost);
        let best_val = out.history.iter().filter_map(|r| r.val_cost).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(task.empirical_cost(&out.theta, &v).unwrap(), best_val, epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let task = lti();
        let d = seqs(4, 2);
        let opts = TrainOptions {
            epochs: 5,
            learning_rate: 0.0,
            ..TrainOptions::default()
        };
        let out = train_empirical(&task, &d, &[], &[1.0, 0.5], &opts).unwrap();
        assert_eq!(out.theta, vec![1.0, 0.5]);
    }

    #[test]
    fn single_particle_svgd_is_gradient_ascent() {
        let task = lti();
        let d = seqs(8, 3);
        let prior = Prior::Product2d {
            k: Marginal::Gaussian { mean: 1.0, variance: 1.0 },
            beta: Marginal::Gaussian { mean: 3.0, variance: 2.25 },
        };
        let target = GibbsPosterior::new(&prior, &task, &d, 10.0).unwrap();
        let opts = SvgdOptions {
            epochs: 10,
            step_size: 0.01,
            tol: 0.0,
            ..SvgdOptions::default()
        };
        let sv = train_svgd(&target, vec![vec![0.5, 1.0]], &[], &opts).unwrap();
        let ga = gradient_ascent(&target, &[0.5, 1.0], 0.01, 10).unwrap();
        for (a, b) in sv.trajectory.iter().zip(&ga) {
            assert_eq!(a[0], *b);
        }
    }

    #[test]
    fn base_init_degenerate_and_scaling() {
        let task = lti();
        let d = seqs(1, 4);
        let opts = TrainOptions {
            epochs: 5,
            learning_rate: 0.1,
            ..TrainOptions::default()
        };
        let (m, v1) = flow_base_init(&task, &d[0], &[7, 7, 7], 0.5, &opts, 1.0).unwrap();
        assert_eq!(v1, vec![1e-6; 2]);
        assert_eq!(m.len(), 2);
        let (_, a) = flow_base_init(&task, &d[0], &[1, 2, 3], 0.5, &opts, 1.0).unwrap();
        let (_, b) = flow_base_init(&task, &d[0], &[1, 2, 3], 0.5, &opts, 4.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(4.0 * x, *y, epsilon = 1e-15 * y.abs());
        }
    }
}
