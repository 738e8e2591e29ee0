//! Empirical and true costs, the Gibbs posterior and partition estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Real, Tape};
use crate::controller::{Arch, Policy};
use crate::cost::{fh_cost, transform_cost, CostSpec};
use crate::error::{Error, Result};
use crate::pac::bounds::{bounds_qstar_mc, BoundReport};
use crate::pac::prior::LogDensity;
use crate::sim::{rollout, NoiseDistribution, NoiseSequence, Plant, Trajectory};

/// Plant, cost and controller architecture: everything needed to map
/// `(θ, w)` to a transformed cost.
#[derive(Clone, Debug)]
pub struct Task {
    pub plant: Plant,
    pub cost: CostSpec,
    pub arch: Arch,
}

/// Costs of one controller on one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOutcome {
    pub raw: f64,
    pub transformed: f64,
    pub collision: bool,
}

impl Task {
    pub fn new(plant: Plant, cost: CostSpec, arch: Arch) -> Result<Self> {
        plant.validate()?;
        cost.validate(&plant)?;
        Ok(Self { plant, cost, arch })
    }

    pub fn dim(&self) -> usize {
        self.arch.num_params()
    }

    pub fn trajectory<T: Real>(&self, policy: &Policy<T>, seq: &NoiseSequence) -> Result<Trajectory<T>> {
        rollout(&self.plant, policy, seq)
    }

    /// Transformed cost of each sequence.
    pub fn sequence_costs<T: Real>(&self, theta: &[T], seqs: &[NoiseSequence]) -> Result<Vec<T>> {
        let policy = Policy::build(&self.arch, theta)?;
        seqs.iter()
            .map(|s| self.cost.eval(&self.plant, &rollout(&self.plant, &policy, s)?))
            .collect()
    }

    /// Mean transformed cost `L̂(θ, 𝕊)` on any [`Real`].
    pub fn empirical_cost_t<T: Real>(&self, theta: &[T], seqs: &[NoiseSequence]) -> Result<T> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("empirical cost needs data".into()));
        }
        let costs = self.sequence_costs(theta, seqs)?;
        let zero = costs[0].lift(0.0);
        let sum = costs.into_iter().fold(zero, |a, c| a + c);
        Ok(sum / seqs.len() as f64)
    }

    pub fn empirical_cost(&self, theta: &[f64], seqs: &[NoiseSequence]) -> Result<f64> {
        self.empirical_cost_t(theta, seqs)
    }

    /// `L̂` and its gradient. Each sequence is differentiated on its own tape
    /// and the per-sequence gradients are summed in sequence order, so the
    /// result does not depend on the thread count.
    pub fn empirical_cost_grad(&self, theta: &[f64], seqs: &[NoiseSequence]) -> Result<(f64, Vec<f64>)> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("empirical cost needs data".into()));
        }
        let parts: Vec<(f64, Vec<f64>)> = seqs
            .par_iter()
            .map(|s| {
                let tape = Tape::new();
                let vars = tape.vars(theta);
                let c = self.sequence_costs(&vars, std::slice::from_ref(s))?[0];
                let g = tape.backward(c)?;
                Ok((c.value(), g.wrt_all(&vars)))
            })
            .collect::<Result<_>>()?;
        let n = seqs.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for (v, g) in parts {
            value += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((value / n, grad))
    }

    /// Raw and transformed cost plus collision flag per sequence.
    pub fn evaluate(&self, theta: &[f64], seqs: &[NoiseSequence]) -> Result<Vec<SequenceOutcome>> {
        let policy = Policy::build(&self.arch, theta)?;
        seqs.par_iter()
            .map(|s| {
                let tr = rollout(&self.plant, &policy, s)?;
                let raw = fh_cost(&self.cost.kind, &self.plant, &tr)?;
                let collision = match &self.plant {
                    Plant::PlanarRobots(r) => r.has_collision(&tr.states),
                    Plant::ScalarLti(_) => false,
                };
                Ok(SequenceOutcome {
                    raw,
                    transformed: transform_cost(raw, self.cost.bound, self.cost.gamma),
                    collision,
                })
            })
            .collect()
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

const MC_CHUNK: usize = 4096;

/// True transformed cost estimated on `n_test` fresh sequences.
pub fn true_cost_mc(
    task: &Task,
    theta: &[f64],
    dist: &NoiseDistribution,
    horizon: usize,
    n_test: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_test == 0 {
        return Err(Error::InvalidArgument("n_test must be at least 1".into()));
    }
    dist.validate()?;
    let policy = Policy::build(&task.arch, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = task.plant.state_dim();
    let mut costs = Vec::with_capacity(n_test);
    while costs.len() < n_test {
        let m = MC_CHUNK.min(n_test - costs.len());
        let seqs = (0..m)
            .map(|_| dist.sample_sequence(dim, horizon, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let chunk: Vec<f64> = seqs
            .par_iter()
            .map(|s| task.cost.eval(&task.plant, &rollout(&task.plant, &policy, s)?))
            .collect::<Result<_>>()?;
        costs.extend(chunk);
    }
    Ok(McEstimate::from_samples(&costs))
}

/// Unnormalized Gibbs posterior `log P(θ) − λ L̂(θ, 𝕊)`.
#[derive(Clone, Copy)]
pub struct GibbsPosterior<'a, P: LogDensity> {
    pub prior: &'a P,
    pub task: &'a Task,
    pub data: &'a [NoiseSequence],
    pub lambda: f64,
}

impl<'a, P: LogDensity> GibbsPosterior<'a, P> {
    pub fn new(prior: &'a P, task: &'a Task, data: &'a [NoiseSequence], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ must be nonnegative, got {lambda}")));
        }
        if lambda > 0.0 && data.is_empty() {
            return Err(Error::InvalidArgument("Gibbs posterior needs data".into()));
        }
        if prior.dim() != task.dim() {
            return Err(Error::DimensionMismatch {
                expected: task.dim(),
                got: prior.dim(),
                context: "prior vs controller dimension",
            });
        }
        Ok(Self {
            prior,
            task,
            data,
            lambda,
        })
    }

    pub fn log_unnorm_t<T: Real>(&self, theta: &[T]) -> Result<T> {
        let lp = self.prior.log_density_t(theta)?;
        if self.lambda == 0.0 || lp.value() == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp - self.task.empirical_cost_t(theta, self.data)? * self.lambda)
    }

    pub fn log_unnorm(&self, theta: &[f64]) -> Result<f64> {
        self.log_unnorm_t(theta)
    }

    /// Value and gradient of the unnormalized log density.
    pub fn grad_log_unnorm(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let vars = tape.vars(theta);
        let lp = self.prior.log_density_t(&vars)?;
        let mut grad = tape.backward(lp)?.wrt_all(&vars);
        let mut value = lp.value();
        if self.lambda > 0.0 && value != f64::NEG_INFINITY {
            let (c, g) = self.task.empirical_cost_grad(theta, self.data)?;
            value -= self.lambda * c;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a -= self.lambda * b);
        }
        Ok((value, grad))
    }
}

/// `ln Σ exp(x_i)`, with `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln Ẑ = ln (1/N) Σ exp(−λ L̂_n)` from the empirical costs of prior samples.
pub fn log_partition_estimate(costs: &[f64], lambda: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::InvalidArgument("partition estimate needs samples".into()));
    }
    let terms: Vec<f64> = costs.iter().map(|c| -lambda * c).collect();
    Ok(log_sum_exp(&terms) - (costs.len() as f64).ln())
}

/// `Ẑ = (1/N) Σ exp(−λ L̂_n)`.
pub fn partition_estimate(costs: &[f64], lambda: f64) -> Result<f64> {
    Ok(log_partition_estimate(costs, lambda)?.exp())
}

/// Monte-Carlo Gibbs bounds from the empirical costs of `N_P` prior draws.
/// `E_Q[L̂]` for the lower bound is the self-normalized importance estimate
/// `Σ e^{−λL̂ᵢ} L̂ᵢ / Σ e^{−λL̂ᵢ}`.
pub fn gibbs_bound_mc(costs: &[f64], lambda: f64, delta: f64, c: f64, s: usize) -> Result<BoundReport> {
    let ln_z = log_partition_estimate(costs, lambda)?;
    let m = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut num, mut den) = (0.0, 0.0);
    for l in costs {
        let w = (-lambda * (l - m)).exp();
        num += w * l;
        den += w;
    }
    bounds_qstar_mc(num / den, ln_z, costs.len(), lambda, delta, c, s)
}

/// Empirical costs of `n` independent draws from `prior`, drawn sequentially
/// from one seeded stream and evaluated in parallel.
pub fn prior_sample_costs<P: LogDensity>(
    task: &Task,
    prior: &P,
    data: &[NoiseSequence],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let m = MC_CHUNK.min(n - out.len());
        let thetas: Vec<Vec<f64>> = (0..m).map(|_| prior.sample(&mut rng)).collect();
        let chunk: Vec<f64> = thetas
            .par_iter()
            .map(|t| task.empirical_cost(t, data))
            .collect::<Result<_>>()?;
        out.extend(chunk);
    }
    Ok(out)
}
