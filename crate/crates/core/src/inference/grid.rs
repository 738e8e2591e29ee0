//! Exact Gibbs posterior on a rectangular `(k, β)` grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pac::gibbs::{log_sum_exp, Task};
use crate::pac::prior::{Marginal, Prior};
use crate::sim::NoiseSequence;

/// Uniform axis of `n` cells over `[lo, hi]`, represented by cell centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution must be at least 2, got {n}")));
        }
        if !(lo < hi) {
            return Err(Error::InvalidArgument("grid axis needs lo < hi".into()));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }
}

/// Axes covering the prior: Gaussian factors span `mean ± n_std·σ`,
/// uniform factors their support.
pub fn axes_for_prior(prior: &Prior, resolution: usize, n_std: f64) -> Result<(Axis, Axis)> {
    let Prior::Product2d { k, beta } = prior else {
        return Err(Error::InvalidArgument("grid posterior needs a two-dimensional product prior".into()));
    };
    let (a, b) = k.extent(n_std);
    let (c, d) = beta.extent(n_std);
    Ok((Axis::new(a, b, resolution)?, Axis::new(c, d, resolution)?))
}

/// Prior probability of the grid rectangle.
pub fn prior_coverage(prior: &Prior, k: &Axis, beta: &Axis) -> Result<f64> {
    let Prior::Product2d { k: mk, beta: mb } = prior else {
        return Err(Error::InvalidArgument("coverage needs a product prior".into()));
    };
    Ok(mk.mass(k.lo, k.hi) * mb.mass(beta.lo, beta.hi))
}

fn marginal_log_weights(m: &Marginal, axis: &Axis) -> Vec<f64> {
    axis.centers().into_iter().map(|x| m.log_pdf_t(x)).collect()
}

/// Normalized log masses of the prior restricted to the grid (density at the
/// cell center, renormalized).
pub fn discretized_prior(prior: &Prior, k: &Axis, beta: &Axis) -> Result<Vec<f64>> {
    let Prior::Product2d { k: mk, beta: mb } = prior else {
        return Err(Error::InvalidArgument("grid prior needs a product prior".into()));
    };
    let wk = marginal_log_weights(mk, k);
    let wb = marginal_log_weights(mb, beta);
    let mut lp = Vec::with_capacity(k.n * beta.n);
    for a in &wk {
        lp.extend(wb.iter().map(|b| a + b));
    }
    let z = log_sum_exp(&lp);
    lp.iter_mut().for_each(|v| *v -= z);
    Ok(lp)
}

/// `L̂` at every cell center, `k`-major.
pub fn grid_costs(task: &Task, k: &Axis, beta: &Axis, seqs: &[NoiseSequence]) -> Result<Vec<f64>> {
    let ks = k.centers();
    let bs = beta.centers();
    (0..k.n * beta.n)
        .into_par_iter()
        .map(|c| task.empirical_cost(&[ks[c / beta.n], bs[c % beta.n]], seqs))
        .collect()
}

/// Draws cell indices from normalized log masses by inverse CDF.
pub fn sample_cells(log_mass: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(log_mass.len());
    let mut acc = 0.0;
    for l in log_mass {
        acc += l.exp();
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|c| *c <= u).min(log_mass.len() - 1)
        })
        .collect()
}

/// Gibbs posterior on the grid.
#[derive(Clone, Debug)]
pub struct GridPosterior {
    pub k_axis: Axis,
    pub beta_axis: Axis,
    /// Normalized log prior masses.
    pub log_prior: Vec<f64>,
    /// `L̂` per cell.
    pub costs: Vec<f64>,
    pub lambda: f64,
    /// Normalized log posterior masses.
    pub log_mass: Vec<f64>,
    /// Exact `ln Z = ln Σ P_i e^{−λ L̂_i}`.
    pub ln_z: f64,
}

impl GridPosterior {
    pub fn from_parts(k_axis: Axis, beta_axis: Axis, log_prior: Vec<f64>, costs: Vec<f64>, lambda: f64) -> Result<Self> {
        let cells = k_axis.n * beta_axis.n;
        if log_prior.len() != cells || costs.len() != cells {
            return Err(Error::DimensionMismatch {
                expected: cells,
                got: costs.len().min(log_prior.len()),
                context: "grid cell count",
            });
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument("λ must be nonnegative".into()));
        }
        let mut log_mass: Vec<f64> = log_prior.iter().zip(&costs).map(|(p, c)| p - lambda * c).collect();
        let ln_z = log_sum_exp(&log_mass);
        log_mass.iter_mut().for_each(|v| *v -= ln_z);
        Ok(Self {
            k_axis,
            beta_axis,
            log_prior,
            costs,
            lambda,
            log_mass,
            ln_z,
        })
    }

    /// Same prior and costs at another `λ`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_parts(self.k_axis, self.beta_axis, self.log_prior.clone(), self.costs.clone(), lambda)
    }

    pub fn num_cells(&self) -> usize {
        self.log_mass.len()
    }

    pub fn theta(&self, cell: usize) -> [f64; 2] {
        [
            self.k_axis.center(cell / self.beta_axis.n),
            self.beta_axis.center(cell % self.beta_axis.n),
        ]
    }

    pub fn masses(&self) -> Vec<f64> {
        self.log_mass.iter().map(|l| l.exp()).collect()
    }

    pub fn sample_cells(&self, n: usize, seed: u64) -> Vec<usize> {
        sample_cells(&self.log_mass, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<[f64; 2]> {
        self.sample_cells(n, seed).into_iter().map(|c| self.theta(c)).collect()
    }

    /// Posterior mean and variance of coordinate `0` (`k`) or `1` (`β`).
    pub fn moments(&self, coord: usize) -> (f64, f64) {
        let mut m = 0.0;
        let mut m2 = 0.0;
        for (c, l) in self.log_mass.iter().enumerate() {
            let p = l.exp();
            let x = self.theta(c)[coord];
            m += p * x;
            m2 += p * x * x;
        }
        (m, (m2 - m * m).max(0.0))
    }

    pub fn argmax(&self) -> usize {
        (0..self.num_cells())
            .max_by(|&a, &b| self.log_mass[a].total_cmp(&self.log_mass[b]))
            .expect("nonempty grid")
    }

    /// Total-variation distance to the discretized prior.
    pub fn tv_to_prior(&self) -> f64 {
        0.5 * self
            .log_mass
            .iter()
            .zip(&self.log_prior)
            .map(|(a, b)| (a.exp() - b.exp()).abs())
            .sum::<f64>()
    }
}

/// Grid posterior for a product prior: axes from the prior, costs on `seqs`.
pub fn grid_posterior(
    prior: &Prior,
    task: &Task,
    seqs: &[NoiseSequence],
    lambda: f64,
    resolution: usize,
    n_std: f64,
) -> Result<GridPosterior> {
    let (k, beta) = axes_for_prior(prior, resolution, n_std)?;
    let log_prior = discretized_prior(prior, &k, &beta)?;
    let costs = grid_costs(task, &k, &beta, seqs)?;
    GridPosterior::from_parts(k, beta, log_prior, costs, lambda)
}
