//! Bootstrap selection among posterior samples.
//!
//! Each candidate is scored by the mean of its out-of-bag costs over `B`
//! resamples. The bound for the selected controller must use `δ/N_Q`
//! (see [`crate::pac::union_delta`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pac::gibbs::Task;
use crate::sim::NoiseSequence;

/// Redraw budget for resamples that leave nothing out of bag.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapEstimate {
    pub candidate: usize,
    /// `L̂` on the full dataset.
    pub full_cost: f64,
    /// Out-of-bag mean cost for each resample.
    pub oob_costs: Vec<f64>,
    /// Mean of `oob_costs`.
    pub score: f64,
    pub resamples: usize,
}

/// Out-of-bag index sets of `b` resamples of `s` items.
pub fn draw_out_of_bag(s: usize, b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(b);
    for _ in 0..b {
        let mut found = None;
        for _ in 0..=MAX_REDRAWS {
            let mut in_bag = vec![false; s];
            for _ in 0..s {
                in_bag[rng.random_range(0..s)] = true;
            }
            let oob: Vec<usize> = (0..s).filter(|&i| !in_bag[i]).collect();
            if !oob.is_empty() {
                found = Some(oob);
                break;
            }
        }
        out.push(found.ok_or(Error::EmptyOutOfBag)?);
    }
    Ok(out)
}

/// Selection from a precomputed cost matrix `costs[candidate][sequence]`.
pub fn bootstrap_select_costs(costs: &[Vec<f64>], b: usize, seed: u64) -> Result<(usize, Vec<BootstrapEstimate>)> {
    if costs.is_empty() || b == 0 {
        return Err(Error::InvalidArgument("need candidates and at least one resample".into()));
    }
    let s = costs[0].len();
    if s == 0 || costs.iter().any(|c| c.len() != s) {
        return Err(Error::InvalidArgument("every candidate needs one cost per sequence".into()));
    }
    let bags = draw_out_of_bag(s, b, seed)?;
    let estimates: Vec<BootstrapEstimate> = costs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let oob_costs: Vec<f64> = bags
                .iter()
                .map(|oob| oob.iter().map(|&j| c[j]).sum::<f64>() / oob.len() as f64)
                .collect();
            BootstrapEstimate {
                candidate: i,
                full_cost: c.iter().sum::<f64>() / s as f64,
                score: oob_costs.iter().sum::<f64>() / b as f64,
                oob_costs,
                resamples: b,
            }
        })
        .collect();
    let best = estimates
        .iter()
        .min_by(|x, y| {
            x.score
                .total_cmp(&y.score)
                .then(x.full_cost.total_cmp(&y.full_cost))
                .then(x.candidate.cmp(&y.candidate))
        })
        .map(|e| e.candidate)
        .expect("nonempty");
    Ok((best, estimates))
}

/// Evaluates every candidate on every sequence and selects by out-of-bag score.
pub fn bootstrap_select(
    task: &Task,
    candidates: &[Vec<f64>],
    seqs: &[NoiseSequence],
    b: usize,
    seed: u64,
) -> Result<(usize, Vec<BootstrapEstimate>)> {
    let costs: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|th| task.sequence_costs(th, seqs))
        .collect::<Result<_>>()?;
    bootstrap_select_costs(&costs, b, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_candidate_wins() {
        let costs = vec![vec![0.5, 0.6, 0.7, 0.4], vec![0.1, 0.2, 0.3, 0.1], vec![0.9, 0.8, 0.7, 0.9]];
        let (best, est) = bootstrap_select_costs(&costs, 50, 1).unwrap();
        assert_eq!(best, 1);
        assert_eq!(est.len(), 3);
        assert!(est.iter().all(|e| e.oob_costs.len() == 50));
    }

    #[test]
    fn ties_use_full_cost_then_index() {
        let costs = vec![vec![0.3; 5], vec![0.3; 5]];
        assert_eq!(bootstrap_select_costs(&costs, 10, 0).unwrap().0, 0);
    }

    #[test]
    fn single_sequence_has_no_out_of_bag() {
        assert!(matches!(draw_out_of_bag(1, 3, 0), Err(Error::EmptyOutOfBag)));
    }

    #[test]
    fn reproducible() {
        let costs = vec![vec![0.3, 0.1, 0.5], vec![0.2, 0.4, 0.2]];
        assert_eq!(bootstrap_select_costs(&costs, 20, 9).unwrap(), bootstrap_select_costs(&costs, 20, 9).unwrap());
    }
}
