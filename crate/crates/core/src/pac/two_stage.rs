//! Two-stage inference: a data-dependent prior learned on one split and
//! certified on the other.

use crate::error::{Error, Result};
use crate::inference::grid::{Axis, GridPosterior};
use crate::pac::bounds::{mcdiarmid_correction, BoundReport};

/// Sizes of the two disjoint data splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Split {
    pub s1: usize,
    pub s2: usize,
}

impl Split {
    pub fn new(s1: usize, s2: usize) -> Result<Self> {
        if s2 == 0 {
            return Err(Error::InvalidArgument("the certified split must be nonempty".into()));
        }
        Ok(Self { s1, s2 })
    }

    pub fn total(&self) -> usize {
        self.s1 + self.s2
    }

    /// All splits of `s` with a nonempty second stage.
    pub fn all(s: usize) -> Vec<Split> {
        (0..s).map(|s1| Split { s1, s2: s - s1 }).collect()
    }
}

/// `λ₁ = (S₁/S)λ`, `λ₂ = (S₂/S)λ`.
pub fn stage_lambdas(lambda: f64, split: Split) -> (f64, f64) {
    let s = split.total() as f64;
    (lambda * split.s1 as f64 / s, lambda * split.s2 as f64 / s)
}

/// Stage-1 and stage-2 grid posteriors. `costs1` is `None` when `S₁ = 0`.
pub fn two_stage_grid(
    k: Axis,
    beta: Axis,
    log_prior: Vec<f64>,
    costs1: Option<Vec<f64>>,
    costs2: Vec<f64>,
    split: Split,
    lambda: f64,
) -> Result<(GridPosterior, GridPosterior)> {
    let (l1, l2) = stage_lambdas(lambda, split);
    let q1 = match (costs1, split.s1) {
        (None, 0) => GridPosterior::from_parts(k, beta, log_prior.clone(), vec![0.0; log_prior.len()], 0.0)?,
        (Some(c1), s1) if s1 > 0 => GridPosterior::from_parts(k, beta, log_prior, c1, l1)?,
        _ => return Err(Error::InvalidArgument("stage-1 costs must be given exactly when S₁ > 0".into())),
    };
    let q2 = GridPosterior::from_parts(k, beta, q1.log_mass.clone(), costs2, l2)?;
    Ok((q1, q2))
}

/// Data-free part of the stage-2 Monte-Carlo bound:
/// `(1/λ₂)ln(1/δ) + λ₂C²/(8S₂) + correction(λ₂, N_P)`.
pub fn stage2_constant(lambda2: f64, s2: usize, delta: f64, c: f64, n_p: usize) -> Result<f64> {
    if s2 == 0 {
        return Err(Error::InvalidArgument("S₂ must be positive".into()));
    }
    Ok((1.0 / delta).ln() / lambda2
        + lambda2 * c * c / (8.0 * s2 as f64)
        + mcdiarmid_correction(lambda2, c, n_p, delta)?)
}

/// `λ₂` minimizing [`stage2_constant`]; depends only on `S₂`, `δ`, `C`, `N_P`.
pub fn stage2_lambda(s2: usize, delta: f64, c: f64, n_p: usize) -> Result<f64> {
    let f = |ll: f64| stage2_constant(ll.exp(), s2, delta, c, n_p);
    let upper = (8.0 * s2 as f64 * (1.0 / delta).ln()).sqrt() / c;
    let (mut a, mut b) = ((1e-3f64).ln(), (2.0 * upper).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..200 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
        if b - a < 1e-10 {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// How the overall `λ` is fixed for each candidate split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaChoice {
    /// The same overall `λ` for every split; `λ₂ = (S₂/S)λ`.
    Fixed(f64),
    /// Overall `λ = (S/S₂)·λ₂` with `λ₂` from [`stage2_lambda`].
    Stage2Optimal,
}

impl LambdaChoice {
    pub fn overall(&self, split: Split, delta: f64, c: f64, n_p: usize) -> Result<f64> {
        match *self {
            LambdaChoice::Fixed(l) => Ok(l),
            LambdaChoice::Stage2Optimal => {
                let l2 = stage2_lambda(split.s2, delta, c, n_p)?;
                Ok(l2 * split.total() as f64 / split.s2 as f64)
            }
        }
    }
}

/// Outcome of the split search.
#[derive(Clone, Debug)]
pub struct SplitSearch {
    pub best: Split,
    pub lambda: f64,
    pub report: BoundReport,
    /// Every candidate with its constant term, best first.
    pub ranking: Vec<(Split, f64)>,
    /// Fully evaluated candidates.
    pub evaluated: Vec<(Split, BoundReport)>,
}

/// Ranks candidates by the stage-2 constant terms, fully evaluates the best
/// `top` of them with `evaluate(split, λ)` and keeps the tightest upper bound.
/// Ties prefer the smaller `S₁`.
pub fn two_stage_split_search<F>(
    candidates: &[Split],
    lambda: LambdaChoice,
    delta: f64,
    c: f64,
    n_p: usize,
    top: usize,
    mut evaluate: F,
) -> Result<SplitSearch>
where
    F: FnMut(Split, f64) -> Result<BoundReport>,
{
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate splits".into()));
    }
    let mut ranking = Vec::with_capacity(candidates.len());
    for &sp in candidates {
        let l = lambda.overall(sp, delta, c, n_p)?;
        let (_, l2) = stage_lambdas(l, sp);
        ranking.push((sp, stage2_constant(l2, sp.s2, delta, c, n_p)?));
    }
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.s1.cmp(&b.0.s1)));
    let mut evaluated = Vec::new();
    for &(sp, _) in ranking.iter().take(top.max(1)) {
        let l = lambda.overall(sp, delta, c, n_p)?;
        evaluated.push((sp, l, evaluate(sp, l)?));
    }
    let (best, best_lambda, report) = evaluated
        .iter()
        .min_by(|a, b| a.2.upper.total_cmp(&b.2.upper).then(a.0.s1.cmp(&b.0.s1)))
        .cloned()
        .expect("at least one evaluated split");
    Ok(SplitSearch {
        best,
        lambda: best_lambda,
        report,
        ranking,
        evaluated: evaluated.into_iter().map(|(s, _, r)| (s, r)).collect(),
    })
}
