//! Priors, Gibbs posteriors and the PAC-Bayes bound families.

pub mod bounds;
pub mod gibbs;
pub mod prior;
pub mod two_stage;

pub use bounds::{
    bound_randomized, bounds_qstar_exact, bounds_qstar_mc, lambda_star, mcdiarmid_correction, union_delta,
    BoundFamily, BoundReport,
};
pub use gibbs::{
    gibbs_bound_mc, log_partition_estimate, log_sum_exp, partition_estimate, prior_sample_costs, true_cost_mc, GibbsPosterior,
    McEstimate, SequenceOutcome, Task,
};
pub use prior::{LogDensity, Marginal, Prior};
pub use two_stage::{stage_lambdas, two_stage_grid, two_stage_split_search, LambdaChoice, Split, SplitSearch};
