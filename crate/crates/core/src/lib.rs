//! PAC-Bayesian controller synthesis for stochastic nonlinear optimal control.
//!
//! Controllers are trained by sampling a Gibbs posterior over their
//! parameters, and every sampled controller comes with high-probability
//! upper and lower bounds on its out-of-sample closed-loop cost.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`] and [`linalg`]: a reverse-mode tape and small dense matrices
//!   over any [`autodiff::Real`].
//! - [`sim`]: plants, noise datasets and the rollout map.
//! - [`controller`]: affine feedback and the IMC-wrapped recurrent
//!   equilibrium network.
//! - [`cost`]: finite-horizon costs and the bounded tanh transform.
//! - [`pac`]: priors, Gibbs posteriors, the bound families, two-stage
//!   inference.
//! - [`inference`]: grid, SVGD and planar-flow posterior approximations.
//! - [`selection`]: bootstrap selection among posterior samples.
//! - [`training`]: gradient-based training loops.

pub mod autodiff;
pub mod controller;
pub mod cost;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod pac;
pub mod selection;
pub mod sim;
pub mod training;

pub use autodiff::{Real, Tape, Var};
pub use error::{Error, Result};
