//! Posterior approximations: exact grid, SVGD particles and planar flows.

pub mod flow;
pub mod grid;
pub mod svgd;

pub use flow::{flow_train, planar_forward, planar_inverse, FlowTrainOptions, LogTarget, PlanarFlow, PlanarLayer};
pub use grid::{grid_posterior, Axis, GridPosterior};
pub use svgd::{median_bandwidth, svgd_step, Bandwidth};
