//! Gradient episodic memory: constrained gradient projection and the
//! continual-learning trainer built on it.

mod project;

pub use project::{
    kkt_residual, project, project_with, qp_dual_solve, Projection, ProjectionStatus,
    DEFAULT_MAX_ITER, DEFAULT_TOL,
};

mod trainer;

pub(crate) use trainer::observe_gem;
