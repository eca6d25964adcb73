//! Extensions of the linear bandit: a finite bank of candidate instance
//! priors, polyhedral (infinite) arm sets, and sequential bandits whose
//! sub-bandit choices are combined into one context.

pub mod finite;
pub mod polyhedron;
pub mod sequential;
pub mod simplex;

pub use finite::{finite_prior_select, finite_prior_update, PriorBank};
pub use polyhedron::{lp_argmax, Polyhedron};
pub use sequential::{run_sequential_ts, Gamma, SequentialSpec};
