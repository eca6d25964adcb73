//! Meta-learned Thompson sampling for linear contextual bandits.
//!
//! A learner faces `m` tasks of `n` rounds. Each task's parameter is drawn
//! from an unknown Gaussian instance prior whose mean is itself drawn from a
//! known Gaussian meta-prior. The crate provides
//!
//! * [`ts`]: Thompson sampling with an arbitrary Gaussian prior,
//! * [`meta`]: Meta-TSLB, Meta-TS, OracleTS and marginal TS agents with the
//!   exact Gaussian meta-posterior update,
//! * [`variants`]: finite prior banks, polyhedral arm sets and sequential bandits,
//! * [`theory`]: regret-bound constants and checks of the supporting inequalities,
//! * [`harness`]: seeded, run-parallel experiments with CSV output.

pub mod env;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod meta;
pub mod parallel;
pub mod rng;
pub mod theory;
pub mod ts;
pub mod types;
pub mod variants;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use types::{
    instant_regret, sample_gaussian, AgentKind, BanditInstance, GaussianBelief, HistoryEntry,
    Pull, RegretRecord, RegretTrace, RoundContexts,
};
