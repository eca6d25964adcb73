//! Thompson sampling for linear bandits with a Gaussian prior.
//!
//! The posterior after `t-1` observations is `N(μ̂(t), v² B(t)⁻¹)` with
//! `B(t) = B(1) + Σ b bᵀ` and `μ̂(t) = B(t)⁻¹ [B(1) μ̂(1) + Σ b r]`.
//! The precision `B(t)` is stored, never its inverse.

use crate::env::{ContextSource, RoundNoise};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::types::{BanditInstance, GaussianBelief, HistoryEntry, Pull, RoundContexts};

/// Posterior recursion state.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    precision: Matrix,
    mean: Vector,
    round: usize,
    info_accum: Vector,
    prior_info: Vector,
    noise_scale: f64,
    factor: Matrix,
}

impl PosteriorState {
    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    /// 1-based index of the round about to be played.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn info_accum(&self) -> &Vector {
        &self.info_accum
    }

    /// `B(1) μ̂(1)`.
    pub fn prior_info(&self) -> &Vector {
        &self.prior_info
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `μ̂ + v L⁻ᵀ z` where `B = L Lᵀ`, a draw from `N(μ̂, v² B⁻¹)` when `z` is standard normal.
    pub fn sample_from_normals(&self, z: &Vector) -> Vector {
        let offset = self
            .factor
            .tr_solve_lower_triangular(z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + offset * self.noise_scale
    }

    /// `bᵀ B(t)⁻¹ b`.
    pub fn predictive_variance_core(&self, b: &Vector) -> f64 {
        let y = self
            .factor
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }

    /// The posterior as a belief, `N(μ̂, v² B⁻¹)`.
    pub fn belief(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(
            self.mean.clone(),
            linalg::spd_inverse(&self.precision, "posterior precision")?,
            self.noise_scale,
        )
    }
}

pub fn ts_init(prior: &GaussianBelief) -> Result<PosteriorState> {
    let precision = linalg::spd_inverse(prior.cov_core(), "prior covariance")?;
    let factor = linalg::cholesky(&precision, "prior precision")?.unpack();
    let prior_info = &precision * prior.mean();
    Ok(PosteriorState {
        mean: prior.mean().clone(),
        info_accum: Vector::zeros(prior.dim()),
        round: 1,
        noise_scale: prior.noise_scale(),
        precision,
        prior_info,
        factor,
    })
}

/// The arm chosen in one round and the posterior sample that chose it.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub arm: usize,
    pub sample: Vector,
}

/// Picks `argmax_i b_iᵀ μ̃` for `μ̃ = state.sample_from_normals(z)`.
pub fn ts_select_with_normals(
    state: &PosteriorState,
    contexts: &RoundContexts,
    z: &Vector,
) -> Result<Selection> {
    if contexts.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: contexts.dim(),
        });
    }
    let sample = state.sample_from_normals(z);
    Ok(Selection {
        arm: contexts.best_arm(&sample),
        sample,
    })
}

pub fn ts_select(
    state: &PosteriorState,
    contexts: &RoundContexts,
    noise: &mut dyn RoundNoise,
    task: usize,
) -> Result<Selection> {
    let z = noise.posterior_normals(task, contexts.round(), state.dim());
    ts_select_with_normals(state, contexts, &z)
}

pub fn ts_update(state: &PosteriorState, context: &Vector, reward: f64) -> Result<PosteriorState> {
    if context.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: context.len(),
        });
    }
    let mut precision = state.precision.clone();
    precision.ger(1.0, context, context, 1.0);
    linalg::symmetrize(&mut precision);
    let info_accum = &state.info_accum + context * reward;
    let chol = linalg::cholesky(&precision, "posterior precision")?;
    let mean = chol.solve(&(&state.prior_info + &info_accum));
    Ok(PosteriorState {
        precision,
        mean,
        round: state.round + 1,
        info_accum,
        prior_info: state.prior_info.clone(),
        noise_scale: state.noise_scale,
        factor: chol.unpack(),
    })
}

/// History and per-round instant regret of one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub history: Vec<HistoryEntry>,
    pub instant_regret: Vec<f64>,
    pub final_state: PosteriorState,
}

impl TaskOutcome {
    pub fn total_regret(&self) -> f64 {
        self.instant_regret.iter().sum()
    }
}

/// Called once per round with the state before selection and the round's contexts.
pub type RoundObserver<'a> = dyn FnMut(&PosteriorState, &RoundContexts) + 'a;

/// Runs `n` rounds of TS on `instance`; rewards are `bᵀμ + v·noise`.
pub fn run_ts_task(
    prior: &GaussianBelief,
    instance: &BanditInstance,
    contexts: &dyn ContextSource,
    task: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
) -> Result<TaskOutcome> {
    run_ts_task_observed(prior, instance, contexts, task, n, noise, &mut |_, _| {})
}

pub fn run_ts_task_observed(
    prior: &GaussianBelief,
    instance: &BanditInstance,
    contexts: &dyn ContextSource,
    task: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
    observer: &mut RoundObserver<'_>,
) -> Result<TaskOutcome> {
    if n == 0 {
        return Err(Error::Precondition("a task needs at least one round".into()));
    }
    if instance.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            got: instance.dim(),
        });
    }
    let v = prior.noise_scale();
    let mut state = ts_init(prior)?;
    let mut history = Vec::with_capacity(n);
    let mut regret = Vec::with_capacity(n);
    for t in 1..=n {
        let mut step = || -> Result<(HistoryEntry, f64, PosteriorState)> {
            let ctx = contexts.contexts(task, t)?;
            observer(&state, &ctx);
            let sel = ts_select(&state, &ctx, noise, task)?;
            let b = ctx.arm(sel.arm)?.clone();
            let gap = crate::types::instant_regret(instance, &ctx, sel.arm)?;
            let reward = instance.expected_reward(&b) + v * noise.reward_noise(task, t);
            let next = ts_update(&state, &b, reward)?;
            let entry = HistoryEntry {
                round: t,
                pulled: Pull::Arm(sel.arm),
                context: b,
                reward,
            };
            Ok((entry, gap, next))
        };
        let (entry, gap, next) = step().map_err(|e| e.in_round(t))?;
        history.push(entry);
        regret.push(gap);
        state = next;
    }
    Ok(TaskOutcome {
        history,
        instant_regret: regret,
        final_state: state,
    })
}
