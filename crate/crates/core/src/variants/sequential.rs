//! Sequential linear bandits: `p` sub-bandits are pulled in order each round
//! and their context vectors are combined by `Γ` into one vector
//! `b(t) = Γ(b_{1,A₁}, …, b_{p,A_p})` that bears the reward.

use crate::env::{RoundNoise, UniformContexts};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::meta::TaskRunner;
use crate::rng::Purpose;
use crate::ts::{ts_init, ts_update, TaskOutcome};
use crate::types::{BanditInstance, GaussianBelief, HistoryEntry, Pull};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma {
    /// Only for `p = 1`.
    Identity,
    /// Elementwise product of the `p` vectors.
    Hadamard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialSpec {
    pub arm_counts: Vec<usize>,
    pub gamma: Gamma,
    /// Arms assumed for the "previous round" in round 1 (0-based).
    pub initial_arms: Vec<usize>,
    pub d: usize,
}

impl SequentialSpec {
    pub fn new(arm_counts: Vec<usize>, gamma: Gamma, d: usize) -> Result<Self> {
        let p = arm_counts.len();
        let spec = Self {
            initial_arms: vec![0; p],
            arm_counts,
            gamma,
            d,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn p(&self) -> usize {
        self.arm_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arm_counts.is_empty() || self.arm_counts.contains(&0) {
            return Err(Error::Precondition("every sub-bandit needs at least one arm".into()));
        }
        if self.gamma == Gamma::Identity && self.p() != 1 {
            return Err(Error::Precondition("identity Γ requires p = 1".into()));
        }
        if self.initial_arms.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: self.initial_arms.len(),
            });
        }
        for (&a, &k) in self.initial_arms.iter().zip(&self.arm_counts) {
            if a >= k {
                return Err(Error::ArmOutOfRange { index: a, arms: k });
            }
        }
        Ok(())
    }

    /// `Γ` applied to the chosen vector of each sub-bandit.
    pub fn combine(&self, contexts: &SequentialContexts, arms: &[usize]) -> Result<Vector> {
        let mut out = contexts.arm(0, arms[0])?.clone();
        for (i, &a) in arms.iter().enumerate().skip(1) {
            out.component_mul_assign(contexts.arm(i, a)?);
        }
        Ok(out)
    }

    /// `ψ(θ, A) = Γ(b_{1,A₁}, …)ᵀ θ`.
    pub fn psi(&self, contexts: &SequentialContexts, theta: &Vector, arms: &[usize]) -> Result<f64> {
        Ok(self.combine(contexts, arms)?.dot(theta))
    }

    /// One sweep of coordinate-wise argmax: sub-bandit `i` maximizes `ψ` with
    /// sub-bandits before it at their new arms and those after it at `prev`.
    pub fn coordinate_argmax(
        &self,
        contexts: &SequentialContexts,
        theta: &Vector,
        prev: &[usize],
    ) -> Result<Vec<usize>> {
        let mut arms = prev.to_vec();
        for i in 0..self.p() {
            let mut values = Vec::with_capacity(self.arm_counts[i]);
            for a in 0..self.arm_counts[i] {
                arms[i] = a;
                values.push(self.psi(contexts, theta, &arms)?);
            }
            arms[i] = linalg::argmax(values).unwrap_or(0);
        }
        Ok(arms)
    }

    /// `max_A ψ(θ, A)` over every arm combination. Partial products are
    /// formed in the same order as [`combine`](Self::combine), so the value
    /// of any particular combination is reproduced bit for bit.
    pub fn optimal_value(&self, contexts: &SequentialContexts, theta: &Vector) -> f64 {
        fn walk(
            level: usize,
            buffers: &mut [Vector],
            contexts: &SequentialContexts,
            theta: &Vector,
            best: &mut f64,
        ) {
            let last = contexts.per_bandit.len() - 1;
            for b in &contexts.per_bandit[level] {
                if level == 0 {
                    buffers[0].copy_from(b);
                } else {
                    let (done, rest) = buffers.split_at_mut(level);
                    rest[0].copy_from(&done[level - 1]);
                    rest[0].component_mul_assign(b);
                }
                if level == last {
                    *best = best.max(buffers[level].dot(theta));
                } else {
                    walk(level + 1, buffers, contexts, theta, best);
                }
            }
        }
        let mut buffers = vec![Vector::zeros(theta.len()); contexts.per_bandit.len()];
        let mut best = f64::NEG_INFINITY;
        walk(0, &mut buffers, contexts, theta, &mut best);
        best
    }
}

/// Context vectors of every sub-bandit in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialContexts {
    pub per_bandit: Vec<Vec<Vector>>,
    pub round: usize,
}

impl SequentialContexts {
    pub fn arm(&self, bandit: usize, arm: usize) -> Result<&Vector> {
        let arms = self
            .per_bandit
            .get(bandit)
            .ok_or(Error::ArmOutOfRange { index: bandit, arms: self.per_bandit.len() })?;
        arms.get(arm).ok_or(Error::ArmOutOfRange { index: arm, arms: arms.len() })
    }
}

pub trait SequentialSource: Sync {
    fn contexts(&self, task: usize, round: usize) -> Result<SequentialContexts>;
}

/// Uniform contexts for each sub-bandit, drawn in sub-bandit order from the
/// round's `Contexts` substream. With one sub-bandit this reproduces
/// [`UniformContexts`] exactly.
#[derive(Debug, Clone)]
pub struct UniformSequentialContexts {
    pub base: UniformContexts,
    pub arm_counts: Vec<usize>,
}

impl SequentialSource for UniformSequentialContexts {
    fn contexts(&self, task: usize, round: usize) -> Result<SequentialContexts> {
        let task_key = if self.base.shared { 0 } else { task };
        let mut rng = self
            .base
            .tree
            .stream(self.base.run, task_key, round, Purpose::Contexts);
        let per_bandit = self
            .arm_counts
            .iter()
            .map(|&k| (0..k).map(|_| self.base.draw_vector(&mut rng)).collect())
            .collect();
        Ok(SequentialContexts { per_bandit, round })
    }
}

/// Thompson sampling for a sequential bandit: one posterior sample per round,
/// one coordinate sweep, one reward on the combined vector.
pub fn run_sequential_ts(
    spec: &SequentialSpec,
    prior: &GaussianBelief,
    instance: &BanditInstance,
    source: &dyn SequentialSource,
    task: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
) -> Result<TaskOutcome> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Precondition("a task needs at least one round".into()));
    }
    let d = prior.dim();
    let v = prior.noise_scale();
    let mut state = ts_init(prior)?;
    let mut prev = spec.initial_arms.clone();
    let mut history = Vec::with_capacity(n);
    let mut regret = Vec::with_capacity(n);
    for t in 1..=n {
        let mut step = || -> Result<(HistoryEntry, f64, _, Vec<usize>)> {
            let ctx = source.contexts(task, t)?;
            let z = noise.posterior_normals(task, t, d);
            let sample = state.sample_from_normals(&z);
            let arms = spec.coordinate_argmax(&ctx, &sample, &prev)?;
            let b = spec.combine(&ctx, &arms)?;
            if b.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: b.len() });
            }
            let gap = spec.optimal_value(&ctx, &instance.mu) - b.dot(&instance.mu);
            let reward = instance.expected_reward(&b) + v * noise.reward_noise(task, t);
            let next = ts_update(&state, &b, reward)?;
            let entry = HistoryEntry {
                round: t,
                pulled: Pull::Combination(arms.clone()),
                context: b,
                reward,
            };
            Ok((entry, gap, next, arms))
        };
        let (entry, gap, next, arms) = step().map_err(|e| e.in_round(t))?;
        history.push(entry);
        regret.push(gap);
        state = next;
        prev = arms;
    }
    Ok(TaskOutcome {
        history,
        instant_regret: regret,
        final_state: state,
    })
}

pub struct SequentialTasks<'a> {
    pub spec: &'a SequentialSpec,
    pub source: &'a dyn SequentialSource,
}

impl TaskRunner for SequentialTasks<'_> {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn run_task(
        &self,
        prior: &GaussianBelief,
        instance: &BanditInstance,
        task: usize,
        n: usize,
        noise: &mut dyn RoundNoise,
    ) -> Result<TaskOutcome> {
        run_sequential_ts(self.spec, prior, instance, self.source, task, n, noise)
    }
}
