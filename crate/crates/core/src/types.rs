//! Domain types shared by every agent, Gaussian sampling and regret accounting.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// A Gaussian `N(mean, v² Σ)` where `Σ` is stored as `cov_core` and `v` as
/// `noise_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: Vector,
    cov_core: Matrix,
    noise_scale: f64,
    factor: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov_core: Matrix, noise_scale: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidBelief("empty mean vector".into()));
        }
        if cov_core.nrows() != d || cov_core.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov_core.nrows(),
            });
        }
        if !(noise_scale > 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidBelief(format!(
                "noise scale must be positive, got {noise_scale}"
            )));
        }
        let cov_core = linalg::symmetrized(cov_core);
        let factor = linalg::cholesky(&cov_core, "belief covariance")
            .map_err(|_| Error::InvalidBelief("covariance is not positive definite".into()))?
            .unpack();
        Ok(Self {
            mean,
            cov_core,
            noise_scale,
            factor,
        })
    }

    /// `N(0, v² I)` in `d` dimensions.
    pub fn standard(d: usize, noise_scale: f64) -> Result<Self> {
        Self::new(Vector::zeros(d), Matrix::identity(d, d), noise_scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov_core(&self) -> &Matrix {
        &self.cov_core
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Full covariance `v² Σ`.
    pub fn covariance(&self) -> Matrix {
        &self.cov_core * (self.noise_scale * self.noise_scale)
    }

    pub fn with_mean(&self, mean: Vector) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        Ok(Self {
            mean,
            ..self.clone()
        })
    }

    /// `mean + v L z` for a caller-supplied standard-normal vector `z`.
    pub fn transform_normals(&self, z: &Vector) -> Vector {
        &self.mean + (&self.factor * z) * self.noise_scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = standard_normal_vector(self.dim(), rng);
        self.transform_normals(&z)
    }
}

/// Draws from `belief`; see [`GaussianBelief::sample`].
pub fn sample_gaussian<R: Rng + ?Sized>(belief: &GaussianBelief, rng: &mut R) -> Vector {
    belief.sample(rng)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// One bandit instance, the parameter `μ_s` of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditInstance {
    pub mu: Vector,
}

impl BanditInstance {
    pub fn new(mu: Vector) -> Self {
        Self { mu }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn expected_reward(&self, context: &Vector) -> f64 {
        context.dot(&self.mu)
    }
}

/// The `k` context vectors shown in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContexts {
    vectors: Vec<Vector>,
    round: usize,
}

impl RoundContexts {
    pub fn new(vectors: Vec<Vector>, round: usize) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::Precondition("a round needs at least one arm".into()));
        };
        let d = first.len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { vectors, round })
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn arm(&self, i: usize) -> Result<&Vector> {
        self.vectors.get(i).ok_or(Error::ArmOutOfRange {
            index: i,
            arms: self.vectors.len(),
        })
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Lowest-index arm maximizing `b_iᵀ θ`.
    pub fn best_arm(&self, theta: &Vector) -> usize {
        linalg::argmax(self.vectors.iter().map(|b| b.dot(theta))).unwrap_or(0)
    }
}

/// What was pulled in a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pull {
    Arm(usize),
    /// One arm per sub-bandit of a sequential bandit.
    Combination(Vec<usize>),
    /// A point of a polyhedral arm set; the point itself is the context.
    Point,
}

/// One observed interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub round: usize,
    pub pulled: Pull,
    pub context: Vector,
    pub reward: f64,
}

/// Gap between the best arm and the pulled arm under `instance`.
pub fn instant_regret(
    instance: &BanditInstance,
    contexts: &RoundContexts,
    pulled: usize,
) -> Result<f64> {
    if contexts.dim() != instance.dim() {
        return Err(Error::DimensionMismatch {
            expected: instance.dim(),
            got: contexts.dim(),
        });
    }
    let chosen = instance.expected_reward(contexts.arm(pulled)?);
    let best = contexts
        .vectors()
        .iter()
        .map(|b| instance.expected_reward(b))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - chosen)
}

/// The four agents compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    MetaTslb,
    MetaTs,
    OracleTs,
    MarginalTs,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::OracleTs,
        AgentKind::MetaTslb,
        AgentKind::MetaTs,
        AgentKind::MarginalTs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::MetaTslb => "meta_tslb",
            AgentKind::MetaTs => "meta_ts",
            AgentKind::OracleTs => "oracle_ts",
            AgentKind::MarginalTs => "marginal_ts",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub run: usize,
    pub task: usize,
    pub round: usize,
    pub agent: AgentKind,
    pub instant_regret: f64,
    pub cumulative_regret: f64,
}

/// Per `(run, task, round, agent)` regret records. Tasks and rounds are 1-based.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub records: Vec<RegretRecord>,
}

impl RegretTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one task's per-round instant regrets, accumulating within the task.
    pub fn push_task(&mut self, run: usize, task: usize, agent: AgentKind, instant: &[f64]) {
        let mut cumulative = 0.0;
        for (t, &r) in instant.iter().enumerate() {
            cumulative += r;
            self.records.push(RegretRecord {
                run,
                task,
                round: t + 1,
                agent,
                instant_regret: r,
                cumulative_regret: cumulative,
            });
        }
    }

    pub fn extend(&mut self, other: RegretTrace) {
        self.records.extend(other.records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks nonnegativity of instant regret (up to `tol`) and monotone
    /// accumulation within every `(run, task, agent)`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let mut prev: Option<&RegretRecord> = None;
        for rec in &self.records {
            if rec.instant_regret < -tol {
                return Err(Error::Precondition(format!(
                    "negative instant regret {} at run {} task {} round {}",
                    rec.instant_regret, rec.run, rec.task, rec.round
                )));
            }
            if let Some(p) = prev {
                let same = p.run == rec.run && p.task == rec.task && p.agent == rec.agent;
                if same && rec.cumulative_regret < p.cumulative_regret - tol {
                    return Err(Error::Precondition(format!(
                        "cumulative regret decreased at run {} task {} round {}",
                        rec.run, rec.task, rec.round
                    )));
                }
            }
            prev = Some(rec);
        }
        Ok(())
    }
}
