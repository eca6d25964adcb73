//! Experiment configuration, read from JSON. Every field has a default, so
//! `{}` is the default linear experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::AgentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Linear,
    FinitePriors,
    InfiniteArms,
    Sequential,
    Generalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Tasks per run.
    pub m: usize,
    /// Rounds per task.
    pub n: usize,
    /// Arms per round (linear, finite priors, generalization).
    pub k: usize,
    pub d: usize,
    pub runs: usize,
    /// Reward noise standard deviation.
    pub v: f64,
    pub context_low: f64,
    pub context_high: f64,
    /// Project contexts onto the unit ball.
    pub normalize_contexts: bool,
    /// Same contexts in round `t` of every task.
    pub shared_contexts: bool,
    /// Size of the prior bank.
    #[serde(alias = "L")]
    pub num_priors: usize,
    /// Bank means are uniform on `[−w, w]^d`.
    pub prior_mean_half_width: f64,
    /// Number of sub-bandits.
    pub p: usize,
    pub arm_counts: Vec<usize>,
    /// Random constraints per polyhedron, before the bounding box.
    pub polytope_rows: usize,
    pub box_half_width: f64,
    /// Norms of the generalization offset.
    pub epsilon_norms: Vec<f64>,
    /// Entries of generated covariances stay below this bound.
    pub max_cov_entry: f64,
    pub root_seed: u64,
    pub agents: Vec<AgentKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Linear,
            m: 20,
            n: 200,
            k: 20,
            d: 5,
            runs: 100,
            v: 0.2,
            context_low: 0.0,
            context_high: 50.0,
            normalize_contexts: false,
            shared_contexts: false,
            num_priors: 50,
            prior_mean_half_width: 1.0,
            p: 3,
            arm_counts: vec![20, 15, 5],
            polytope_rows: 5,
            box_half_width: 50.0,
            epsilon_norms: vec![0.0, 1.0, 3.0, 6.0],
            max_cov_entry: 3.0,
            root_seed: 20240101,
            agents: AgentKind::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_experiment(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, x) in [("m", self.m), ("n", self.n), ("k", self.k), ("d", self.d), ("runs", self.runs)] {
            if x == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return bad(format!("v must be positive, got {}", self.v));
        }
        if !(self.context_low <= self.context_high) {
            return bad("context_low must not exceed context_high".into());
        }
        if self.agents.is_empty() {
            return bad("agents must be nonempty".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].contains(a) {
                return bad(format!("agent {a} listed twice"));
            }
        }
        if !(self.max_cov_entry > 0.0) {
            return bad("max_cov_entry must be positive".into());
        }
        match self.experiment {
            ExperimentKind::FinitePriors => {
                if self.num_priors == 0 {
                    return bad("L must be at least 1".into());
                }
                if !(self.prior_mean_half_width >= 0.0) {
                    return bad("prior_mean_half_width must be nonnegative".into());
                }
            }
            ExperimentKind::InfiniteArms => {
                if !(self.box_half_width > 0.0) {
                    return bad("box_half_width must be positive".into());
                }
            }
            ExperimentKind::Sequential => {
                if self.arm_counts.len() != self.p || self.p == 0 {
                    return bad(format!(
                        "p = {} but arm_counts has {} entries",
                        self.p,
                        self.arm_counts.len()
                    ));
                }
                if self.arm_counts.contains(&0) {
                    return bad("arm_counts must be positive".into());
                }
            }
            ExperimentKind::Generalization => {
                if self.epsilon_norms.is_empty() {
                    return bad("epsilon_norms must be nonempty".into());
                }
                if self.epsilon_norms.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                    return bad("epsilon_norms must be finite and nonnegative".into());
                }
            }
            ExperimentKind::Linear => {}
        }
        Ok(())
    }
}
