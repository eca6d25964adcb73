//! Meta-level agents and the Gaussian meta-posterior update.
//!
//! The instance prior is `P_* = N(μ_*, v²Σ_*)` with `Σ_*` known and
//! `μ_* ~ Q = N(μ_Q, v²Σ_Q)`. After a task with pulled contexts `b_t` and
//! rewards `r_t`, writing `S = Σ b bᵀ` and `Y = Σ r b`,
//!
//! ```text
//! Σ_{Q,s+1} = [Σ_{Q,s}⁻¹ + Σ_*⁻¹ − (Σ_* S Σ_* + Σ_*)⁻¹]⁻¹
//! μ_{Q,s+1} = Σ_{Q,s+1} [Σ_{Q,s}⁻¹ μ_{Q,s} + (S Σ_* + I)⁻¹ Y]
//! ```

use crate::env::{ContextSource, RoundNoise};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{Purpose, SeedTree};
use crate::ts::{run_ts_task, TaskOutcome};
use crate::types::{AgentKind, BanditInstance, GaussianBelief, HistoryEntry, RegretTrace};

/// The meta-posterior `Q_s` over the instance-prior mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPosterior {
    pub belief: GaussianBelief,
    /// 1-based index of the task this posterior is used for.
    pub task_index: usize,
}

impl MetaPosterior {
    pub fn new(meta_prior: GaussianBelief) -> Self {
        Self {
            belief: meta_prior,
            task_index: 1,
        }
    }

    pub fn lambda_max(&self) -> f64 {
        linalg::lambda_max(self.belief.cov_core())
    }
}

/// `(S, Y) = (Σ b bᵀ, Σ r b)` over a task history.
pub fn sufficient_statistics(history: &[HistoryEntry], d: usize) -> Result<(Matrix, Vector)> {
    let mut s = Matrix::zeros(d, d);
    let mut y = Vector::zeros(d);
    for h in history {
        if h.context.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: h.context.len(),
            });
        }
        s.ger(1.0, &h.context, &h.context, 1.0);
        y.axpy(h.reward, &h.context, 1.0);
    }
    Ok((s, y))
}

fn check_sigma_star(q: &MetaPosterior, sigma_star: &Matrix) -> Result<()> {
    let d = q.belief.dim();
    if sigma_star.nrows() != d || sigma_star.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sigma_star.nrows(),
        });
    }
    Ok(())
}

/// Closed-form meta-posterior update after one task.
pub fn meta_posterior_update(
    q: &MetaPosterior,
    sigma_star: &Matrix,
    history: &[HistoryEntry],
) -> Result<MetaPosterior> {
    check_sigma_star(q, sigma_star)?;
    let d = q.belief.dim();
    let (s, y) = sufficient_statistics(history, d)?;
    if history.is_empty() {
        return Ok(MetaPosterior {
            belief: q.belief.clone(),
            task_index: q.task_index + 1,
        });
    }
    let sigma_q_inv = linalg::spd_inverse(q.belief.cov_core(), "meta-posterior covariance")?;
    let sigma_star_inv = linalg::spd_inverse(sigma_star, "instance covariance")?;

    let spread = linalg::symmetrized(sigma_star * &s * sigma_star + sigma_star);
    let spread_inv = linalg::spd_inverse(&spread, "Σ_* S Σ_* + Σ_*")?;
    let precision = linalg::symmetrized(&sigma_q_inv + &sigma_star_inv - spread_inv);
    let cov = linalg::spd_inverse(&precision, "meta-posterior precision")?;

    let shrink = &s * sigma_star + Matrix::identity(d, d);
    let data_term = linalg::lu_solve(&shrink, &y, "S Σ_* + I")?;
    let mean = &cov * (&sigma_q_inv * q.belief.mean() + data_term);

    Ok(MetaPosterior {
        belief: GaussianBelief::new(mean, cov, q.belief.noise_scale())?,
        task_index: q.task_index + 1,
    })
}

/// The same update through the intermediate quantities of its derivation:
/// `G = S + Σ_*⁻¹`, `W = Σ_*⁻¹ + Σ_Q⁻¹ − Σ_*⁻¹ G⁻¹ Σ_*⁻¹`,
/// `η = W⁻¹ (Σ_Q⁻¹ μ_Q + Σ_*⁻¹ G⁻¹ Y)`.
pub fn meta_posterior_update_direct(
    q: &MetaPosterior,
    sigma_star: &Matrix,
    history: &[HistoryEntry],
) -> Result<MetaPosterior> {
    check_sigma_star(q, sigma_star)?;
    let d = q.belief.dim();
    let (s, y) = sufficient_statistics(history, d)?;
    let sigma_q_inv = linalg::spd_inverse(q.belief.cov_core(), "meta-posterior covariance")?;
    let sigma_star_inv = linalg::spd_inverse(sigma_star, "instance covariance")?;

    let g = linalg::symmetrized(&s + &sigma_star_inv);
    let g_inv = linalg::spd_inverse(&g, "G")?;
    let w = linalg::symmetrized(&sigma_star_inv + &sigma_q_inv - &sigma_star_inv * &g_inv * &sigma_star_inv);
    let rhs = &sigma_q_inv * q.belief.mean() + &sigma_star_inv * (&g_inv * &y);
    let eta = linalg::spd_solve(&w, &rhs, "W")?;
    let cov = linalg::spd_inverse(&w, "W")?;

    Ok(MetaPosterior {
        belief: GaussianBelief::new(eta, cov, q.belief.noise_scale())?,
        task_index: q.task_index + 1,
    })
}

/// One meta-posterior transition, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStep {
    pub task: usize,
    pub lambda_max_before: f64,
    pub lambda_max_after: f64,
    /// Mean of `Q_s` used for the task.
    pub mean_before: Vector,
}

/// Common interface of the meta-level agents. Within a task every agent runs
/// the same Thompson-sampling engine; agents differ in the prior they hand to
/// it (`task_prior`) and in what they learn afterwards (`end_task`).
pub trait MetaAgent: Send {
    fn kind(&self) -> AgentKind;
    fn task_prior(&mut self, task: usize) -> Result<GaussianBelief>;
    fn end_task(&mut self, history: &[HistoryEntry]) -> Result<()>;
    fn meta_steps(&self) -> &[MetaStep] {
        &[]
    }
}

#[derive(Debug, Clone)]
struct MetaLearner {
    posterior: MetaPosterior,
    sigma_star: Matrix,
    steps: Vec<MetaStep>,
}

impl MetaLearner {
    fn new(meta_prior: GaussianBelief, sigma_star: Matrix) -> Result<Self> {
        let q = MetaPosterior::new(meta_prior);
        check_sigma_star(&q, &sigma_star)?;
        Ok(Self {
            posterior: q,
            sigma_star,
            steps: Vec::new(),
        })
    }

    fn prior_around(&self, mean: Vector) -> Result<GaussianBelief> {
        GaussianBelief::new(
            mean,
            self.sigma_star.clone(),
            self.posterior.belief.noise_scale(),
        )
    }

    fn learn(&mut self, history: &[HistoryEntry]) -> Result<()> {
        let next = meta_posterior_update(&self.posterior, &self.sigma_star, history)?;
        self.steps.push(MetaStep {
            task: self.posterior.task_index,
            lambda_max_before: self.posterior.lambda_max(),
            lambda_max_after: next.lambda_max(),
            mean_before: self.posterior.belief.mean().clone(),
        });
        self.posterior = next;
        Ok(())
    }
}

/// Uses the meta-posterior mean as the task prior mean.
#[derive(Debug, Clone)]
pub struct MetaTslb {
    inner: MetaLearner,
}

impl MetaTslb {
    pub fn new(meta_prior: GaussianBelief, sigma_star: Matrix) -> Result<Self> {
        Ok(Self {
            inner: MetaLearner::new(meta_prior, sigma_star)?,
        })
    }

    pub fn posterior(&self) -> &MetaPosterior {
        &self.inner.posterior
    }
}

impl MetaAgent for MetaTslb {
    fn kind(&self) -> AgentKind {
        AgentKind::MetaTslb
    }

    fn task_prior(&mut self, _task: usize) -> Result<GaussianBelief> {
        self.inner
            .prior_around(self.inner.posterior.belief.mean().clone())
    }

    fn end_task(&mut self, history: &[HistoryEntry]) -> Result<()> {
        self.inner.learn(history)
    }

    fn meta_steps(&self) -> &[MetaStep] {
        &self.inner.steps
    }
}

/// Samples the task prior mean from the meta-posterior.
#[derive(Debug, Clone)]
pub struct MetaTs {
    inner: MetaLearner,
    tree: SeedTree,
    run: usize,
    sampled_means: Vec<Vector>,
}

impl MetaTs {
    pub fn new(meta_prior: GaussianBelief, sigma_star: Matrix, tree: SeedTree, run: usize) -> Result<Self> {
        Ok(Self {
            inner: MetaLearner::new(meta_prior, sigma_star)?,
            tree,
            run,
            sampled_means: Vec::new(),
        })
    }

    pub fn posterior(&self) -> &MetaPosterior {
        &self.inner.posterior
    }

    /// The task prior means drawn so far, one per task.
    pub fn sampled_means(&self) -> &[Vector] {
        &self.sampled_means
    }
}

impl MetaAgent for MetaTs {
    fn kind(&self) -> AgentKind {
        AgentKind::MetaTs
    }

    fn task_prior(&mut self, task: usize) -> Result<GaussianBelief> {
        let mut rng = self.tree.stream(self.run, task, 0, Purpose::MetaSample);
        let mean = self.inner.posterior.belief.sample(&mut rng);
        self.sampled_means.push(mean.clone());
        self.inner.prior_around(mean)
    }

    fn end_task(&mut self, history: &[HistoryEntry]) -> Result<()> {
        self.inner.learn(history)
    }

    fn meta_steps(&self) -> &[MetaStep] {
        &self.inner.steps
    }
}

/// A fixed prior in every task.
#[derive(Debug, Clone)]
pub struct FixedPriorTs {
    kind: AgentKind,
    prior: GaussianBelief,
}

impl FixedPriorTs {
    /// OracleTS: the true instance prior `N(μ_*, v²Σ_*)`.
    pub fn oracle(instance_prior: GaussianBelief) -> Self {
        Self {
            kind: AgentKind::OracleTs,
            prior: instance_prior,
        }
    }

    /// TS with the meta-prior marginalized out: `N(μ_Q, v²(Σ_Q + Σ_*))`.
    pub fn marginal(meta_prior: &GaussianBelief, sigma_star: &Matrix) -> Result<Self> {
        let cov = meta_prior.cov_core() + sigma_star;
        Ok(Self {
            kind: AgentKind::MarginalTs,
            prior: GaussianBelief::new(meta_prior.mean().clone(), cov, meta_prior.noise_scale())?,
        })
    }

    pub fn with_kind(kind: AgentKind, prior: GaussianBelief) -> Self {
        Self { kind, prior }
    }

    pub fn prior(&self) -> &GaussianBelief {
        &self.prior
    }
}

impl MetaAgent for FixedPriorTs {
    fn kind(&self) -> AgentKind {
        self.kind
    }

    fn task_prior(&mut self, _task: usize) -> Result<GaussianBelief> {
        Ok(self.prior.clone())
    }

    fn end_task(&mut self, _history: &[HistoryEntry]) -> Result<()> {
        Ok(())
    }
}

/// Plays one task of a bandit family given a prior and an instance.
pub trait TaskRunner: Sync {
    fn dim(&self) -> usize;
    fn run_task(
        &self,
        prior: &GaussianBelief,
        instance: &BanditInstance,
        task: usize,
        n: usize,
        noise: &mut dyn RoundNoise,
    ) -> Result<TaskOutcome>;
}

/// `k`-armed linear bandit tasks.
pub struct LinearTasks<'a> {
    pub contexts: &'a dyn ContextSource,
}

impl TaskRunner for LinearTasks<'_> {
    fn dim(&self) -> usize {
        self.contexts.dim()
    }

    fn run_task(
        &self,
        prior: &GaussianBelief,
        instance: &BanditInstance,
        task: usize,
        n: usize,
        noise: &mut dyn RoundNoise,
    ) -> Result<TaskOutcome> {
        run_ts_task(prior, instance, self.contexts, task, n, noise)
    }
}

/// Draws the task parameter `μ_s`.
pub trait InstanceSource: Sync {
    fn instance(&self, task: usize) -> BanditInstance;
}

/// `μ_s ~ P_*` from the `(run, task, Instance)` substream.
#[derive(Debug, Clone)]
pub struct GaussianInstances {
    pub prior: GaussianBelief,
    pub tree: SeedTree,
    pub run: usize,
}

impl InstanceSource for GaussianInstances {
    fn instance(&self, task: usize) -> BanditInstance {
        let mut rng = self.tree.stream(self.run, task, 0, Purpose::Instance);
        BanditInstance::new(self.prior.sample(&mut rng))
    }
}

/// Regret of one agent over `m` tasks of one run.
#[derive(Debug, Clone)]
pub struct AgentRun {
    pub agent: AgentKind,
    pub trace: RegretTrace,
    /// n-round regret of each task.
    pub task_regret: Vec<f64>,
    pub meta_steps: Vec<MetaStep>,
}

impl AgentRun {
    pub fn total_regret(&self) -> f64 {
        self.task_regret.iter().sum()
    }
}

/// Runs `agent` for `m` tasks of `n` rounds. Tasks are numbered from 1.
pub fn run_meta_agent(
    agent: &mut dyn MetaAgent,
    instances: &dyn InstanceSource,
    runner: &dyn TaskRunner,
    m: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
    run: usize,
) -> Result<AgentRun> {
    if m == 0 || n == 0 {
        return Err(Error::Precondition("m and n must be at least 1".into()));
    }
    let mut trace = RegretTrace::new();
    let mut task_regret = Vec::with_capacity(m);
    for task in 1..=m {
        let located = |e: Error| e.locate(run, task);
        let instance = instances.instance(task);
        let prior = agent.task_prior(task).map_err(located)?;
        let outcome = runner
            .run_task(&prior, &instance, task, n, noise)
            .map_err(located)?;
        agent.end_task(&outcome.history).map_err(located)?;
        trace.push_task(run, task, agent.kind(), &outcome.instant_regret);
        task_regret.push(outcome.total_regret());
    }
    Ok(AgentRun {
        agent: agent.kind(),
        trace,
        task_regret,
        meta_steps: agent.meta_steps().to_vec(),
    })
}

/// One of the four agents for a Gaussian meta-prior and instance prior.
pub fn build_gaussian_agent(
    kind: AgentKind,
    meta_prior: &GaussianBelief,
    instance_prior: &GaussianBelief,
    tree: SeedTree,
    run: usize,
) -> Result<Box<dyn MetaAgent>> {
    let sigma_star = instance_prior.cov_core().clone();
    Ok(match kind {
        AgentKind::MetaTslb => Box::new(MetaTslb::new(meta_prior.clone(), sigma_star)?),
        AgentKind::MetaTs => Box::new(MetaTs::new(meta_prior.clone(), sigma_star, tree, run)?),
        AgentKind::OracleTs => Box::new(FixedPriorTs::oracle(instance_prior.clone())),
        AgentKind::MarginalTs => Box::new(FixedPriorTs::marginal(meta_prior, &sigma_star)?),
    })
}

/// The shared setting of one run of the linear experiment.
pub struct LinearSetting<'a> {
    pub meta_prior: &'a GaussianBelief,
    pub instance_prior: &'a GaussianBelief,
    pub contexts: &'a dyn ContextSource,
    pub tree: SeedTree,
    pub run: usize,
    pub m: usize,
    pub n: usize,
}

impl LinearSetting<'_> {
    fn play(&self, agent: &mut dyn MetaAgent) -> Result<AgentRun> {
        let instances = GaussianInstances {
            prior: self.instance_prior.clone(),
            tree: self.tree,
            run: self.run,
        };
        let runner = LinearTasks {
            contexts: self.contexts,
        };
        let mut noise = crate::env::SeededNoise {
            tree: self.tree,
            run: self.run,
        };
        run_meta_agent(agent, &instances, &runner, self.m, self.n, &mut noise, self.run)
    }

    pub fn build_agent(&self, kind: AgentKind) -> Result<Box<dyn MetaAgent>> {
        build_gaussian_agent(kind, self.meta_prior, self.instance_prior, self.tree, self.run)
    }

    pub fn run_agent(&self, kind: AgentKind) -> Result<AgentRun> {
        let mut agent = self.build_agent(kind)?;
        self.play(agent.as_mut())
    }
}

pub fn run_meta_tslb(setting: &LinearSetting<'_>) -> Result<AgentRun> {
    setting.run_agent(AgentKind::MetaTslb)
}

pub fn run_meta_ts(setting: &LinearSetting<'_>) -> Result<AgentRun> {
    setting.run_agent(AgentKind::MetaTs)
}

pub fn run_oracle_ts(setting: &LinearSetting<'_>) -> Result<AgentRun> {
    setting.run_agent(AgentKind::OracleTs)
}

pub fn run_marginal_ts(setting: &LinearSetting<'_>) -> Result<AgentRun> {
    setting.run_agent(AgentKind::MarginalTs)
}
