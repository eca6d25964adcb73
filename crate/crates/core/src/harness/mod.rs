//! Seeded Monte-Carlo reproduction of the five experiments.
//!
//! Each run draws its own covariances and instance prior from substreams of
//! `(root_seed, run)` and plays every configured agent against the same
//! environment: instances, contexts, reward noise and posterior-sample
//! normals are shared, only Meta-TS's per-task draw is agent-specific. Runs
//! are mapped in parallel and merged in run order, so the output does not
//! depend on the execution mode.

pub mod config;
pub mod envlog;
pub mod output;
pub mod stats;

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::env::{RoundNoise, SeededNoise, UniformContexts};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::meta::{
    build_gaussian_agent, run_meta_agent, AgentRun, FixedPriorTs, GaussianInstances,
    InstanceSource, LinearTasks, MetaAgent, MetaTs, MetaTslb,
};
use crate::parallel::{self, ExecMode};
use crate::rng::{Purpose, SeedTree};
use crate::types::{standard_normal_vector, AgentKind, GaussianBelief, RegretTrace};
use crate::variants::finite::{finite_prior_sample, finite_prior_select, BankAgent, BankRule, PriorBank};
use crate::variants::polyhedron::{PolyhedralTasks, RandomPolyhedra};
use crate::variants::sequential::{Gamma, SequentialSpec, SequentialTasks, UniformSequentialContexts};

pub use config::{ExperimentConfig, ExperimentKind};
pub use envlog::{check_pairing, EnvRow};
pub use stats::{sign_test, SignTest, SummaryRow};

use envlog::{EnvRecorder, Recorded, RecordedNoise};

/// Seed-tree tag of the second phase of the generalization experiment.
pub const PHASE_TWO_TAG: u64 = 2;

/// Random symmetric PD matrix with every entry below `max_entry` in absolute
/// value: `M Mᵀ/d + 0.05 I` for `M` uniform on `[−1,1]^{d×d}`, scaled down if
/// needed. For `d ≥ 2` the result is never diagonal.
pub fn generate_covariance<R: Rng + ?Sized>(d: usize, max_entry: f64, rng: &mut R) -> Matrix {
    assert!(d >= 1, "dimension must be positive");
    loop {
        let m = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..=1.0));
        let mut sigma = &m * m.transpose() / d as f64 + Matrix::identity(d, d) * 0.05;
        linalg::symmetrize(&mut sigma);
        let top = sigma.amax();
        if top >= max_entry {
            sigma *= max_entry * 0.99 / top;
        }
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
        if d == 1 || !diagonal {
            return sigma;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub mode: ExecMode,
    pub threads: Option<usize>,
    /// Record hashes of every environment draw per agent.
    pub environment_log: bool,
}

/// The hierarchy drawn for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunModel {
    /// `Q = N(μ_Q, v²Σ_Q)`.
    pub meta_prior: GaussianBelief,
    /// `P_* = N(μ_*, v²Σ_*)`.
    pub instance_prior: GaussianBelief,
}

/// Prior-bank details of a finite-prior run.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteInfo {
    pub j_star: usize,
    pub bank: PriorBank,
    /// Bank weights after the last task, from the argmax agent.
    pub final_weights: Option<Vec<f64>>,
    pub final_selection: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub model: RunModel,
    pub agents: Vec<AgentRun>,
    pub finite: Option<FiniteInfo>,
    /// Offset added to `μ_*` in the second generalization phase.
    pub epsilon: Option<Vector>,
    pub env_log: Vec<EnvRow>,
}

impl RunResult {
    pub fn agent(&self, kind: AgentKind) -> Option<&AgentRun> {
        self.agents.iter().find(|a| a.agent == kind)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub agents: Vec<AgentKind>,
    pub trace: RegretTrace,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunResult>,
    pub env_log: Vec<EnvRow>,
}

impl ExperimentOutput {
    fn assemble(agents: Vec<AgentKind>, mut runs: Vec<RunResult>) -> Self {
        let per_agent: Vec<(AgentKind, Vec<Vec<f64>>)> = agents
            .iter()
            .map(|&k| {
                let table = runs
                    .iter()
                    .filter_map(|r| r.agent(k).map(|a| a.task_regret.clone()))
                    .collect();
                (k, table)
            })
            .collect();
        let summary = stats::summarize(&per_agent);
        let mut trace = RegretTrace::new();
        let mut env_log = Vec::new();
        for r in &mut runs {
            for a in &mut r.agents {
                trace.extend(std::mem::take(&mut a.trace));
            }
            env_log.append(&mut r.env_log);
        }
        Self {
            agents,
            trace,
            summary,
            runs,
            env_log,
        }
    }

    /// Per-run task regrets of `agent`.
    pub fn task_regret(&self, agent: AgentKind) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .filter_map(|r| r.agent(agent).map(|a| a.task_regret.clone()))
            .collect()
    }

    /// Per-run regret summed over all tasks.
    pub fn run_totals(&self, agent: AgentKind) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.agent(agent).map(AgentRun::total_regret))
            .collect()
    }

    /// Summary value of `agent` at `task`.
    pub fn mean_cumulative(&self, agent: AgentKind, task: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.agent == agent && r.task == task)
            .map(|r| r.mean_cumulative_regret)
    }

    /// Mean over runs of the regret summed over all tasks.
    pub fn final_mean(&self, agent: AgentKind) -> Option<f64> {
        let m = self.summary.iter().filter(|r| r.agent == agent).map(|r| r.task).max()?;
        self.mean_cumulative(agent, m)
    }

    /// Writes `trace{tag}.csv`, `summary{tag}.csv` and, if recorded,
    /// `env_log{tag}.csv` into `dir`.
    pub fn write(&self, dir: &Path, tag: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let trace = dir.join(format!("trace{tag}.csv"));
        let summary = dir.join(format!("summary{tag}.csv"));
        output::write_file(&trace, |w| output::write_trace(w, &self.trace))?;
        output::write_file(&summary, |w| output::write_summary(w, &self.summary))?;
        let mut paths = vec![trace, summary];
        if !self.env_log.is_empty() {
            let env = dir.join(format!("env_log{tag}.csv"));
            output::write_file(&env, |w| output::write_env_log(w, &self.env_log))?;
            paths.push(env);
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone)]
pub struct GeneralizationOutput {
    /// Meta agents learning on the unperturbed tasks.
    pub phase_one: ExperimentOutput,
    pub norms: Vec<f64>,
    /// One output per entry of `norms`.
    pub phase_two: Vec<ExperimentOutput>,
}

impl GeneralizationOutput {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = self.phase_one.write(dir, "_phase1")?;
        for (norm, out) in self.norms.iter().zip(&self.phase_two) {
            paths.extend(out.write(dir, &format!("_eps_{}", output::format_sig(*norm)))?);
        }
        Ok(paths)
    }
}

/// Σ_Q and Σ_* from the run's covariance stream, μ_Q = 0 and μ_* ~ Q.
pub fn draw_model(cfg: &ExperimentConfig, tree: SeedTree, run: usize) -> Result<RunModel> {
    let d = cfg.d;
    let mut rng = tree.stream(run, 0, 0, Purpose::Covariance);
    let sigma_q = generate_covariance(d, cfg.max_cov_entry, &mut rng);
    let sigma_star = generate_covariance(d, cfg.max_cov_entry, &mut rng);
    let meta_prior = GaussianBelief::new(Vector::zeros(d), sigma_q, cfg.v)?;
    let mu_star = meta_prior.sample(&mut tree.stream(run, 0, 0, Purpose::InstancePrior));
    Ok(RunModel {
        instance_prior: GaussianBelief::new(mu_star, sigma_star, cfg.v)?,
        meta_prior,
    })
}

/// Bank means uniform on `[−w, w]^d` with generated covariances, uniform
/// weights, and `j_* ~ w`.
pub fn draw_bank(cfg: &ExperimentConfig, tree: SeedTree, run: usize) -> Result<(PriorBank, usize)> {
    let d = cfg.d;
    let w = cfg.prior_mean_half_width;
    let mut rng = tree.stream(run, 0, 0, Purpose::Covariance);
    let priors = (0..cfg.num_priors)
        .map(|_| {
            let mean = Vector::from_fn(d, |_, _| rng.random_range(-w..=w));
            let cov = generate_covariance(d, cfg.max_cov_entry, &mut rng);
            GaussianBelief::new(mean, cov, cfg.v)
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = PriorBank::uniform(priors)?;
    let j_star = finite_prior_sample(&bank, &mut tree.stream(run, 0, 0, Purpose::InstancePrior));
    Ok((bank, j_star))
}

/// Where the tasks of one run are played.
enum Arena {
    Linear(UniformContexts),
    Polyhedral(RandomPolyhedra),
    Sequential(SequentialSpec, UniformSequentialContexts),
}

impl Arena {
    fn new(cfg: &ExperimentConfig, tree: SeedTree, run: usize) -> Result<Self> {
        let uniform = UniformContexts {
            tree,
            run,
            k: cfg.k,
            d: cfg.d,
            low: cfg.context_low,
            high: cfg.context_high,
            normalize: cfg.normalize_contexts,
            shared: cfg.shared_contexts,
        };
        Ok(match cfg.experiment {
            ExperimentKind::InfiniteArms => Arena::Polyhedral(RandomPolyhedra {
                tree,
                run,
                rows: cfg.polytope_rows,
                d: cfg.d,
                half_width: cfg.box_half_width,
                shared: cfg.shared_contexts,
            }),
            ExperimentKind::Sequential => {
                let spec = SequentialSpec::new(cfg.arm_counts.clone(), Gamma::Hadamard, cfg.d)?;
                let source = UniformSequentialContexts {
                    base: uniform,
                    arm_counts: cfg.arm_counts.clone(),
                };
                Arena::Sequential(spec, source)
            }
            _ => Arena::Linear(uniform),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn play(
        &self,
        agent: &mut dyn MetaAgent,
        instances: &dyn InstanceSource,
        m: usize,
        n: usize,
        tree: SeedTree,
        run: usize,
        log: Option<&EnvRecorder>,
    ) -> Result<AgentRun> {
        let mut seeded = SeededNoise { tree, run };
        let mut noise = RecordedNoise {
            inner: &mut seeded as &mut dyn RoundNoise,
            log,
        };
        let instances = Recorded { inner: instances, log };
        match self {
            Arena::Linear(c) => {
                let contexts = Recorded { inner: c, log };
                let runner = LinearTasks { contexts: &contexts };
                run_meta_agent(agent, &instances, &runner, m, n, &mut noise, run)
            }
            Arena::Polyhedral(p) => {
                let source = Recorded { inner: p, log };
                let runner = PolyhedralTasks { source: &source };
                run_meta_agent(agent, &instances, &runner, m, n, &mut noise, run)
            }
            Arena::Sequential(spec, c) => {
                let source = Recorded { inner: c, log };
                let runner = SequentialTasks { spec, source: &source };
                run_meta_agent(agent, &instances, &runner, m, n, &mut noise, run)
            }
        }
    }
}

/// Plays `agent` and collects its environment log if requested.
#[allow(clippy::too_many_arguments)]
fn play_logged(
    arena: &Arena,
    agent: &mut dyn MetaAgent,
    instances: &dyn InstanceSource,
    cfg: &ExperimentConfig,
    tree: SeedTree,
    run: usize,
    opts: &RunOptions,
    env_log: &mut Vec<EnvRow>,
) -> Result<AgentRun> {
    let recorder = opts.environment_log.then(EnvRecorder::default);
    let result = arena.play(agent, instances, cfg.m, cfg.n, tree, run, recorder.as_ref())?;
    if let Some(r) = recorder {
        env_log.extend(r.into_rows(run, agent.kind()));
    }
    Ok(result)
}

fn run_gaussian(cfg: &ExperimentConfig, tree: SeedTree, run: usize, opts: &RunOptions) -> Result<RunResult> {
    let model = draw_model(cfg, tree, run)?;
    let arena = Arena::new(cfg, tree, run)?;
    let instances = GaussianInstances {
        prior: model.instance_prior.clone(),
        tree,
        run,
    };
    let mut env_log = Vec::new();
    let agents = cfg
        .agents
        .iter()
        .map(|&kind| {
            let mut agent = build_gaussian_agent(kind, &model.meta_prior, &model.instance_prior, tree, run)?;
            play_logged(&arena, agent.as_mut(), &instances, cfg, tree, run, opts, &mut env_log)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult {
        run,
        model,
        agents,
        finite: None,
        epsilon: None,
        env_log,
    })
}

fn run_finite(cfg: &ExperimentConfig, tree: SeedTree, run: usize, opts: &RunOptions) -> Result<RunResult> {
    let (bank, j_star) = draw_bank(cfg, tree, run)?;
    let instance_prior = bank.priors()[j_star].clone();
    let arena = Arena::new(cfg, tree, run)?;
    let instances = GaussianInstances {
        prior: instance_prior.clone(),
        tree,
        run,
    };
    let mut env_log = Vec::new();
    let mut info = FiniteInfo {
        j_star,
        bank: bank.clone(),
        final_weights: None,
        final_selection: None,
    };
    let mut agents = Vec::with_capacity(cfg.agents.len());
    for &kind in &cfg.agents {
        let result = match kind {
            AgentKind::MetaTslb | AgentKind::MetaTs => {
                let rule = if kind == AgentKind::MetaTslb {
                    BankRule::Argmax
                } else {
                    BankRule::Sample
                };
                let mut agent = BankAgent::new(bank.clone(), rule, tree, run);
                let r = play_logged(&arena, &mut agent, &instances, cfg, tree, run, opts, &mut env_log)?;
                if rule == BankRule::Argmax {
                    info.final_selection = Some(finite_prior_select(agent.bank()));
                    info.final_weights = Some(agent.bank().weights().to_vec());
                }
                r
            }
            AgentKind::OracleTs => {
                let mut agent = FixedPriorTs::oracle(instance_prior.clone());
                play_logged(&arena, &mut agent, &instances, cfg, tree, run, opts, &mut env_log)?
            }
            AgentKind::MarginalTs => {
                let mut agent = FixedPriorTs::with_kind(AgentKind::MarginalTs, bank.moment_matched()?);
                play_logged(&arena, &mut agent, &instances, cfg, tree, run, opts, &mut env_log)?
            }
        };
        agents.push(result);
    }
    let moment = bank.moment_matched()?;
    Ok(RunResult {
        run,
        model: RunModel {
            meta_prior: moment,
            instance_prior,
        },
        agents,
        finite: Some(info),
        epsilon: None,
        env_log,
    })
}

fn collect_runs<T: Send>(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    parallel::map_indexed(cfg.runs, opts.mode, opts.threads, f)
        .into_iter()
        .collect()
}

/// Runs a linear, finite-prior, infinite-arm or sequential experiment.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let tree = SeedTree::new(cfg.root_seed);
    let runs = match cfg.experiment {
        ExperimentKind::Generalization => {
            return Err(Error::Config(
                "the generalization experiment has two phases; use run_generalization".into(),
            ))
        }
        ExperimentKind::FinitePriors => collect_runs(cfg, opts, |r| run_finite(cfg, tree, r, opts))?,
        _ => collect_runs(cfg, opts, |r| run_gaussian(cfg, tree, r, opts))?,
    };
    Ok(ExperimentOutput::assemble(cfg.agents.clone(), runs))
}

/// Unit vector uniform on the sphere, from the run's perturbation stream.
pub fn epsilon_direction(tree: SeedTree, run: usize, d: usize) -> Vector {
    let mut rng = tree.stream(run, 0, 0, Purpose::Perturbation);
    loop {
        let z = standard_normal_vector(d, &mut rng);
        let norm = z.norm();
        if norm > 0.0 {
            return z / norm;
        }
    }
}

fn run_generalization_one(
    cfg: &ExperimentConfig,
    tree: SeedTree,
    run: usize,
    opts: &RunOptions,
) -> Result<(RunResult, Vec<RunResult>)> {
    let linear = ExperimentConfig {
        experiment: ExperimentKind::Linear,
        ..cfg.clone()
    };
    let model = draw_model(&linear, tree, run)?;
    let sigma_star = model.instance_prior.cov_core().clone();

    // Phase one: learn Q′ on tasks from P_*.
    let arena = Arena::new(&linear, tree, run)?;
    let instances = GaussianInstances {
        prior: model.instance_prior.clone(),
        tree,
        run,
    };
    let mut env_log = Vec::new();
    let mut tslb = MetaTslb::new(model.meta_prior.clone(), sigma_star.clone())?;
    let mut ts = MetaTs::new(model.meta_prior.clone(), sigma_star.clone(), tree, run)?;
    let mut phase_one = Vec::new();
    if cfg.agents.contains(&AgentKind::MetaTslb) {
        phase_one.push(play_logged(&arena, &mut tslb, &instances, &linear, tree, run, opts, &mut env_log)?);
    }
    if cfg.agents.contains(&AgentKind::MetaTs) {
        phase_one.push(play_logged(&arena, &mut ts, &instances, &linear, tree, run, opts, &mut env_log)?);
    }
    let learned_tslb = tslb.posterior().belief.clone();
    let learned_ts = ts.posterior().belief.clone();
    let first = RunResult {
        run,
        model: model.clone(),
        agents: phase_one,
        finite: None,
        epsilon: None,
        env_log,
    };

    // Phase two: fresh tasks from N(μ_* + ε, v²Σ_*), common across norms.
    let tree2 = tree.child(PHASE_TWO_TAG);
    let direction = epsilon_direction(tree, run, cfg.d);
    let arena2 = Arena::new(&linear, tree2, run)?;
    let mut second = Vec::with_capacity(cfg.epsilon_norms.len());
    for &norm in &cfg.epsilon_norms {
        let epsilon = &direction * norm;
        let shifted = model
            .instance_prior
            .with_mean(model.instance_prior.mean() + &epsilon)?;
        let instances = GaussianInstances {
            prior: shifted.clone(),
            tree: tree2,
            run,
        };
        let mut env_log = Vec::new();
        let mut agents = Vec::with_capacity(cfg.agents.len());
        for &kind in &cfg.agents {
            let mut agent: Box<dyn MetaAgent> = match kind {
                AgentKind::MetaTslb => Box::new(MetaTslb::new(learned_tslb.clone(), sigma_star.clone())?),
                AgentKind::MetaTs => Box::new(MetaTs::new(learned_ts.clone(), sigma_star.clone(), tree2, run)?),
                AgentKind::OracleTs => Box::new(FixedPriorTs::oracle(shifted.clone())),
                AgentKind::MarginalTs => Box::new(FixedPriorTs::marginal(&model.meta_prior, &sigma_star)?),
            };
            agents.push(play_logged(&arena2, agent.as_mut(), &instances, &linear, tree2, run, opts, &mut env_log)?);
        }
        second.push(RunResult {
            run,
            model: RunModel {
                meta_prior: model.meta_prior.clone(),
                instance_prior: shifted,
            },
            agents,
            finite: None,
            epsilon: Some(epsilon),
            env_log,
        });
    }
    Ok((first, second))
}

/// Two-phase generalization study: meta-learn on tasks from `P_*`, then
/// reuse the learned meta-posterior on tasks from the prior shifted by ε.
pub fn run_generalization(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GeneralizationOutput> {
    cfg.validate()?;
    if cfg.epsilon_norms.is_empty() {
        return Err(Error::Config("epsilon_norms must be nonempty".into()));
    }
    let tree = SeedTree::new(cfg.root_seed);
    let per_run = collect_runs(cfg, opts, |r| run_generalization_one(cfg, tree, r, opts))?;
    let mut phase_one = Vec::with_capacity(per_run.len());
    let mut by_norm: Vec<Vec<RunResult>> = vec![Vec::with_capacity(per_run.len()); cfg.epsilon_norms.len()];
    for (first, second) in per_run {
        phase_one.push(first);
        for (slot, r) in by_norm.iter_mut().zip(second) {
            slot.push(r);
        }
    }
    let meta_agents: Vec<AgentKind> = cfg
        .agents
        .iter()
        .copied()
        .filter(|a| matches!(a, AgentKind::MetaTslb | AgentKind::MetaTs))
        .collect();
    Ok(GeneralizationOutput {
        phase_one: ExperimentOutput::assemble(meta_agents, phase_one),
        norms: cfg.epsilon_norms.clone(),
        phase_two: by_norm
            .into_iter()
            .map(|runs| ExperimentOutput::assemble(cfg.agents.clone(), runs))
            .collect(),
    })
}
