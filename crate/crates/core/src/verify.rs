//! Invariant suite run by `metabandit verify`.
//!
//! Each check simulates fresh trajectories from a seed and reports the worst
//! slack over all cases (positive means the invariant holds with room).
//! Checks run sequentially on the calling thread so that the
//! skip-symmetrize fault, which is thread-local, reaches every computation.

use serde::Serialize;

use crate::env::{SeededNoise, UniformContexts};
use crate::error::{Error, Result};
use crate::harness::generate_covariance;
use crate::linalg::{self, Vector};
use crate::meta::{meta_posterior_update, meta_posterior_update_direct, MetaPosterior};
use crate::parallel::ExecMode;
use crate::rng::{Purpose, SeedTree};
use crate::theory::{self, estimate_vartheta, VarthetaMode};
use crate::ts::{run_ts_task, ts_init, ts_update};
use crate::types::{BanditInstance, GaussianBelief, HistoryEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    RecursiveBatch,
    LambdaMinMonotone,
    SBound,
    EigenSum,
    Contraction,
    MetaTwoPath,
    Symmetry,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::RecursiveBatch,
        CheckKind::LambdaMinMonotone,
        CheckKind::SBound,
        CheckKind::EigenSum,
        CheckKind::Contraction,
        CheckKind::MetaTwoPath,
        CheckKind::Symmetry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckKind::RecursiveBatch => "recursive_batch",
            CheckKind::LambdaMinMonotone => "lambda_min_monotone",
            CheckKind::SBound => "s_bound",
            CheckKind::EigenSum => "eigen_sum",
            CheckKind::Contraction => "contraction",
            CheckKind::MetaTwoPath => "meta_two_path",
            CheckKind::Symmetry => "symmetry",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Turns every symmetrization into a no-op.
    SkipSymmetrize,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Self> {
        (s == "skip-symmetrize").then_some(Fault::SkipSymmetrize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    /// TS trajectories for the per-round checks.
    pub trajectories: usize,
    pub n: usize,
    /// Simulated meta-learning sequences for the meta-posterior checks.
    pub meta_runs: usize,
    pub meta_tasks: usize,
    pub meta_rounds: usize,
    pub checks: Vec<CheckKind>,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            trajectories: 20,
            n: 200,
            meta_runs: 10,
            meta_tasks: 20,
            meta_rounds: 50,
            checks: CheckKind::ALL.to_vec(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: CheckKind,
    pub passed: bool,
    /// Smallest margin over all cases; negative when violated.
    pub worst_slack: f64,
    pub cases: usize,
    pub skipped: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub fault: Option<Fault>,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Default)]
struct Tally {
    worst: f64,
    cases: usize,
    skipped: usize,
    seen: bool,
}

impl Tally {
    fn record(&mut self, slack: f64) {
        self.worst = if self.seen { self.worst.min(slack) } else { slack };
        self.seen = true;
        self.cases += 1;
    }

    fn report(self, check: CheckKind, detail: String) -> CheckReport {
        CheckReport {
            check,
            passed: self.cases > 0 && self.worst >= 0.0,
            worst_slack: if self.seen { self.worst } else { f64::NAN },
            cases: self.cases,
            skipped: self.skipped,
            detail,
        }
    }
}

fn unit_ball(tree: SeedTree, run: usize, k: usize, d: usize) -> UniformContexts {
    UniformContexts {
        tree,
        run,
        k,
        d,
        low: -1.0,
        high: 1.0,
        normalize: true,
        shared: false,
    }
}

fn random_prior(tree: SeedTree, run: usize, d: usize, v: f64) -> Result<GaussianBelief> {
    let mut rng = tree.stream(run, 0, 0, Purpose::Covariance);
    let cov = generate_covariance(d, 3.0, &mut rng);
    let mean = Vector::from_fn(d, |_, _| rand::Rng::random_range(&mut rng, -1.0..=1.0));
    GaussianBelief::new(mean, cov, v)
}

/// Dimension of trajectory `i`, cycling through 2..=5.
fn dim_of(i: usize) -> usize {
    2 + i % 4
}

/// `max |B_rec − B_batch|` and `max |μ̂_rec − μ̂_batch|` along a history,
/// with the batch side formed from scratch by explicit outer products and an
/// LU solve.
pub fn recursive_batch_gap(prior: &GaussianBelief, history: &[HistoryEntry]) -> Result<(f64, f64)> {
    let mut state = ts_init(prior)?;
    let b1 = state.precision().clone();
    let anchor = &b1 * state.mean();
    let mut worst_b: f64 = 0.0;
    let mut worst_mu: f64 = 0.0;
    for t in 1..=history.len() {
        state = ts_update(&state, &history[t - 1].context, history[t - 1].reward)?;
        let mut batch = b1.clone();
        let mut info = anchor.clone();
        for h in &history[..t] {
            batch += &h.context * h.context.transpose();
            info += &h.context * h.reward;
        }
        let mu = linalg::lu_solve(&batch, &info, "batch precision")?;
        worst_b = worst_b.max(linalg::max_abs_diff(state.precision(), &batch));
        worst_mu = worst_mu.max(linalg::max_abs_diff_vec(state.mean(), &mu));
    }
    Ok((worst_b, worst_mu))
}

struct Outcomes {
    reports: Vec<CheckReport>,
}

fn trajectory_checks(cfg: &VerifyConfig, want: &[CheckKind], out: &mut Outcomes, symmetry: &mut Tally) -> Result<()> {
    let tree = SeedTree::new(cfg.seed);
    let mut rb = Tally::default();
    let mut mono = Tally::default();
    let mut sb = Tally::default();
    let mut worst_gaps = (0.0f64, 0.0f64);
    for i in 0..cfg.trajectories {
        let d = dim_of(i);
        let prior = random_prior(tree, i, d, 0.5)?;
        let instance = BanditInstance::new(prior.sample(&mut tree.stream(i, 0, 0, Purpose::Instance)));
        let contexts = unit_ball(tree, i, 5, d);
        let mut noise = SeededNoise { tree, run: i };
        let (outcome, diag) = theory::record_trajectory(&prior, &instance, &contexts, 1, cfg.n, &mut noise)?;

        if want.contains(&CheckKind::RecursiveBatch) {
            let (gb, gm) = recursive_batch_gap(&prior, &outcome.history)?;
            worst_gaps = (worst_gaps.0.max(gb), worst_gaps.1.max(gm));
            rb.record(1e-9 - gb.max(gm));
        }
        if want.contains(&CheckKind::LambdaMinMonotone) {
            let worst = diag
                .lambda_min
                .windows(2)
                .map(|w| w[1] - w[0] + 1e-12 * w[0])
                .fold(f64::INFINITY, f64::min);
            if worst.is_finite() {
                mono.record(worst);
            }
        }
        if want.contains(&CheckKind::SBound) {
            let rep = theory::check_s_bound(&diag);
            sb.record(1.0 + 1e-10 - rep.worst_ratio);
        }
        if want.contains(&CheckKind::Symmetry) {
            symmetry.record(0.0 - linalg::asymmetry(outcome.final_state.precision()));
            symmetry.record(0.0 - linalg::asymmetry(&linalg::spd_inverse(outcome.final_state.precision(), "B")?));
        }
    }
    if want.contains(&CheckKind::RecursiveBatch) {
        out.reports.push(rb.report(
            CheckKind::RecursiveBatch,
            format!(
                "max |ΔB| = {:.3e}, max |Δμ̂| = {:.3e} (tolerance 1e-9)",
                worst_gaps.0, worst_gaps.1
            ),
        ));
    }
    if want.contains(&CheckKind::LambdaMinMonotone) {
        out.reports.push(mono.report(CheckKind::LambdaMinMonotone, "λ_min(B(t+1)) ≥ λ_min(B(t))".into()));
    }
    if want.contains(&CheckKind::SBound) {
        out.reports.push(sb.report(CheckKind::SBound, "s_i(t)² ≤ ‖b_i(t)‖²/λ_min(B(t))".into()));
    }
    Ok(())
}

fn eigen_sum_check(cfg: &VerifyConfig, out: &mut Outcomes) -> Result<()> {
    // Small k, d and Δ keep the exact ϑ enumeration cheap.
    let (k, d, window) = (3, 3, 3);
    let tree = SeedTree::new(cfg.seed).child(10);
    let mut tally = Tally::default();
    let mut violations = Vec::new();
    for i in 0..cfg.trajectories {
        let prior = random_prior(tree, i, d, 0.5)?;
        let instance = BanditInstance::new(prior.sample(&mut tree.stream(i, 0, 0, Purpose::Instance)));
        let contexts = unit_ball(tree, i, k, d);
        let b1 = linalg::spd_inverse(prior.cov_core(), "prior covariance")?;
        let params = estimate_vartheta(&contexts, 1, cfg.n, window, &b1, VarthetaMode::Exact, ExecMode::Sequential)?;
        let mut noise = SeededNoise { tree, run: i };
        let (_, diag) = theory::record_trajectory(&prior, &instance, &contexts, 1, cfg.n, &mut noise)?;
        match theory::check_eigen_sum(&diag, &params) {
            Ok(rep) => {
                tally.record(rep.rhs - rep.lhs);
                if !rep.holds {
                    violations.push(i);
                }
            }
            Err(Error::Precondition(_)) => tally.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let detail = if violations.is_empty() {
        format!("Σ√(1/λ_min(B(t))) < √(1/λ_min(B(1))) + √((n−1)/ϑ), exact ϑ with k={k}, d={d}, Δ={window}")
    } else {
        format!("violated on trajectories {violations:?}")
    };
    let mut rep = tally.report(CheckKind::EigenSum, detail);
    rep.passed &= violations.is_empty();
    out.reports.push(rep);
    Ok(())
}

fn meta_checks(cfg: &VerifyConfig, want: &[CheckKind], out: &mut Outcomes, symmetry: &mut Tally) -> Result<()> {
    let tree = SeedTree::new(cfg.seed).child(20);
    let d = 5;
    let v = 0.2;
    let mut contraction = Tally::default();
    let mut two_path = Tally::default();
    let mut strict_failures = 0;
    for run in 0..cfg.meta_runs {
        let mut rng = tree.stream(run, 0, 0, Purpose::Covariance);
        let sigma_q = generate_covariance(d, 3.0, &mut rng);
        let sigma_star = generate_covariance(d, 3.0, &mut rng);
        let meta_prior = GaussianBelief::new(Vector::zeros(d), sigma_q.clone(), v)?;
        let mu_star = meta_prior.sample(&mut tree.stream(run, 0, 0, Purpose::InstancePrior));
        let instance_prior = GaussianBelief::new(mu_star, sigma_star.clone(), v)?;
        let lambda_min = 1.0 / linalg::lambda_max(&sigma_star);
        let condition = linalg::lambda_max(&sigma_q) >= 2.0 / (175.0 * lambda_min);
        let contexts = UniformContexts {
            tree,
            run,
            k: 20,
            d,
            low: 0.0,
            high: 50.0,
            normalize: false,
            shared: false,
        };
        let mut noise = SeededNoise { tree, run };
        let mut q = MetaPosterior::new(meta_prior);
        for task in 1..=cfg.meta_tasks {
            let mut rng = tree.stream(run, task, 0, Purpose::Instance);
            let instance = BanditInstance::new(instance_prior.sample(&mut rng));
            let prior = GaussianBelief::new(q.belief.mean().clone(), sigma_star.clone(), v)?;
            let outcome = run_ts_task(&prior, &instance, &contexts, task, cfg.meta_rounds, &mut noise)?;
            let next = meta_posterior_update(&q, &sigma_star, &outcome.history)?;
            if want.contains(&CheckKind::Contraction) {
                if condition {
                    let before = q.lambda_max();
                    let after = next.lambda_max();
                    contraction.record(theory::contraction_bound(before, lambda_min) - after);
                    if after >= before {
                        strict_failures += 1;
                    }
                } else {
                    contraction.skipped += 1;
                }
            }
            if want.contains(&CheckKind::MetaTwoPath) {
                let direct = meta_posterior_update_direct(&q, &sigma_star, &outcome.history)?;
                let scale_c = 1.0 + next.belief.cov_core().amax();
                let scale_m = 1.0 + next.belief.mean().amax();
                let gap = (linalg::max_abs_diff(next.belief.cov_core(), direct.belief.cov_core()) / scale_c)
                    .max(linalg::max_abs_diff_vec(next.belief.mean(), direct.belief.mean()) / scale_m);
                two_path.record(1e-10 - gap);
            }
            if want.contains(&CheckKind::Symmetry) {
                symmetry.record(0.0 - linalg::asymmetry(next.belief.cov_core()));
            }
            q = next;
        }
    }
    if want.contains(&CheckKind::Contraction) {
        let mut rep = contraction.report(
            CheckKind::Contraction,
            format!(
                "λ_max(Σ_Q,s+1) ≤ 7/8·λ_max(Σ_Q,s) + 1/(100·λ_min); {strict_failures} non-strict decreases"
            ),
        );
        rep.passed &= strict_failures == 0;
        out.reports.push(rep);
    }
    if want.contains(&CheckKind::MetaTwoPath) {
        out.reports.push(two_path.report(
            CheckKind::MetaTwoPath,
            "closed form vs G/W/η path, relative to 1 + max entry (tolerance 1e-10)".into(),
        ));
    }
    Ok(())
}

/// Runs the requested checks. An empty selection is a configuration error.
pub fn run_verification(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.checks.is_empty() {
        return Err(Error::Config("no invariants selected: nothing to verify".into()));
    }
    if cfg.trajectories == 0 && cfg.meta_runs == 0 {
        return Err(Error::Config("zero trajectories and zero meta runs: nothing to verify".into()));
    }
    let _guard = cfg.fault.map(|Fault::SkipSymmetrize| linalg::SkipSymmetrizeGuard::engage());
    let want = &cfg.checks;
    let mut out = Outcomes { reports: Vec::new() };
    let mut symmetry = Tally::default();
    if want.iter().any(|c| {
        matches!(
            c,
            CheckKind::RecursiveBatch | CheckKind::LambdaMinMonotone | CheckKind::SBound | CheckKind::Symmetry
        )
    }) {
        trajectory_checks(cfg, want, &mut out, &mut symmetry)?;
    }
    if want.contains(&CheckKind::EigenSum) {
        eigen_sum_check(cfg, &mut out)?;
    }
    if want
        .iter()
        .any(|c| matches!(c, CheckKind::Contraction | CheckKind::MetaTwoPath | CheckKind::Symmetry))
    {
        meta_checks(cfg, want, &mut out, &mut symmetry)?;
    }
    if want.contains(&CheckKind::Symmetry) {
        out.reports.push(symmetry.report(
            CheckKind::Symmetry,
            "every stored covariance and precision is exactly symmetric (stricter than 1e-10)".into(),
        ));
    }
    let order = |c: CheckKind| want.iter().position(|w| *w == c).unwrap_or(usize::MAX);
    out.reports.sort_by_key(|r| order(r.check));
    Ok(VerifyReport {
        fault: cfg.fault,
        checks: out.reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyConfig {
        VerifyConfig {
            trajectories: 4,
            n: 40,
            meta_runs: 2,
            meta_tasks: 5,
            meta_rounds: 20,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn clean_build_passes() {
        let rep = run_verification(&small()).unwrap();
        assert_eq!(rep.checks.len(), CheckKind::ALL.len());
        for c in &rep.checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn skip_symmetrize_is_detected() {
        let rep = run_verification(&VerifyConfig {
            fault: Some(Fault::SkipSymmetrize),
            ..small()
        })
        .unwrap();
        assert!(!rep.all_passed());
        let sym = rep.checks.iter().find(|c| c.check == CheckKind::Symmetry).unwrap();
        assert!(!sym.passed);
    }

    #[test]
    fn empty_selection_is_an_error() {
        let cfg = VerifyConfig {
            checks: vec![],
            ..small()
        };
        assert!(matches!(run_verification(&cfg), Err(Error::Config(_))));
    }
}
