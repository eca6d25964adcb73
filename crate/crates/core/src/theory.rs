//! Computable quantities from the regret analysis: the context-richness
//! constant ϑ, the bound constants `u₁…u₅`, the regret-bound right-hand
//! sides for Meta-TSLB and Meta-TS, and numeric checks of the supporting
//! inequalities on simulated trajectories.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ContextSource, RoundNoise};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::parallel::{self, ExecMode};
use crate::rng::StreamRng;
use crate::ts::{run_ts_task_observed, PosteriorState, TaskOutcome};
use crate::types::{BanditInstance, GaussianBelief, RoundContexts};

/// Enumeration budget `k^Δ·(n−Δ)` for the exact ϑ.
pub const EXACT_BUDGET: f64 = 1e6;
/// Minimum number of sampled windows in Monte-Carlo mode.
pub const MIN_MC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum VarthetaMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// ϑ = min{ρ_min, λ_min(B(1))}/(4Δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    pub window: usize,
    pub rho_min: f64,
    pub lambda_min_b1: f64,
    /// `None` when ρ_min or λ_min(B(1)) is zero.
    pub vartheta: Option<f64>,
    /// Set in Monte-Carlo mode: ρ_min is then an upper estimate.
    pub estimated: bool,
}

impl AssumptionParams {
    pub fn from_parts(window: usize, rho_min: f64, lambda_min_b1: f64, estimated: bool) -> Self {
        let floor = rho_min.min(lambda_min_b1);
        Self {
            window,
            rho_min,
            lambda_min_b1,
            vartheta: (floor > 0.0).then(|| floor / (4.0 * window as f64)),
            estimated,
        }
    }
}

fn clamp_rank_deficient(m: &Matrix) -> f64 {
    let lam = linalg::lambda_min(m);
    if lam <= 1e-12 * m.trace().max(f64::MIN_POSITIVE) {
        0.0
    } else {
        lam
    }
}

fn window_min(rounds: &[RoundContexts], start: usize, window: usize, acc: &Matrix) -> f64 {
    if window == 0 {
        return clamp_rank_deficient(acc);
    }
    let mut best = f64::INFINITY;
    for b in rounds[start].vectors() {
        let mut next = acc.clone();
        next.ger(1.0, b, b, 1.0);
        best = best.min(window_min(rounds, start + 1, window - 1, &next));
        if best == 0.0 {
            break;
        }
    }
    best
}

/// ρ_min and ϑ from the contexts of rounds `1..=n` (`rounds[t-1]` is round `t`).
/// Windows are `τ = t₀+1, …, t₀+Δ` for `t₀ = 1, …, n−Δ`.
pub fn vartheta_from_rounds(
    rounds: &[RoundContexts],
    window: usize,
    b1: &Matrix,
    mode: VarthetaMode,
    exec: ExecMode,
) -> Result<AssumptionParams> {
    let n = rounds.len();
    if window == 0 || window >= n {
        return Err(Error::Precondition(format!(
            "window Δ={window} must satisfy 1 ≤ Δ < n={n}"
        )));
    }
    let d = b1.nrows();
    if let Some(r) = rounds.iter().find(|r| r.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.dim() });
    }
    let lambda_b1 = linalg::lambda_min(b1);
    let starts = n - window;
    let rho = match mode {
        VarthetaMode::Exact => {
            let k = rounds.iter().map(|r| r.k()).max().unwrap_or(1) as f64;
            let work = k.powi(window as i32) * starts as f64;
            if work > EXACT_BUDGET {
                return Err(Error::Precondition(format!(
                    "exact ϑ needs {work:.3e} window evaluations, budget is {EXACT_BUDGET:.0e}"
                )));
            }
            let zero = Matrix::zeros(d, d);
            // t₀ = 1 + i, first round of the window is t₀ + 1, i.e. index i + 1
            parallel::map_indexed(starts, exec, None, |i| window_min(rounds, i + 1, window, &zero))
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        }
        VarthetaMode::MonteCarlo { samples, seed } => {
            use rand::SeedableRng;
            let mut rng = StreamRng::seed_from_u64(seed);
            let mut best = f64::INFINITY;
            for _ in 0..samples.max(MIN_MC_SAMPLES) {
                let first = 1 + rng.random_range(1..=starts);
                let mut acc = Matrix::zeros(d, d);
                for t in first..first + window {
                    let ctx = &rounds[t - 1];
                    let b = &ctx.vectors()[rng.random_range(0..ctx.k())];
                    acc.ger(1.0, b, b, 1.0);
                }
                best = best.min(clamp_rank_deficient(&acc));
            }
            best
        }
    };
    Ok(AssumptionParams::from_parts(
        window,
        rho,
        lambda_b1,
        matches!(mode, VarthetaMode::MonteCarlo { .. }),
    ))
}

/// [`vartheta_from_rounds`] over rounds `1..=n` of one task of `source`.
pub fn estimate_vartheta(
    source: &dyn ContextSource,
    task: usize,
    n: usize,
    window: usize,
    b1: &Matrix,
    mode: VarthetaMode,
    exec: ExecMode,
) -> Result<AssumptionParams> {
    let rounds = (1..=n)
        .map(|t| source.contexts(task, t))
        .collect::<Result<Vec<_>>>()?;
    vartheta_from_rounds(&rounds, window, b1, mode, exec)
}

/// Scalar inputs of the regret bounds. `lambda_min`/`lambda_max` are the
/// extreme eigenvalues of `Σ_*⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub v: f64,
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_max_sigma_q: f64,
    pub mu_q_norm: f64,
    pub vartheta: f64,
}

impl BoundInputs {
    /// Reads the eigenvalues off `Σ_*` and the meta-prior.
    #[allow(clippy::too_many_arguments)]
    pub fn from_model(
        m: usize,
        n: usize,
        k: usize,
        delta: f64,
        meta_prior: &GaussianBelief,
        sigma_star: &Matrix,
        vartheta: f64,
    ) -> Self {
        let (lo, hi) = linalg::eigen_extremes(sigma_star);
        Self {
            m,
            n,
            k,
            d: meta_prior.dim(),
            v: meta_prior.noise_scale(),
            delta,
            lambda_min: 1.0 / hi,
            lambda_max: 1.0 / lo,
            lambda_max_sigma_q: linalg::lambda_max(meta_prior.cov_core()),
            mu_q_norm: meta_prior.mean().norm(),
            vartheta,
        }
    }

    /// `2/(175·λ_min)`, the floor of the meta-posterior contraction.
    pub fn contraction_floor(&self) -> f64 {
        2.0 / (175.0 * self.lambda_min)
    }

    /// λ_max(Σ_Q) ≥ 2/(175·λ_min).
    pub fn eigenvalue_condition(&self) -> bool {
        self.lambda_max_sigma_q >= self.contraction_floor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
    pub u5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    MetaTslb,
    MetaTs,
}

/// Square root that accepts roundoff-sized negative arguments.
fn root(x: f64, scale: f64, what: &str) -> Result<f64> {
    if x >= 0.0 {
        Ok(x.sqrt())
    } else if x >= -1e-12 * scale.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Precondition(format!("{what} is negative ({x:e})")))
    }
}

fn check_common(inputs: &BoundInputs) -> Result<()> {
    let positive = [
        ("v", inputs.v),
        ("δ", inputs.delta),
        ("λ_min", inputs.lambda_min),
        ("λ_max", inputs.lambda_max),
    ];
    for (name, x) in positive {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Precondition(format!("{name} must be positive, got {x}")));
        }
    }
    if inputs.d == 0 {
        return Err(Error::Precondition("d must be at least 1".into()));
    }
    if inputs.lambda_max_sigma_q < 0.0 || inputs.mu_q_norm < 0.0 {
        return Err(Error::Precondition("λ_max(Σ_Q) and ‖μ_Q‖ must be nonnegative".into()));
    }
    Ok(())
}

/// Evaluates `u₁…u₅` as printed. δ may exceed 1 as long as the logarithms
/// stay nonnegative.
pub fn bound_constants(inputs: &BoundInputs) -> Result<BoundConstants> {
    check_common(inputs)?;
    let d = inputs.d as f64;
    let log2 = (2.0 * d / inputs.delta).ln();
    let log4 = (4.0 * d / inputs.delta).ln();
    if log2 < -1e-15 {
        return Err(Error::Precondition(format!(
            "log(2d/δ) is negative: δ={} exceeds 2d={}",
            inputs.delta,
            2.0 * d
        )));
    }
    let log2 = log2.max(0.0);
    let floor = inputs.contraction_floor();
    let excess = inputs.lambda_max_sigma_q - floor;
    if excess < -1e-12 * floor.max(inputs.lambda_max_sigma_q) {
        return Err(Error::Precondition(format!(
            "eigenvalue condition λ_max(Σ_Q) ≥ 2/(175·λ_min) fails: {} < {}",
            inputs.lambda_max_sigma_q, floor
        )));
    }
    let excess = excess.max(0.0);
    let scale = d * inputs.lambda_max_sigma_q.max(floor) * log4.max(1.0);
    Ok(BoundConstants {
        u1: inputs.mu_q_norm
            + inputs.v * root(d * inputs.lambda_max_sigma_q * log2, scale, "u₁ radicand")?,
        u2: root(d * excess * log2, scale, "u₂ radicand")?,
        u3: root(d * floor * log2, scale, "u₃ radicand")?,
        u4: root(d * excess * log4, scale, "u₄ radicand")?,
        u5: root(d * floor * log4, scale, "u₅ radicand")?,
    })
}

/// The four groups of the regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `2mv(√(1/λ_min) + √((n−1)/ϑ))√(2 log n)`
    pub exploration: f64,
    /// `mkv√(2/(πλ_min))`
    pub tail: f64,
    /// Cost of learning the instance prior.
    pub learning: f64,
    /// `4mkv(√(1/(2πλ_min)) + u₁)`
    pub mismatch: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.exploration + self.tail + self.learning + self.mismatch
    }
}

pub fn theorem_terms(inputs: &BoundInputs, which: BoundKind) -> Result<BoundTerms> {
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::Precondition(format!("δ must lie in (0,1), got {}", inputs.delta)));
    }
    if inputs.m == 0 || inputs.n == 0 || inputs.k == 0 {
        return Err(Error::Precondition("m, n and k must be at least 1".into()));
    }
    if !(inputs.vartheta > 0.0) {
        return Err(Error::Precondition(format!("ϑ must be positive, got {}", inputs.vartheta)));
    }
    let u = bound_constants(inputs)?;
    let m = inputs.m as f64;
    let n = inputs.n as f64;
    let k = inputs.k as f64;
    let v = inputs.v;
    let lmin = inputs.lambda_min;
    let pi = std::f64::consts::PI;
    let spread = (1.0 / lmin).sqrt() + ((n - 1.0) / inputs.vartheta).sqrt();
    let (coef, a, b) = match which {
        BoundKind::MetaTslb => (2.0, u.u2, u.u3),
        BoundKind::MetaTs => (4.0, u.u4, u.u5),
    };
    Ok(BoundTerms {
        exploration: 2.0 * m * v * spread * (2.0 * n.ln()).sqrt(),
        tail: m * k * v * (2.0 / (pi * lmin)).sqrt(),
        learning: coef
            * k
            * (4.0 * m.ln() * a + m * b)
            * (u.u1 + v * (2.0 * n.ln() / lmin).sqrt())
            * spread
            * (2.0 * inputs.lambda_max / pi).sqrt(),
        mismatch: 4.0 * m * k * v * ((1.0 / (2.0 * pi * lmin)).sqrt() + u.u1),
    })
}

/// Right-hand side of the Bayes regret bound over `m` tasks.
pub fn theorem_rhs(inputs: &BoundInputs, which: BoundKind) -> Result<f64> {
    Ok(theorem_terms(inputs, which)?.total())
}

/// Largest `‖ε‖` for which a meta-prior learned on unperturbed tasks still
/// yields a smaller bound: `v(4 log(m)/m − (7/8)^{m/2})·u₂`.
pub fn check_generalization_threshold(inputs: &BoundInputs) -> Result<f64> {
    if inputs.m < 2 {
        return Err(Error::Precondition(format!("threshold needs m ≥ 2, got {}", inputs.m)));
    }
    let m = inputs.m as f64;
    let u = bound_constants(inputs)?;
    Ok(inputs.v * (4.0 * m.ln() / m - (7.0f64 / 8.0).powf(m / 2.0)) * u.u2)
}

/// High-probability radius of `‖μ_{Q,s} − μ_*‖` for task `s`.
/// Meta-TS doubles it and uses `log(4d/δ)`.
pub fn concentration_radius(inputs: &BoundInputs, s: usize, which: BoundKind) -> Result<f64> {
    check_common(inputs)?;
    if s == 0 {
        return Err(Error::Precondition("tasks are numbered from 1".into()));
    }
    let d = inputs.d as f64;
    let floor = inputs.contraction_floor();
    let excess = inputs.lambda_max_sigma_q - floor;
    if excess < 0.0 {
        return Err(Error::Precondition(
            "eigenvalue condition λ_max(Σ_Q) ≥ 2/(175·λ_min) fails".into(),
        ));
    }
    let decay = (7.0f64 / 8.0).powi(s as i32 - 1);
    let (scale, log) = match which {
        BoundKind::MetaTslb => (1.0, (2.0 * d / inputs.delta).ln()),
        BoundKind::MetaTs => (2.0, (4.0 * d / inputs.delta).ln()),
    };
    Ok(scale * inputs.v * (d * (excess * decay + floor) * log.max(0.0)).sqrt())
}

/// `(7/8)·λ_max(Σ_{Q,s}) + 1/(100·λ_min)`.
pub fn contraction_bound(lambda_max_prev: f64, lambda_min: f64) -> f64 {
    7.0 / 8.0 * lambda_max_prev + 1.0 / (100.0 * lambda_min)
}

/// Per-round quantities of one TS trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryDiagnostics {
    /// λ_min(B(t)) for t = 1..n.
    pub lambda_min: Vec<f64>,
    /// `s_i(t)² = b_i(t)ᵀB(t)⁻¹b_i(t)` for every arm.
    pub s_squared: Vec<Vec<f64>>,
    /// `‖b_i(t)‖²` for every arm.
    pub context_norm_sq: Vec<Vec<f64>>,
}

impl TrajectoryDiagnostics {
    pub fn observe(&mut self, state: &PosteriorState, contexts: &RoundContexts) {
        self.lambda_min.push(linalg::lambda_min(state.precision()));
        self.s_squared.push(
            contexts
                .vectors()
                .iter()
                .map(|b| state.predictive_variance_core(b))
                .collect(),
        );
        self.context_norm_sq
            .push(contexts.vectors().iter().map(Vector::norm_squared).collect());
    }

    pub fn rounds(&self) -> usize {
        self.lambda_min.len()
    }
}

/// Runs one TS task and records its diagnostics.
pub fn record_trajectory(
    prior: &GaussianBelief,
    instance: &BanditInstance,
    contexts: &dyn ContextSource,
    task: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
) -> Result<(TaskOutcome, TrajectoryDiagnostics)> {
    let mut diag = TrajectoryDiagnostics::default();
    let outcome = run_ts_task_observed(prior, instance, contexts, task, n, noise, &mut |s, c| {
        diag.observe(s, c)
    })?;
    Ok((outcome, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenSumReport {
    /// `Σ_t √(1/λ_min(B(t)))`
    pub lhs: f64,
    /// `√(1/λ_min(B(1))) + √((n−1)/ϑ)`
    pub rhs: f64,
    pub holds: bool,
    /// With one round both sides coincide; the check is then `≤`.
    pub n_one_edge: bool,
}

/// Checks the sum bound on `Σ_t √(1/λ_min(B(t)))`. Fails with a precondition
/// error if the trajectory breaks `λ_min(B(t)) ≥ 4ϑ(t−1)` in some round.
pub fn check_eigen_sum(diag: &TrajectoryDiagnostics, params: &AssumptionParams) -> Result<EigenSumReport> {
    let vartheta = params
        .vartheta
        .ok_or_else(|| Error::Precondition("ϑ is undefined (ρ_min = 0)".into()))?;
    let n = diag.rounds();
    if n == 0 {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    for (i, &lam) in diag.lambda_min.iter().enumerate() {
        let need = 4.0 * vartheta * i as f64;
        if lam < need * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!(
                "round {}: λ_min(B(t)) = {lam} < 4ϑ(t−1) = {need}",
                i + 1
            )));
        }
    }
    let lhs: f64 = diag.lambda_min.iter().map(|l| (1.0 / l).sqrt()).sum();
    let rhs = (1.0 / diag.lambda_min[0]).sqrt() + ((n as f64 - 1.0) / vartheta).sqrt();
    let n_one_edge = n == 1;
    let holds = if n_one_edge { lhs <= rhs } else { lhs < rhs };
    Ok(EigenSumReport {
        lhs,
        rhs,
        holds,
        n_one_edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SBoundReport {
    /// Largest `s_i(t)²·λ_min(B(t))/‖b_i(t)‖²` over nonzero contexts.
    pub worst_ratio: f64,
    /// Largest `s_i(t)²·λ_min(B(t))`, the ratio against `1/λ_min(B(t))`.
    pub worst_unit_ratio: f64,
    pub holds: bool,
}

/// `s_i(t)² ≤ ‖b_i(t)‖²/λ_min(B(t))` for every arm and round.
pub fn check_s_bound(diag: &TrajectoryDiagnostics) -> SBoundReport {
    let mut worst: f64 = 0.0;
    let mut worst_unit: f64 = 0.0;
    for ((lam, s2), norms) in diag.lambda_min.iter().zip(&diag.s_squared).zip(&diag.context_norm_sq) {
        for (s, nb) in s2.iter().zip(norms) {
            worst_unit = worst_unit.max(s * lam);
            if *nb > 0.0 {
                worst = worst.max(s * lam / nb);
            }
        }
    }
    SBoundReport {
        worst_ratio: worst,
        worst_unit_ratio: worst_unit,
        holds: worst <= 1.0 + 1e-10,
    }
}
