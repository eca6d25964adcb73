//! Meta-learning over a finite bank of Gaussian instance priors.
//!
//! The meta-posterior is a weight vector over the bank. After a task it is
//! reweighted by each prior's marginal likelihood of the task history
//!
//! ```text
//! log f(j) = −(1/2v²)[μ_jᵀ Σ_j⁻¹ μ_j − ξ_jᵀ G_j ξ_j] − ½ log det(Σ_j G_j)
//! G_j = S + Σ_j⁻¹,   ξ_j = G_j⁻¹ (Y + Σ_j⁻¹ μ_j)
//! ```
//!
//! up to terms shared by all priors. The determinant term vanishes from the
//! normalized weights when all `Σ_j` are equal. Weights are kept in the log
//! domain.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::meta::{sufficient_statistics, MetaAgent};
use crate::rng::{Purpose, SeedTree};
use crate::types::{AgentKind, GaussianBelief, HistoryEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorBank {
    priors: Vec<GaussianBelief>,
    weights: Vec<f64>,
}

impl PriorBank {
    pub fn new(priors: Vec<GaussianBelief>, weights: Vec<f64>) -> Result<Self> {
        if priors.is_empty() {
            return Err(Error::Precondition("prior bank must be nonempty".into()));
        }
        if priors.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: priors.len(),
                got: weights.len(),
            });
        }
        let d = priors[0].dim();
        let v = priors[0].noise_scale();
        if priors.iter().any(|p| p.dim() != d || p.noise_scale() != v) {
            return Err(Error::Precondition(
                "bank priors must share dimension and noise scale".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Precondition("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { priors, weights })
    }

    pub fn uniform(priors: Vec<GaussianBelief>) -> Result<Self> {
        let l = priors.len().max(1);
        Self::new(priors, vec![1.0 / l as f64; l])
    }

    pub fn priors(&self) -> &[GaussianBelief] {
        &self.priors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.priors[0].dim()
    }

    /// Moment-matched Gaussian of the weighted mixture, in `v²`-scaled form.
    pub fn moment_matched(&self) -> Result<GaussianBelief> {
        let d = self.dim();
        let v2 = self.priors[0].noise_scale().powi(2);
        let mut mean = Vector::zeros(d);
        for (p, w) in self.priors.iter().zip(&self.weights) {
            mean.axpy(*w, p.mean(), 1.0);
        }
        let mut cov = Matrix::zeros(d, d);
        for (p, w) in self.priors.iter().zip(&self.weights) {
            let dev = p.mean() - &mean;
            cov += (p.cov_core() + &dev * dev.transpose() / v2) * *w;
        }
        GaussianBelief::new(mean, cov, self.priors[0].noise_scale())
    }
}

/// Per-prior log marginal likelihood of a history, up to a shared constant.
pub fn log_marginal_likelihoods(bank: &PriorBank, history: &[HistoryEntry]) -> Result<Vec<f64>> {
    let (s, y) = sufficient_statistics(history, bank.dim())?;
    bank.priors
        .iter()
        .map(|p| {
            let v2 = p.noise_scale().powi(2);
            let sigma_chol = linalg::cholesky(p.cov_core(), "bank covariance")?;
            let sigma_inv = linalg::symmetrized(sigma_chol.inverse());
            let prior_info = &sigma_inv * p.mean();
            let g = linalg::symmetrized(&s + &sigma_inv);
            let g_chol = linalg::cholesky(&g, "G")?;
            let xi = g_chol.solve(&(&y + &prior_info));
            let quad = p.mean().dot(&prior_info) - xi.dot(&(&g * &xi));
            let log_det = 2.0
                * (sigma_chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
                    + g_chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>());
            Ok(-quad / (2.0 * v2) - 0.5 * log_det)
        })
        .collect()
}

pub fn finite_prior_update(bank: &PriorBank, history: &[HistoryEntry]) -> Result<PriorBank> {
    if bank.len() == 1 {
        return Ok(bank.clone());
    }
    let loglik = log_marginal_likelihoods(bank, history)?;
    let log_post: Vec<f64> = bank
        .weights
        .iter()
        .zip(&loglik)
        .map(|(w, l)| if *w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Precondition("all prior weights vanished".into()));
    }
    let unnorm: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(PriorBank {
        priors: bank.priors.clone(),
        weights: unnorm.into_iter().map(|w| w / total).collect(),
    })
}

/// Index of the largest weight, lowest index on ties.
pub fn finite_prior_select(bank: &PriorBank) -> usize {
    linalg::argmax(bank.weights.iter().copied()).unwrap_or(0)
}

/// Draws an index with probability equal to its weight.
pub fn finite_prior_sample<R: Rng + ?Sized>(bank: &PriorBank, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, w) in bank.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    bank.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// How a bank agent picks the task prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankRule {
    /// Largest weight (Meta-TSLB).
    Argmax,
    /// Sample by weight (Meta-TS).
    Sample,
}

#[derive(Debug, Clone)]
pub struct BankAgent {
    bank: PriorBank,
    rule: BankRule,
    tree: SeedTree,
    run: usize,
    choices: Vec<usize>,
}

impl BankAgent {
    pub fn new(bank: PriorBank, rule: BankRule, tree: SeedTree, run: usize) -> Self {
        Self {
            bank,
            rule,
            tree,
            run,
            choices: Vec::new(),
        }
    }

    pub fn bank(&self) -> &PriorBank {
        &self.bank
    }

    pub fn choices(&self) -> &[usize] {
        &self.choices
    }
}

impl MetaAgent for BankAgent {
    fn kind(&self) -> AgentKind {
        match self.rule {
            BankRule::Argmax => AgentKind::MetaTslb,
            BankRule::Sample => AgentKind::MetaTs,
        }
    }

    fn task_prior(&mut self, task: usize) -> Result<GaussianBelief> {
        let j = match self.rule {
            BankRule::Argmax => finite_prior_select(&self.bank),
            BankRule::Sample => {
                let mut rng = self.tree.stream(self.run, task, 0, Purpose::MetaSample);
                finite_prior_sample(&self.bank, &mut rng)
            }
        };
        self.choices.push(j);
        Ok(self.bank.priors[j].clone())
    }

    fn end_task(&mut self, history: &[HistoryEntry]) -> Result<()> {
        self.bank = finite_prior_update(&self.bank, history)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Pull;

    fn prior(mean: &[f64], cov: Matrix, v: f64) -> GaussianBelief {
        GaussianBelief::new(Vector::from_row_slice(mean), cov, v).unwrap()
    }

    fn history() -> Vec<HistoryEntry> {
        [(1.0, 0.2, 0.9), (0.3, -0.5, -0.1), (-0.7, 1.1, 0.4)]
            .iter()
            .enumerate()
            .map(|(t, &(a, b, r))| HistoryEntry {
                round: t + 1,
                pulled: Pull::Arm(0),
                context: Vector::from_row_slice(&[a, b]),
                reward: r,
            })
            .collect()
    }

    #[test]
    fn single_prior_keeps_unit_weight() {
        let bank = PriorBank::uniform(vec![prior(&[0.0, 1.0], Matrix::identity(2, 2), 0.5)]).unwrap();
        let next = finite_prior_update(&bank, &history()).unwrap();
        assert_eq!(next.weights(), &[1.0]);
    }

    #[test]
    fn identical_priors_keep_equal_weights() {
        let p = prior(&[0.3, -0.2], Matrix::identity(2, 2) * 0.7, 0.5);
        let bank = PriorBank::uniform(vec![p.clone(), p]).unwrap();
        let next = finite_prior_update(&bank, &history()).unwrap();
        assert_eq!(next.weights()[0], next.weights()[1]);
        assert!((next.weights()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_covariances_match_the_exponential_factor() {
        // With a shared Σ the determinant term cancels; compare against the
        // bare exp{−(1/2v²)[μᵀΣ⁻¹μ − ξᵀGξ]} factor evaluated independently.
        let cov = Matrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.5]);
        let v = 0.6;
        let means = [[0.5, -0.3], [-0.4, 0.9], [1.2, 0.1]];
        let bank = PriorBank::uniform(means.iter().map(|m| prior(m, cov.clone(), v)).collect())
            .unwrap();
        let h = history();
        let next = finite_prior_update(&bank, &h).unwrap();

        let sigma_inv = cov.clone().try_inverse().unwrap();
        let (s, y) = sufficient_statistics(&h, 2).unwrap();
        let g = &s + &sigma_inv;
        let g_inv = g.clone().try_inverse().unwrap();
        let f: Vec<f64> = means
            .iter()
            .map(|m| {
                let mu = Vector::from_row_slice(m);
                let xi = &g_inv * (&y + &sigma_inv * &mu);
                (-(mu.dot(&(&sigma_inv * &mu)) - xi.dot(&(&g * &xi))) / (2.0 * v * v)).exp()
            })
            .collect();
        let total: f64 = f.iter().sum();
        for (w, fj) in next.weights().iter().zip(&f) {
            assert!((w - fj / total).abs() < 1e-12);
        }
    }

    #[test]
    fn select_argmax_and_tie_break() {
        let p = prior(&[0.0], Matrix::identity(1, 1), 1.0);
        let bank = PriorBank::new(vec![p.clone(), p.clone(), p.clone()], vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(finite_prior_select(&bank), 1);
        let uniform = PriorBank::uniform(vec![p.clone(), p.clone(), p]).unwrap();
        assert_eq!(finite_prior_select(&uniform), 0);
    }

    #[test]
    fn invalid_banks() {
        let p = prior(&[0.0], Matrix::identity(1, 1), 1.0);
        assert!(PriorBank::new(vec![], vec![]).is_err());
        assert!(PriorBank::new(vec![p.clone()], vec![0.5]).is_err());
        assert!(PriorBank::new(vec![p.clone(), p], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn zero_weight_priors_stay_zero() {
        let p = prior(&[0.0, 0.0], Matrix::identity(2, 2), 0.5);
        let q = prior(&[1.0, 1.0], Matrix::identity(2, 2), 0.5);
        let bank = PriorBank::new(vec![p, q], vec![0.0, 1.0]).unwrap();
        let next = finite_prior_update(&bank, &history()).unwrap();
        assert_eq!(next.weights(), &[0.0, 1.0]);
    }

    #[test]
    fn moment_matched_mixture() {
        let v = 0.5;
        let a = prior(&[1.0], Matrix::from_element(1, 1, 1.0), v);
        let b = prior(&[-1.0], Matrix::from_element(1, 1, 2.0), v);
        let mm = PriorBank::uniform(vec![a, b]).unwrap().moment_matched().unwrap();
        assert!(mm.mean()[0].abs() < 1e-15);
        // v²·core = 0.25·1.5 + 1 (spread of the means)
        assert!((mm.covariance()[(0, 0)] - (0.25 * 1.5 + 1.0)).abs() < 1e-12);
    }
}
