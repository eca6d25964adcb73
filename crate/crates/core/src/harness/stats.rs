//! Summaries over runs and paired comparisons.

use serde::{Deserialize, Serialize};

use crate::types::AgentKind;

/// Mean over runs of the regret accumulated over tasks `1..=task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: AgentKind,
    pub task: usize,
    pub mean_cumulative_regret: f64,
    pub stderr: f64,
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `task_regret[run][s]` per agent, turned into one row per `(agent, task)`.
pub fn summarize(per_agent: &[(AgentKind, Vec<Vec<f64>>)]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (agent, runs) in per_agent {
        let m = runs.first().map_or(0, Vec::len);
        let cumulative: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| {
                r.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        for s in 0..m {
            let column: Vec<f64> = cumulative.iter().map(|c| c[s]).collect();
            let (mean, stderr) = mean_stderr(&column);
            rows.push(SummaryRow {
                agent: *agent,
                task: s + 1,
                mean_cumulative_regret: mean,
                stderr,
            });
        }
    }
    rows
}

/// One-sided paired sign test of `a < b`. Ties are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(Binomial(wins + losses, ½) ≥ wins)`.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
        } else if x > y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins + losses, wins),
    }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, ½)`, summed in the log domain.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let half = -(n as f64) * std::f64::consts::LN_2;
    let mut log_pmf = half;
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i >= k {
            terms.push(log_pmf);
        }
        log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()).exp().min(1.0)
}
