//! Independent reference computations shared by the integration tests.
//!
//! Everything here works on plain `f64` slices and hand-written elimination
//! so that it shares no numerics with the library.

#![allow(dead_code)]

use metabandit::{HistoryEntry, Matrix, Vector};

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `1e-12`.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| {
        let mut r = row.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Best objective over all vertices of `{x : a x ≤ b}`, found by solving every
/// `d`-subset of constraints as equalities.
pub fn vertex_enumeration_max(a: &Matrix, b: &Vector, c: &Vector) -> Option<f64> {
    let (rows, d) = (a.nrows(), a.ncols());
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let sub: Vec<Vec<f64>> = idx.iter().map(|&i| (0..d).map(|j| a[(i, j)]).collect()).collect();
        let rhs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
        if let Some(x) = gauss_solve(&sub, &rhs) {
            let feasible = (0..rows).all(|i| {
                let lhs: f64 = (0..d).map(|j| a[(i, j)] * x[j]).sum();
                lhs <= b[i] + 1e-9 * (1.0 + b[i].abs())
            });
            if feasible {
                let val: f64 = (0..d).map(|j| c[j] * x[j]).sum();
                best = Some(best.map_or(val, |v: f64| v.max(val)));
            }
        }
        // next combination
        let mut k = d;
        while k > 0 && idx[k - 1] == rows - d + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Batch posterior after a history: `B = B₁ + Σ b bᵀ`, `μ̂ = B⁻¹(B₁μ₁ + Σ b r)`.
pub fn batch_posterior(b1: &Matrix, mu1: &Vector, history: &[HistoryEntry]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = mu1.len();
    let mut b: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| b1[(i, j)]).collect()).collect();
    let mut rhs: Vec<f64> = (0..d).map(|i| (0..d).map(|j| b1[(i, j)] * mu1[j]).sum()).collect();
    for h in history {
        for i in 0..d {
            rhs[i] += h.context[i] * h.reward;
            for j in 0..d {
                b[i][j] += h.context[i] * h.context[j];
            }
        }
    }
    let mu = gauss_solve(&b, &rhs).expect("batch precision is nonsingular");
    (b, mu)
}

/// Meta-posterior of a scalar model: μ_* ~ N(m_Q, v²σ_Q²), μ ~ N(μ_*, v²σ_*²),
/// r_t = b_t μ + v·noise. Returns `(mean, variance / v²)`.
///
/// Marginalizing μ gives `r ~ N(b μ_*, v²(σ_*² b bᵀ + I))`; Sherman–Morrison
/// reduces the data precision to `S/(1 + σ_*² S)`.
pub fn scalar_meta_posterior(m_q: f64, var_q: f64, var_star: f64, b: &[f64], r: &[f64]) -> (f64, f64) {
    let s: f64 = b.iter().map(|x| x * x).sum();
    let y: f64 = b.iter().zip(r).map(|(x, r)| x * r).sum();
    let shrink = 1.0 + var_star * s;
    let precision = 1.0 / var_q + s / shrink;
    let var = 1.0 / precision;
    (var * (m_q / var_q + y / shrink), var)
}

/// Log density of `N(x; mean, cov)` from an explicit `n × n` covariance.
fn log_gauss(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let sol = gauss_solve(cov, &diff).expect("covariance is nonsingular");
    let quad: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
    // log det via elimination on a copy
    let mut m = cov.to_vec();
    let mut log_det = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        log_det += m[col][col].abs().ln();
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Posterior mean and covariance of μ_* ∈ ℝ² by midpoint quadrature on a
/// `cells × cells` grid spanning `±half_width` prior standard deviations.
/// The task parameter is integrated out in reward space:
/// `r ~ N(B μ_*, v²(B Σ_* Bᵀ + I))` with `B` the stacked contexts.
#[allow(clippy::too_many_arguments)]
pub fn grid_meta_posterior_2d(
    mu_q: [f64; 2],
    sigma_q: [[f64; 2]; 2],
    sigma_star: [[f64; 2]; 2],
    v: f64,
    contexts: &[[f64; 2]],
    rewards: &[f64],
    cells: usize,
    half_width: f64,
) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = rewards.len();
    let v2 = v * v;
    let cov_r: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let bi = contexts[i];
                    let bj = contexts[j];
                    let mut s = 0.0;
                    for p in 0..2 {
                        for q in 0..2 {
                            s += bi[p] * sigma_star[p][q] * bj[q];
                        }
                    }
                    v2 * (s + if i == j { 1.0 } else { 0.0 })
                })
                .collect()
        })
        .collect();
    let prior_cov: Vec<Vec<f64>> = (0..2).map(|i| (0..2).map(|j| v2 * sigma_q[i][j]).collect()).collect();
    let sd = [prior_cov[0][0].sqrt(), prior_cov[1][1].sqrt()];
    let h = [2.0 * half_width * sd[0] / cells as f64, 2.0 * half_width * sd[1] / cells as f64];

    let mut logs = Vec::with_capacity(cells * cells);
    for i in 0..cells {
        for j in 0..cells {
            let x = [
                mu_q[0] - half_width * sd[0] + (i as f64 + 0.5) * h[0],
                mu_q[1] - half_width * sd[1] + (j as f64 + 0.5) * h[1],
            ];
            let mean_r: Vec<f64> = contexts.iter().map(|b| b[0] * x[0] + b[1] * x[1]).collect();
            let lp = log_gauss(&x, &mu_q, &prior_cov) + log_gauss(rewards, &mean_r, &cov_r);
            logs.push((x, lp));
        }
    }
    let top = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut m1 = [0.0; 2];
    let mut m2 = [[0.0; 2]; 2];
    for (x, l) in &logs {
        let w = (l - top).exp();
        z += w;
        for p in 0..2 {
            m1[p] += w * x[p];
            for q in 0..2 {
                m2[p][q] += w * x[p] * x[q];
            }
        }
    }
    let mean = [m1[0] / z, m1[1] / z];
    let mut cov = [[0.0; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            cov[p][q] = m2[p][q] / z - mean[p] * mean[q];
        }
    }
    (mean, cov)
}

/// Posterior weights of scalar priors `N(m_j, v² s_j²)` after observations
/// `r_t = b_t θ + v·noise`, with each marginal likelihood integrated by
/// composite Simpson's rule over `m_j ± 12 v s_j`.
pub fn quadrature_bank_weights(means: &[f64], vars: &[f64], weights: &[f64], v: f64, b: &[f64], r: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = means
        .iter()
        .zip(vars)
        .map(|(&m, &s2)| {
            let sd = v * s2.sqrt();
            let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
            let panels = 20_000;
            let h = (hi - lo) / panels as f64;
            // log integrand, rescaled by its maximum for stability
            let f = |t: f64| {
                let prior = -0.5 * ((t - m) / sd).powi(2) - sd.ln();
                let lik: f64 = b.iter().zip(r).map(|(bi, ri)| -0.5 * ((ri - bi * t) / v).powi(2)).sum();
                prior + lik
            };
            let peak = (0..=panels).map(|i| f(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
            let mut acc = 0.0;
            for i in 0..=panels {
                let c = if i == 0 || i == panels { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += c * (f(lo + i as f64 * h) - peak).exp();
            }
            peak + (acc * h / 3.0).ln()
        })
        .collect();
    let post: Vec<f64> = logs.iter().zip(weights).map(|(l, w)| if *w > 0.0 { l + w.ln() } else { f64::NEG_INFINITY }).collect();
    let top = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let un: Vec<f64> = post.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = un.iter().sum();
    un.into_iter().map(|x| x / total).collect()
}

/// Smallest eigenvalue of a symmetric 2×2 matrix in closed form.
pub fn lambda_min_2x2(a: f64, b: f64, d: f64) -> f64 {
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mid - rad
}

/// ρ_min by scanning every window `t₀+1..t₀+Δ` (`t₀ = 1..n−Δ`, 1-based rounds)
/// and every arm sequence, for two-dimensional contexts.
pub fn brute_force_rho_2d(rounds: &[Vec<[f64; 2]>], window: usize) -> f64 {
    let n = rounds.len();
    let mut best = f64::INFINITY;
    for t0 in 1..=n - window {
        let k = rounds[t0].len();
        let total = k.pow(window as u32);
        for code in 0..total {
            let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
            let mut c = code;
            for tau in t0 + 1..=t0 + window {
                let ctx = &rounds[tau - 1];
                let x = ctx[c % ctx.len()];
                c /= ctx.len();
                a += x[0] * x[0];
                b += x[0] * x[1];
                d += x[1] * x[1];
            }
            best = best.min(lambda_min_2x2(a, b, d).max(0.0));
        }
    }
    best
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}
