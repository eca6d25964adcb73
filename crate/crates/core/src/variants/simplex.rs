//! Dense two-phase simplex for small LPs `max cᵀx s.t. Ax ≤ b`, `x` free.
//!
//! Free variables are split as `x = x⁺ − x⁻`; rows with negative right-hand
//! side get an artificial variable. Pivoting uses Bland's rule, which cannot
//! cycle on degenerate vertices.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

const EPS: f64 = 1e-10;

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major, `cols + 1` entries per row, the last being the right-hand side.
    data: Vec<f64>,
    basis: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.at(r, c);
        for j in 0..width {
            self.data[r * width + j] /= p;
        }
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                let delta = f * self.data[r * width + j];
                self.data[i * width + j] -= delta;
            }
            self.data[i * width + c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn reduced_cost(&self, obj: &[f64], c: usize) -> f64 {
        let mut z = obj[c];
        for i in 0..self.rows {
            z -= obj[self.basis[i]] * self.at(i, c);
        }
        z
    }

    /// Maximizes `objᵀ(columns)` over columns allowed to enter.
    fn optimize(&mut self, obj: &[f64], allowed: usize) -> Outcome {
        loop {
            let entering = (0..allowed).find(|&c| self.reduced_cost(obj, c) > EPS);
            let Some(c) = entering else {
                return Outcome::Optimal;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match best {
                        None => true,
                        Some((r, _, b)) => {
                            ratio < r - EPS || (ratio <= r + EPS && self.basis[i] < b)
                        }
                    };
                    if better {
                        best = Some((ratio, i, self.basis[i]));
                    }
                }
            }
            match best {
                Some((_, r, _)) => self.pivot(r, c),
                None => return Outcome::Unbounded,
            }
        }
    }
}

/// Solves `max cᵀx s.t. Ax ≤ b` over free `x`.
pub fn solve(a: &Matrix, b: &Vector, c: &Vector) -> Result<Vector> {
    let (m, d) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if c.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: c.len() });
    }
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negative.len();
    // columns: x⁺ (d), x⁻ (d), slacks (m), artificials (n_art)
    let structural = 2 * d + m;
    let cols = structural + n_art;
    let width = cols + 1;
    let mut data = vec![0.0; m * width];
    let mut basis = vec![0; m];
    let mut art = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut data[i * width..(i + 1) * width];
        for j in 0..d {
            row[j] = sign * a[(i, j)];
            row[d + j] = -sign * a[(i, j)];
        }
        row[2 * d + i] = sign;
        row[cols] = sign * b[i];
        if sign < 0.0 {
            row[structural + art] = 1.0;
            basis[i] = structural + art;
            art += 1;
        } else {
            basis[i] = 2 * d + i;
        }
    }
    let mut t = Tableau { rows: m, cols, data, basis };

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for v in &mut phase1[structural..] {
            *v = -1.0;
        }
        t.optimize(&phase1, cols);
        let infeasibility: f64 = (0..m)
            .filter(|&i| t.basis[i] >= structural)
            .map(|i| t.rhs(i))
            .sum();
        if infeasibility > 1e-9 * (1.0 + b.amax()) {
            return Err(Error::Infeasible);
        }
        for i in 0..m {
            if t.basis[i] >= structural {
                if let Some(c) = (0..structural).find(|&c| t.at(i, c).abs() > EPS) {
                    t.pivot(i, c);
                }
            }
        }
    }

    let mut obj = vec![0.0; cols];
    for j in 0..d {
        obj[j] = c[j];
        obj[d + j] = -c[j];
    }
    match t.optimize(&obj, structural) {
        Outcome::Unbounded => Err(Error::Unbounded),
        Outcome::Optimal => {
            let mut x = Vector::zeros(d);
            for i in 0..m {
                let col = t.basis[i];
                if col < d {
                    x[col] += t.rhs(i);
                } else if col < 2 * d {
                    x[col - d] -= t.rhs(i);
                }
            }
            Ok(x)
        }
    }
}
