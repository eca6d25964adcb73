//! Polyhedral arm sets `{x : Ax ≤ b}` and Thompson sampling over them.

use rand::Rng;

use crate::env::RoundNoise;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::meta::TaskRunner;
use crate::rng::{Purpose, SeedTree, StreamRng};
use crate::ts::{ts_init, ts_update, TaskOutcome};
use crate::types::{BanditInstance, GaussianBelief, HistoryEntry, Pull};

use super::simplex;

/// A nonempty, bounded polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    a: Matrix,
    b: Vector,
}

impl Polyhedron {
    /// Verifies feasibility and boundedness by solving `2d` LPs.
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        let d = a.ncols();
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut c = Vector::zeros(d);
                c[i] = sign;
                simplex::solve(&a, &b, &c)?;
            }
        }
        Ok(Self { a, b })
    }

    /// `Ax ≤ b` intersected with the box `[−half_width, half_width]^d`.
    /// `witness` must be feasible; it proves nonemptiness without an LP.
    pub fn boxed(a: &Matrix, b: &Vector, half_width: f64, witness: &Vector) -> Result<Self> {
        let (c, d) = a.shape();
        if b.len() != c {
            return Err(Error::DimensionMismatch { expected: c, got: b.len() });
        }
        let mut big_a = Matrix::zeros(c + 2 * d, d);
        let mut big_b = Vector::zeros(c + 2 * d);
        big_a.rows_mut(0, c).copy_from(a);
        big_b.rows_mut(0, c).copy_from(b);
        for i in 0..d {
            big_a[(c + 2 * i, i)] = 1.0;
            big_a[(c + 2 * i + 1, i)] = -1.0;
            big_b[c + 2 * i] = half_width;
            big_b[c + 2 * i + 1] = half_width;
        }
        let poly = Self { a: big_a, b: big_b };
        if !poly.contains(witness, 0.0) {
            return Err(Error::Infeasible);
        }
        Ok(poly)
    }

    /// Random polytope: `A` uniform in `[−1,1]^{rows×d}`, `b = A x₀ + u` with
    /// `x₀ ∈ [0,1]^d` and `u ∈ (0,1]^rows`, then boxed to `[−half_width, half_width]^d`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, rows: usize, d: usize, half_width: f64) -> Self {
        let a = Matrix::from_fn(rows, d, |_, _| rng.random_range(-1.0..=1.0));
        let x0 = Vector::from_fn(d, |_, _| rng.random_range(0.0..=1.0));
        let u = Vector::from_fn(rows, |_, _| 1.0 - rng.random::<f64>());
        let b = &a * &x0 + u;
        Self::boxed(&a, &b, half_width, &x0).expect("x0 is strictly feasible")
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim() && (&self.a * x - &self.b).iter().all(|s| *s <= tol)
    }
}

/// A vertex maximizing `objectiveᵀx` over `poly`.
pub fn lp_argmax(poly: &Polyhedron, objective: &Vector) -> Result<Vector> {
    simplex::solve(&poly.a, &poly.b, objective)
}

/// Supplies the arm polyhedron of each round.
pub trait PolyhedronSource: Sync {
    fn dim(&self) -> usize;
    fn polyhedron(&self, task: usize, round: usize) -> Result<Polyhedron>;
}

/// Fresh random polytope per `(task, round)` from the `Contexts` substream.
#[derive(Debug, Clone)]
pub struct RandomPolyhedra {
    pub tree: SeedTree,
    pub run: usize,
    pub rows: usize,
    pub d: usize,
    pub half_width: f64,
    pub shared: bool,
}

impl PolyhedronSource for RandomPolyhedra {
    fn dim(&self) -> usize {
        self.d
    }

    fn polyhedron(&self, task: usize, round: usize) -> Result<Polyhedron> {
        let task_key = if self.shared { 0 } else { task };
        let mut rng: StreamRng = self.tree.stream(self.run, task_key, round, Purpose::Contexts);
        Ok(Polyhedron::random(&mut rng, self.rows, self.d, self.half_width))
    }
}

/// Gap between the LP optimum under the true parameter and the chosen point.
/// Roundoff below `1e-9` relative to the optimum is clamped to zero.
pub fn polyhedral_regret(poly: &Polyhedron, instance: &BanditInstance, chosen: &Vector) -> Result<f64> {
    let best = lp_argmax(poly, &instance.mu)?;
    let opt = instance.expected_reward(&best);
    let gap = opt - instance.expected_reward(chosen);
    if gap < 0.0 && gap > -1e-9 * (1.0 + opt.abs()) {
        Ok(0.0)
    } else {
        Ok(gap)
    }
}

/// TS over polyhedral arm sets: pull the LP argmax for the posterior sample.
pub fn run_polyhedral_ts(
    prior: &GaussianBelief,
    instance: &BanditInstance,
    source: &dyn PolyhedronSource,
    task: usize,
    n: usize,
    noise: &mut dyn RoundNoise,
) -> Result<TaskOutcome> {
    if n == 0 {
        return Err(Error::Precondition("a task needs at least one round".into()));
    }
    let d = prior.dim();
    let v = prior.noise_scale();
    let mut state = ts_init(prior)?;
    let mut history = Vec::with_capacity(n);
    let mut regret = Vec::with_capacity(n);
    for t in 1..=n {
        let mut step = || -> Result<(HistoryEntry, f64, _)> {
            let poly = source.polyhedron(task, t)?;
            let z = noise.posterior_normals(task, t, d);
            let sample = state.sample_from_normals(&z);
            let x = lp_argmax(&poly, &sample)?;
            let gap = polyhedral_regret(&poly, instance, &x)?;
            let reward = instance.expected_reward(&x) + v * noise.reward_noise(task, t);
            let next = ts_update(&state, &x, reward)?;
            let entry = HistoryEntry {
                round: t,
                pulled: Pull::Point,
                context: x,
                reward,
            };
            Ok((entry, gap, next))
        };
        let (entry, gap, next) = step().map_err(|e| e.in_round(t))?;
        history.push(entry);
        regret.push(gap);
        state = next;
    }
    Ok(TaskOutcome {
        history,
        instant_regret: regret,
        final_state: state,
    })
}

pub struct PolyhedralTasks<'a> {
    pub source: &'a dyn PolyhedronSource,
}

impl TaskRunner for PolyhedralTasks<'_> {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn run_task(
        &self,
        prior: &GaussianBelief,
        instance: &BanditInstance,
        task: usize,
        n: usize,
        noise: &mut dyn RoundNoise,
    ) -> Result<TaskOutcome> {
        run_polyhedral_ts(prior, instance, self.source, task, n, noise)
    }
}
