//! Sources of per-round contexts and noise.
//!
//! Sources are deterministic functions of `(task, round)` so that every agent
//! in a run sees the same environment.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::linalg::Vector;
use crate::rng::{Purpose, SeedTree};
use crate::types::{standard_normal_vector, RoundContexts};

pub trait ContextSource: Sync {
    fn dim(&self) -> usize;
    fn contexts(&self, task: usize, round: usize) -> Result<RoundContexts>;
}

/// Contexts with coordinates uniform on `[low, high]`, optionally projected
/// onto the unit ball (`b / max(1, ‖b‖)`).
#[derive(Debug, Clone)]
pub struct UniformContexts {
    pub tree: SeedTree,
    pub run: usize,
    pub k: usize,
    pub d: usize,
    pub low: f64,
    pub high: f64,
    pub normalize: bool,
    /// Same contexts in round `t` of every task.
    pub shared: bool,
}

impl UniformContexts {
    pub fn draw_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let mut b = Vector::from_iterator(
            self.d,
            (0..self.d).map(|_| rng.random_range(self.low..=self.high)),
        );
        if self.normalize {
            let norm = b.norm();
            if norm > 1.0 {
                b /= norm;
            }
        }
        b
    }
}

impl ContextSource for UniformContexts {
    fn dim(&self) -> usize {
        self.d
    }

    fn contexts(&self, task: usize, round: usize) -> Result<RoundContexts> {
        let task_key = if self.shared { 0 } else { task };
        let mut rng = self.tree.stream(self.run, task_key, round, Purpose::Contexts);
        let vectors = (0..self.k).map(|_| self.draw_vector(&mut rng)).collect();
        RoundContexts::new(vectors, round)
    }
}

/// A fixed cycle of rounds, identical in every task.
#[derive(Debug, Clone)]
pub struct FixedContexts {
    rounds: Vec<RoundContexts>,
}

impl FixedContexts {
    pub fn new(rounds: Vec<RoundContexts>) -> Self {
        assert!(!rounds.is_empty(), "fixed context cycle must be nonempty");
        Self { rounds }
    }

    /// Every arm in round `t` equals the standard basis vector `e_{(t-1) mod d}`.
    pub fn basis_cycle(d: usize, k: usize) -> Self {
        let rounds = (0..d)
            .map(|i| {
                let mut e = Vector::zeros(d);
                e[i] = 1.0;
                RoundContexts::new(vec![e; k], i + 1).expect("k >= 1")
            })
            .collect();
        Self::new(rounds)
    }
}

impl ContextSource for FixedContexts {
    fn dim(&self) -> usize {
        self.rounds[0].dim()
    }

    fn contexts(&self, _task: usize, round: usize) -> Result<RoundContexts> {
        let base = &self.rounds[(round.max(1) - 1) % self.rounds.len()];
        RoundContexts::new(base.vectors().to_vec(), round)
    }
}

/// Per-round randomness consumed by a Thompson-sampling task.
pub trait RoundNoise {
    /// Standard-normal reward noise; the reward is `bᵀμ + v·noise`.
    fn reward_noise(&mut self, task: usize, round: usize) -> f64;
    /// Standard-normal vector turned into the posterior sample μ̃(t).
    fn posterior_normals(&mut self, task: usize, round: usize, d: usize) -> Vector;
}

/// Substream-backed noise: identical draws for every agent of a run.
#[derive(Debug, Clone, Copy)]
pub struct SeededNoise {
    pub tree: SeedTree,
    pub run: usize,
}

impl RoundNoise for SeededNoise {
    fn reward_noise(&mut self, task: usize, round: usize) -> f64 {
        self.tree
            .stream(self.run, task, round, Purpose::RewardNoise)
            .sample(StandardNormal)
    }

    fn posterior_normals(&mut self, task: usize, round: usize, d: usize) -> Vector {
        let mut rng = self.tree.stream(self.run, task, round, Purpose::PosteriorSample);
        standard_normal_vector(d, &mut rng)
    }
}

/// Draws everything in call order from one generator.
#[derive(Debug, Clone)]
pub struct StreamNoise<R> {
    pub rng: R,
}

impl<R: Rng> RoundNoise for StreamNoise<R> {
    fn reward_noise(&mut self, _task: usize, _round: usize) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn posterior_normals(&mut self, _task: usize, _round: usize, d: usize) -> Vector {
        standard_normal_vector(d, &mut self.rng)
    }
}

/// FNV-1a over the bit patterns of a sequence of values.
pub fn hash_values<I: IntoIterator<Item = f64>>(values: I) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for x in values {
        for byte in x.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// [`hash_values`] over all context coordinates.
pub fn context_hash(vectors: &[Vector]) -> u64 {
    hash_values(vectors.iter().flat_map(|v| v.iter().copied()))
}
