//! Particle swarm optimization (global-best topology, minimization).
//!
//! Each iteration, for every particle `i` and dimension `d`:
//!
//! ```text
//! v <- w v + c1 r1 (pbest - x) + c2 r2 (gbest - x)     clamped to +-v_max
//! x <- x + v                                           clamped to bounds
//! ```
//!
//! with `r1`, `r2` fresh uniform draws per particle, dimension and iteration.
//! Every particle owns a ChaCha stream derived from the master seed, and the
//! bookkeeping after each batch of fitness evaluations is sequential in
//! particle order, so results do not depend on how many workers evaluate
//! fitness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::InvalidParam;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsoError {
    #[error("fitness returned {value} at {position:?}")]
    NonFiniteFitness { position: Vec<f64>, value: f64 },
    #[error("invalid swarm configuration: {0}")]
    Invalid(#[from] InvalidParam),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Cost to minimize. Must be safe to call from several threads.
pub trait FitnessFunction: Sync {
    fn evaluate(&self, position: &[f64]) -> f64;
}

impl<F> FitnessFunction for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn evaluate(&self, position: &[f64]) -> f64 {
        self(position)
    }
}

/// Search-space independent swarm settings (the `pso` section of an experiment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoSettings {
    pub n_particles: usize,
    /// Inertia weight.
    pub w: f64,
    /// Cognitive (own best) coefficient.
    pub c1: f64,
    /// Social (swarm best) coefficient.
    pub c2: f64,
    /// `0` skips the search entirely.
    pub max_iters: usize,
    pub stall_iters: usize,
    /// Relative improvement of the global best over `stall_iters` below which
    /// the run stops.
    pub stall_tol: f64,
    pub seed: u64,
    /// Velocity clamp as a fraction of each dimension's range.
    pub v_max_fraction: f64,
}

impl Default for PsoSettings {
    fn default() -> Self {
        Self {
            n_particles: 30,
            w: 0.72,
            c1: 1.49,
            c2: 1.49,
            max_iters: 100,
            stall_iters: 25,
            stall_tol: 1e-8,
            seed: 1,
            v_max_fraction: 0.2,
        }
    }
}

impl PsoSettings {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        if self.n_particles < 1 {
            return Err(InvalidParam::new("n_particles", "violates n_particles >= 1"));
        }
        for (field, v) in [("w", self.w), ("c1", self.c1), ("c2", self.c2), ("stall_tol", self.stall_tol)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(InvalidParam::new(field, format!("violates {field} >= 0 (got {v})")));
            }
        }
        if !(self.v_max_fraction > 0.0) || !self.v_max_fraction.is_finite() {
            return Err(InvalidParam::new("v_max_fraction", "violates v_max_fraction > 0"));
        }
        if self.stall_iters < 1 {
            return Err(InvalidParam::new("stall_iters", "violates stall_iters >= 1"));
        }
        Ok(())
    }

    /// Full configuration for a box-bounded search space.
    pub fn with_bounds(&self, bounds: Vec<(f64, f64)>) -> PsoConfig {
        let v_max = bounds.iter().map(|(lo, hi)| self.v_max_fraction * (hi - lo)).collect();
        PsoConfig {
            n_particles: self.n_particles,
            w: self.w,
            c1: self.c1,
            c2: self.c2,
            max_iters: self.max_iters,
            stall_iters: self.stall_iters,
            stall_tol: self.stall_tol,
            seed: self.seed,
            bounds,
            v_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub n_particles: usize,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_iters: usize,
    pub stall_iters: usize,
    pub stall_tol: f64,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub v_max: Vec<f64>,
}

impl PsoConfig {
    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<(), InvalidParam> {
        if self.n_particles < 1 {
            return Err(InvalidParam::new("n_particles", "violates n_particles >= 1"));
        }
        if self.max_iters < 1 {
            return Err(InvalidParam::new("max_iters", "violates max_iters >= 1"));
        }
        for (field, v) in [("w", self.w), ("c1", self.c1), ("c2", self.c2), ("stall_tol", self.stall_tol)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(InvalidParam::new(field, format!("violates {field} >= 0 (got {v})")));
            }
        }
        if self.bounds.is_empty() {
            return Err(InvalidParam::new("bounds", "search space has no dimensions"));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(InvalidParam::new(format!("bounds[{i}]"), format!("violates lo < hi (got [{lo}, {hi}])")));
            }
        }
        if self.v_max.len() != self.bounds.len() || self.v_max.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(InvalidParam::new("v_max", "needs one positive entry per dimension"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pbest: Vec<f64>,
    pub pbest_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub gbest: Vec<f64>,
    pub gbest_fitness: f64,
    pub iteration: usize,
    /// Global best after each evaluation round, starting with the initial swarm.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Stalled,
    /// No search was run.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Non-increasing global best per round, `history[0]` is the initial swarm.
    pub history: Vec<f64>,
    /// Mean fitness of the positions evaluated in each round.
    pub mean_history: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

/// How to evaluate the fitness of a batch of positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workers {
    /// Sequential in the calling thread.
    #[default]
    Single,
    /// A dedicated pool with this many threads.
    Threads(usize),
}

/// Inertia + cognitive + social velocity update with explicit random draws, clamped to `v_max`.
pub fn update_velocity(p: &Particle, gbest: &[f64], config: &PsoConfig, r1: &[f64], r2: &[f64]) -> Vec<f64> {
    (0..p.position.len())
        .map(|d| {
            let x = p.position[d];
            let v =
                config.w * p.velocity[d] + config.c1 * r1[d] * (p.pbest[d] - x) + config.c2 * r2[d] * (gbest[d] - x);
            v.clamp(-config.v_max[d], config.v_max[d])
        })
        .collect()
}

/// Moves the particle by `velocity`; dimensions that leave the box are pinned
/// to the violated bound with their velocity zeroed. Returns `(position, velocity)`.
pub fn update_position(p: &Particle, velocity: &[f64], bounds: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::with_capacity(velocity.len());
    let mut vel = velocity.to_vec();
    for d in 0..velocity.len() {
        let (lo, hi) = bounds[d];
        let x = p.position[d] + velocity[d];
        if x > hi {
            pos.push(hi);
            vel[d] = 0.0;
        } else if x < lo {
            pos.push(lo);
            vel[d] = 0.0;
        } else {
            pos.push(x);
        }
    }
    (pos, vel)
}

fn evaluate_batch<F: FitnessFunction + ?Sized>(
    positions: &[&[f64]],
    fitness: &F,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<f64>, PsoError> {
    let values: Vec<f64> = match pool {
        Some(pool) => pool.install(|| positions.par_iter().map(|x| fitness.evaluate(x)).collect()),
        None => positions.iter().map(|x| fitness.evaluate(x)).collect(),
    };
    for (x, &v) in positions.iter().zip(&values) {
        if !v.is_finite() {
            return Err(PsoError::NonFiniteFitness { position: x.to_vec(), value: v });
        }
    }
    Ok(values)
}

/// Applies freshly evaluated fitness values: a particle's best is replaced only
/// on strict improvement, and the global best moves to the lowest-index
/// particle holding the smallest personal best when that is strictly better.
pub fn absorb_fitness(swarm: &mut Swarm, values: &[f64]) {
    for (p, &f) in swarm.particles.iter_mut().zip(values) {
        if f < p.pbest_fitness {
            p.pbest_fitness = f;
            p.pbest.clone_from(&p.position);
        }
    }
    let mut best: Option<usize> = None;
    for (i, p) in swarm.particles.iter().enumerate() {
        if best.is_none_or(|b| p.pbest_fitness < swarm.particles[b].pbest_fitness) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        if swarm.particles[b].pbest_fitness < swarm.gbest_fitness {
            swarm.gbest_fitness = swarm.particles[b].pbest_fitness;
            swarm.gbest.clone_from(&swarm.particles[b].pbest);
        }
    }
}

/// Evaluates every particle at its current position and refreshes the bests.
pub fn evaluate_swarm<F: FitnessFunction + ?Sized>(swarm: &mut Swarm, fitness: &F) -> Result<Vec<f64>, PsoError> {
    let positions: Vec<&[f64]> = swarm.particles.iter().map(|p| p.position.as_slice()).collect();
    let values = evaluate_batch(&positions, fitness, None)?;
    absorb_fitness(swarm, &values);
    Ok(values)
}

fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs the swarm until `max_iters` update rounds or the stall criterion.
///
/// `initial` positions, if any, replace the random starting positions of the
/// first particles (they are clamped into the box).
pub fn optimize<F: FitnessFunction + ?Sized>(
    fitness: &F,
    config: &PsoConfig,
    initial: &[Vec<f64>],
    workers: Workers,
) -> Result<PsoResult, PsoError> {
    config.validate()?;
    let dims = config.dims();
    let pool = match workers {
        Workers::Single => None,
        Workers::Threads(n) => Some(
            rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| PsoError::Pool(e.to_string()))?,
        ),
    };

    let mut rngs: Vec<ChaCha8Rng> = (0..config.n_particles).map(|i| particle_rng(config.seed, i)).collect();
    let particles: Vec<Particle> = rngs
        .iter_mut()
        .enumerate()
        .map(|(i, rng)| {
            let mut position: Vec<f64> = config.bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
            let velocity: Vec<f64> = config.v_max.iter().map(|&vm| rng.gen_range(-vm..=vm)).collect();
            if let Some(seed_pos) = initial.get(i) {
                for (d, x) in position.iter_mut().enumerate() {
                    let (lo, hi) = config.bounds[d];
                    *x = seed_pos.get(d).copied().unwrap_or(*x).clamp(lo, hi);
                }
            }
            Particle { pbest: position.clone(), position, velocity, pbest_fitness: f64::INFINITY }
        })
        .collect();
    let mut swarm =
        Swarm { particles, gbest: vec![0.0; dims], gbest_fitness: f64::INFINITY, iteration: 0, history: Vec::new() };

    let mut mean_history = Vec::new();
    let mut run_round = |swarm: &mut Swarm| -> Result<(), PsoError> {
        let positions: Vec<&[f64]> = swarm.particles.iter().map(|p| p.position.as_slice()).collect();
        let values = evaluate_batch(&positions, fitness, pool.as_ref())?;
        absorb_fitness(swarm, &values);
        swarm.history.push(swarm.gbest_fitness);
        mean_history.push(values.iter().sum::<f64>() / values.len() as f64);
        Ok(())
    };
    run_round(&mut swarm)?;

    let mut stop_reason = StopReason::MaxIters;
    let mut r1 = vec![0.0; dims];
    let mut r2 = vec![0.0; dims];
    while swarm.iteration < config.max_iters {
        let gbest = swarm.gbest.clone();
        for (p, rng) in swarm.particles.iter_mut().zip(rngs.iter_mut()) {
            for d in 0..dims {
                r1[d] = rng.gen::<f64>();
                r2[d] = rng.gen::<f64>();
            }
            let v = update_velocity(p, &gbest, config, &r1, &r2);
            let (x, v) = update_position(p, &v, &config.bounds);
            p.position = x;
            p.velocity = v;
        }
        run_round(&mut swarm)?;
        swarm.iteration += 1;

        let k = swarm.history.len() - 1;
        if k >= config.stall_iters {
            let old = swarm.history[k - config.stall_iters];
            let new = swarm.history[k];
            if old - new <= config.stall_tol * old.abs() {
                stop_reason = StopReason::Stalled;
                break;
            }
        }
    }

    Ok(PsoResult {
        best_position: swarm.gbest,
        best_fitness: swarm.gbest_fitness,
        history: swarm.history,
        mean_history,
        iterations: swarm.iteration,
        stop_reason,
    })
}

/// Standard test landscapes.
pub mod benchmarks {
    pub fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    pub fn rosenbrock(x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }
}
