//! Particle swarm search over antenna positions with the beamformers held
//! fixed. Constraints enter the fitness as fixed penalties.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::channel::{AntennaPlacement, ChannelModel, ChannelSet};
use crate::control::control_qos_satisfied;
use crate::metrics::{self, BeamVectors};
use crate::scenario::PsoParams;

/// Fitness of one candidate placement, with the terms that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub value: f64,
    pub sum_rate: f64,
    pub sensing_violated: bool,
    pub control_violated: bool,
    /// Antenna pairs closer than `d_min`.
    pub spacing_pairs: usize,
}

impl Fitness {
    pub fn feasible(&self) -> bool {
        !self.sensing_violated && !self.control_violated && self.spacing_pairs == 0
    }

    /// Fitness of a placement with no penalty terms.
    pub fn unpenalized(sum_rate: f64) -> Self {
        Self { value: sum_rate, sum_rate, sensing_violated: false, control_violated: false, spacing_pairs: 0 }
    }
}

/// Anything that scores a placement. Must be pure: the swarm evaluates
/// particles in parallel.
pub trait PlacementObjective: Sync {
    fn evaluate(&self, placement: &AntennaPlacement) -> Fitness;
}

/// Constants of the penalized fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessContext {
    pub noise_watts: f64,
    pub sense_thresh_watts: f64,
    pub r_min: Vec<f64>,
    pub min_spacing: f64,
    pub penalty_sensing: f64,
    pub penalty_control: f64,
    pub penalty_spacing: f64,
}

/// `sum_n R_n - mu1 [sensing violated] - mu2 [control violated] - mu3 * pairs`.
pub fn fitness(placement: &AntennaPlacement, channels: &ChannelSet, beams: &BeamVectors, ctx: &FitnessContext) -> Fitness {
    let sum_rate = metrics::sum_rate(channels, beams, ctx.noise_watts);
    let sensing_violated = !metrics::sensing_feasible(channels, beams, ctx.sense_thresh_watts);
    let control_violated = metrics::cav_rates(channels, beams, ctx.noise_watts)
        .iter()
        .zip(&ctx.r_min)
        .any(|(&r, &m)| !control_qos_satisfied(r, m));
    let spacing_pairs = placement.violating_pairs(ctx.min_spacing);
    let value = sum_rate
        - ctx.penalty_sensing * f64::from(u8::from(sensing_violated))
        - ctx.penalty_control * f64::from(u8::from(control_violated))
        - ctx.penalty_spacing * spacing_pairs as f64;
    Fitness { value, sum_rate, sensing_violated, control_violated, spacing_pairs }
}

/// Rebuilds channels for each candidate and scores it against fixed beams.
pub struct BeamFitness<'a> {
    pub model: &'a ChannelModel,
    pub beams: &'a BeamVectors,
    pub ctx: &'a FitnessContext,
}

impl PlacementObjective for BeamFitness<'_> {
    fn evaluate(&self, placement: &AntennaPlacement) -> Fitness {
        fitness(placement, &self.model.build(placement), self.beams, self.ctx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Flat `[x1, y1, x2, y2, ...]`, meters.
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best: Fitness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub gbest_position: Vec<f64>,
    pub gbest: Fitness,
    pub iteration: usize,
    /// Side of the movement region, meters.
    pub side: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoTraceRow {
    pub iteration: usize,
    pub gbest_fitness: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub placement: AntennaPlacement,
    pub fitness: Fitness,
    pub trace: Vec<PsoTraceRow>,
    /// The swarm found no feasible placement and the warm start was kept.
    pub fell_back: bool,
}

/// Learning-factor draws for one particle: one value (applied to every
/// coordinate) or one per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningDraws {
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
}

impl LearningDraws {
    pub fn scalar(tau1: f64, tau2: f64) -> Self {
        Self { tau1: vec![tau1], tau2: vec![tau2] }
    }

    fn draw(rng: &mut ChaCha20Rng, dim: usize, per_coordinate: bool) -> Self {
        let k = if per_coordinate { dim } else { 1 };
        let tau1 = (0..k).map(|_| rng.random::<f64>()).collect();
        let tau2 = (0..k).map(|_| rng.random::<f64>()).collect();
        Self { tau1, tau2 }
    }

    fn at(v: &[f64], i: usize) -> f64 {
        if v.len() == 1 { v[0] } else { v[i] }
    }
}

/// Linearly decreasing inertia weight.
pub fn inertia(i: usize, params: &PsoParams) -> f64 {
    if params.max_iters == 0 {
        return params.inertia_max;
    }
    let frac = (i.min(params.max_iters)) as f64 / params.max_iters as f64;
    params.inertia_max - (params.inertia_max - params.inertia_min) * frac
}

/// `omega v + c1 tau1 (pbest - r) + c2 tau2 (gbest - r)`, clamped to `[-side, side]`.
#[allow(clippy::too_many_arguments)]
pub fn update_velocity(
    velocity: &[f64],
    position: &[f64],
    pbest: &[f64],
    gbest: &[f64],
    omega: f64,
    params: &PsoParams,
    draws: &LearningDraws,
    side: f64,
) -> Vec<f64> {
    (0..velocity.len())
        .map(|i| {
            let v = omega * velocity[i]
                + params.cognitive * LearningDraws::at(&draws.tau1, i) * (pbest[i] - position[i])
                + params.social * LearningDraws::at(&draws.tau2, i) * (gbest[i] - position[i]);
            v.clamp(-side, side)
        })
        .collect()
}

/// `clamp(r + step_scale * v, 0, side)` componentwise.
pub fn update_position(position: &[f64], velocity: &[f64], step_scale: f64, side: f64) -> Vec<f64> {
    position.iter().zip(velocity).map(|(r, v)| (r + step_scale * v).clamp(0.0, side)).collect()
}

fn evaluate_all<O: PlacementObjective + ?Sized>(objective: &O, positions: &[Vec<f64>]) -> Vec<Fitness> {
    positions.par_iter().map(|p| objective.evaluate(&AntennaPlacement::from_flat(p))).collect()
}

/// Initial swarm: particle 0 is the seed placement when given, the rest are
/// uniform in the region; velocities start at zero.
pub fn init_swarm<O: PlacementObjective + ?Sized>(
    params: &PsoParams,
    num_antennas: usize,
    side: f64,
    rng: &mut ChaCha20Rng,
    seed_placement: Option<&AntennaPlacement>,
    objective: &O,
) -> SwarmState {
    let dim = 2 * num_antennas;
    let count = params.swarm_size.max(1);
    let positions: Vec<Vec<f64>> = (0..count)
        .map(|p| match seed_placement {
            Some(s) if p == 0 => s.to_flat().iter().map(|x| x.clamp(0.0, side)).collect(),
            _ => (0..dim).map(|_| rng.random_range(0.0..=side)).collect(),
        })
        .collect();
    let scores = evaluate_all(objective, &positions);
    let particles: Vec<Particle> = positions
        .into_iter()
        .zip(scores)
        .map(|(position, best)| Particle { velocity: vec![0.0; dim], best_position: position.clone(), position, best })
        .collect();
    let mut g = 0;
    for (p, particle) in particles.iter().enumerate() {
        if particle.best.value > particles[g].best.value {
            g = p;
        }
    }
    SwarmState { gbest_position: particles[g].best_position.clone(), gbest: particles[g].best, particles, iteration: 0, side }
}

/// One synchronous swarm iteration. Random draws happen in particle order,
/// fitness runs in parallel, best updates run in particle order.
pub fn step<O: PlacementObjective + ?Sized>(state: &mut SwarmState, params: &PsoParams, rng: &mut ChaCha20Rng, objective: &O) {
    let omega = inertia(state.iteration, params);
    let side = state.side;
    for particle in &mut state.particles {
        let draws = LearningDraws::draw(rng, particle.position.len(), params.per_coordinate_draws);
        particle.velocity =
            update_velocity(&particle.velocity, &particle.position, &particle.best_position, &state.gbest_position, omega, params, &draws, side);
        particle.position = update_position(&particle.position, &particle.velocity, params.step_scale, side);
    }
    let positions: Vec<Vec<f64>> = state.particles.iter().map(|p| p.position.clone()).collect();
    let scores = evaluate_all(objective, &positions);
    for (particle, score) in state.particles.iter_mut().zip(scores) {
        if score.value > particle.best.value {
            particle.best = score;
            particle.best_position = particle.position.clone();
        }
        if score.value > state.gbest.value {
            state.gbest = score;
            state.gbest_position = particle.position.clone();
        }
    }
    state.iteration += 1;
}

/// Runs the swarm for `max_iters` iterations from a warm start.
///
/// When the best placement found still violates a penalized constraint the
/// warm start is returned instead (`fell_back`), so feasibility never gets
/// worse across outer iterations.
pub fn optimize_positions<O: PlacementObjective + ?Sized>(
    params: &PsoParams,
    side: f64,
    objective: &O,
    rng: &mut ChaCha20Rng,
    warm_start: &AntennaPlacement,
) -> PsoOutcome {
    let mut state = init_swarm(params, warm_start.len(), side, rng, Some(warm_start), objective);
    let mut trace = vec![PsoTraceRow { iteration: 0, gbest_fitness: state.gbest.value, feasible: state.gbest.feasible() }];
    for _ in 0..params.max_iters {
        step(&mut state, params, rng, objective);
        trace.push(PsoTraceRow { iteration: state.iteration, gbest_fitness: state.gbest.value, feasible: state.gbest.feasible() });
    }
    if state.gbest.feasible() {
        PsoOutcome { placement: AntennaPlacement::from_flat(&state.gbest_position), fitness: state.gbest, trace, fell_back: false }
    } else {
        PsoOutcome { placement: warm_start.clone(), fitness: objective.evaluate(warm_start), trace, fell_back: true }
    }
}
