use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::space::SearchSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub particles: Vec<Particle>,
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Completed step count; the initial evaluation is step zero.
    pub iteration: usize,
    /// Global best after each completed step, length == `iteration`.
    pub history: Vec<f64>,
}

/// What to do with a particle that leaves the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Clamp to the violated bound and zero that velocity component.
    #[default]
    Absorbing,
    /// Mirror the overshoot back inside and flip that velocity component.
    Reflecting,
}

/// How many random factors each velocity update draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RandScope {
    /// Fresh r1, r2 per dimension.
    #[default]
    PerDimension,
    /// One scalar r1, r2 shared by all dimensions of a particle.
    PerParticle,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} must be positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must lie in [0, 1] (got {value})")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("swarm or population size must be at least {min} (got {got})")]
    TooFewMembers { min: usize, got: usize },
    #[error("acceleration sum c1 + c2 must exceed 4 for constriction (got {phi})")]
    PhiTooSmall { phi: f64 },
    #[error("tournament size must be between 1 and the population size (got {got})")]
    BadTournament { got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfPsoParams {
    pub c1: f64,
    pub c2: f64,
    pub swarm_size: usize,
    pub max_iterations: usize,
    /// Steps without meaningful improvement before stopping early; 0 disables.
    pub stall_iterations: usize,
    pub rng_seed: u64,
    pub boundary: BoundaryPolicy,
    pub rand_scope: RandScope,
}

impl Default for CfPsoParams {
    fn default() -> Self {
        CfPsoParams {
            c1: 2.05,
            c2: 2.05,
            swarm_size: 30,
            max_iterations: 100,
            stall_iterations: 20,
            rng_seed: 0,
            boundary: BoundaryPolicy::default(),
            rand_scope: RandScope::default(),
        }
    }
}

impl CfPsoParams {
    pub fn phi(&self) -> f64 {
        self.c1 + self.c2
    }

    pub fn constriction_factor(&self) -> f64 {
        constriction_factor(self.c1, self.c2)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check_positive("c1", self.c1)?;
        check_positive("c2", self.c2)?;
        if self.swarm_size < 1 {
            return Err(ParamError::TooFewMembers { min: 1, got: self.swarm_size });
        }
        let phi = self.phi();
        if phi.is_nan() || phi <= 4.0 {
            return Err(ParamError::PhiTooSmall { phi });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IwPsoParams {
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub swarm_size: usize,
    pub max_iterations: usize,
    pub stall_iterations: usize,
    pub rng_seed: u64,
    pub boundary: BoundaryPolicy,
    pub rand_scope: RandScope,
}

impl Default for IwPsoParams {
    fn default() -> Self {
        IwPsoParams {
            inertia: 0.7,
            c1: 2.0,
            c2: 2.0,
            swarm_size: 30,
            max_iterations: 100,
            stall_iterations: 20,
            rng_seed: 0,
            boundary: BoundaryPolicy::default(),
            rand_scope: RandScope::default(),
        }
    }
}

impl IwPsoParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check_positive("inertia", self.inertia)?;
        check_positive("c1", self.c1)?;
        check_positive("c2", self.c2)?;
        if self.swarm_size < 1 {
            return Err(ParamError::TooFewMembers { min: 1, got: self.swarm_size });
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), ParamError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ParamError::NonPositive { name, value })
    }
}

/// Clerc-Kennedy constriction factor k = 2 / |2 - phi - sqrt(phi^2 - 4 phi)|.
/// Only meaningful for phi = c1 + c2 > 4.
pub fn constriction_factor(c1: f64, c2: f64) -> f64 {
    let phi = c1 + c2;
    2.0 / (2.0 - phi - (phi * phi - 4.0 * phi).sqrt()).abs()
}

/// Objective values that cannot be compared poison the search, so any
/// non-finite evaluation becomes the worst possible value.
fn sanitize(value: f64) -> f64 {
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

/// Random start: positions uniform in the box, velocities uniform in
/// one tenth of the box width on each side of zero. All positions are
/// evaluated once so personal and global bests start populated.
pub fn initialize_swarm<R, F>(
    space: &SearchSpace,
    swarm_size: usize,
    objective: &F,
    rng: &mut R,
) -> SwarmState
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = space.dimension();
    let mut particles = Vec::with_capacity(swarm_size);
    for _ in 0..swarm_size {
        let position = space.sample(rng);
        let velocity: Vec<f64> = (0..dim)
            .map(|d| {
                let w = space.width(d);
                rng.random_range(-w..=w) * 0.1
            })
            .collect();
        particles.push(Particle {
            best_position: position.clone(),
            position,
            velocity,
            best_value: f64::INFINITY,
        });
    }

    let values: Vec<f64> = particles
        .par_iter()
        .map(|p| sanitize(objective(&p.position)))
        .collect();

    let mut best_index = 0;
    for (p, &v) in particles.iter_mut().zip(&values) {
        p.best_value = v;
    }
    for (i, &v) in values.iter().enumerate() {
        if v < values[best_index] {
            best_index = i;
        }
    }

    SwarmState {
        best_position: particles[best_index].best_position.clone(),
        best_value: particles[best_index].best_value,
        particles,
        iteration: 0,
        history: Vec::new(),
    }
}

/// One synchronous constriction-factor step:
/// v <- k (v + c1 r1 (p_i - x) + c2 r2 (p_g - x)), x <- x + v.
pub fn cfpso_step<R, F>(
    state: &mut SwarmState,
    space: &SearchSpace,
    params: &CfPsoParams,
    objective: &F,
    rng: &mut R,
) where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let k = params.constriction_factor();
    let kinematics = |v, cognitive, social| k * (v + cognitive + social);
    swarm_step(
        state,
        space,
        params.c1,
        params.c2,
        params.boundary,
        params.rand_scope,
        kinematics,
        objective,
        rng,
    );
}

/// One synchronous inertia-weight step:
/// v <- w v + c1 r1 (p_i - x) + c2 r2 (p_g - x), x <- x + v.
pub fn iwpso_step<R, F>(
    state: &mut SwarmState,
    space: &SearchSpace,
    params: &IwPsoParams,
    objective: &F,
    rng: &mut R,
) where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let w = params.inertia;
    let kinematics = move |v, cognitive, social| w * v + cognitive + social;
    swarm_step(
        state,
        space,
        params.c1,
        params.c2,
        params.boundary,
        params.rand_scope,
        kinematics,
        objective,
        rng,
    );
}

/// Shared step pipeline. Randoms and kinematics run sequentially against the
/// step-entry global best, evaluations run in parallel, then bests update in
/// particle index order; the result is independent of thread scheduling.
#[allow(clippy::too_many_arguments)]
fn swarm_step<R, F, K>(
    state: &mut SwarmState,
    space: &SearchSpace,
    c1: f64,
    c2: f64,
    boundary: BoundaryPolicy,
    rand_scope: RandScope,
    kinematics: K,
    objective: &F,
    rng: &mut R,
) where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
    K: Fn(f64, f64, f64) -> f64,
{
    let dim = space.dimension();
    let global_best = state.best_position.clone();

    for particle in &mut state.particles {
        let (r1, r2): (Vec<f64>, Vec<f64>) = match rand_scope {
            RandScope::PerDimension => (
                (0..dim).map(|_| rng.random::<f64>()).collect(),
                (0..dim).map(|_| rng.random::<f64>()).collect(),
            ),
            RandScope::PerParticle => {
                let a = rng.random::<f64>();
                let b = rng.random::<f64>();
                (vec![a; dim], vec![b; dim])
            }
        };
        for d in 0..dim {
            let cognitive = c1 * r1[d] * (particle.best_position[d] - particle.position[d]);
            let social = c2 * r2[d] * (global_best[d] - particle.position[d]);
            particle.velocity[d] = kinematics(particle.velocity[d], cognitive, social);
            particle.position[d] += particle.velocity[d];
        }
        apply_boundary(particle, space, boundary);
    }

    let values: Vec<f64> = state
        .particles
        .par_iter()
        .map(|p| sanitize(objective(&p.position)))
        .collect();

    for (particle, &value) in state.particles.iter_mut().zip(&values) {
        if value < particle.best_value {
            particle.best_value = value;
            particle.best_position.clone_from(&particle.position);
            if value < state.best_value {
                state.best_value = value;
                state.best_position.clone_from(&particle.position);
            }
        }
    }

    state.iteration += 1;
    state.history.push(state.best_value);
}

fn apply_boundary(particle: &mut Particle, space: &SearchSpace, policy: BoundaryPolicy) {
    for d in 0..space.dimension() {
        let lo = space.lower()[d];
        let up = space.upper()[d];
        let x = particle.position[d];
        if x >= lo && x <= up {
            continue;
        }
        match policy {
            BoundaryPolicy::Absorbing => {
                particle.position[d] = x.clamp(lo, up);
                particle.velocity[d] = 0.0;
            }
            BoundaryPolicy::Reflecting => {
                let mirrored = if x < lo { lo + (lo - x) } else { up - (x - up) };
                particle.velocity[d] = -particle.velocity[d];
                if mirrored >= lo && mirrored <= up {
                    particle.position[d] = mirrored;
                } else {
                    // Overshoot past the far wall; fall back to clamping.
                    particle.position[d] = x.clamp(lo, up);
                    particle.velocity[d] = 0.0;
                }
            }
        }
    }
}
