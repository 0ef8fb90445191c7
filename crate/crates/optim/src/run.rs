use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ga::{ga_step, initialize_population, GaParams};
use crate::pso::{cfpso_step, initialize_swarm, iwpso_step, CfPsoParams, IwPsoParams, ParamError};
use crate::space::SearchSpace;

/// Improvements smaller than this do not reset the stall counter.
pub const IMPROVEMENT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum EngineConfig {
    CfPso(CfPsoParams),
    IwPso(IwPsoParams),
    Ga(GaParams),
}

impl EngineConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EngineConfig::CfPso(_) => "cfpso",
            EngineConfig::IwPso(_) => "iwpso",
            EngineConfig::Ga(_) => "ga",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EngineConfig::CfPso(p) => p.rng_seed,
            EngineConfig::IwPso(p) => p.rng_seed,
            EngineConfig::Ga(p) => p.rng_seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            EngineConfig::CfPso(p) => p.rng_seed = seed,
            EngineConfig::IwPso(p) => p.rng_seed = seed,
            EngineConfig::Ga(p) => p.rng_seed = seed,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        match self {
            EngineConfig::CfPso(p) => p.validate(),
            EngineConfig::IwPso(p) => p.validate(),
            EngineConfig::Ga(p) => p.validate(),
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::CfPso(CfPsoParams::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Best value after each executed iteration; the initial evaluation is
    /// not included, so the length equals `iterations`.
    pub history: Vec<f64>,
    pub evaluations: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("invalid engine parameters: {0}")]
    Params(#[from] ParamError),
}

/// Minimize `objective` over `space` with the configured engine. The RNG is
/// seeded from the engine's `rng_seed`, so equal inputs give equal outputs.
/// Stops after the engine's iteration budget or once the stall window passes
/// without an improvement larger than [`IMPROVEMENT_EPSILON`].
pub fn run<F>(
    engine: &EngineConfig,
    space: &SearchSpace,
    objective: F,
) -> Result<OptimizationResult, OptimError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    engine.validate()?;
    let evaluations = AtomicU64::new(0);
    let counted = |x: &[f64]| {
        evaluations.fetch_add(1, Ordering::Relaxed);
        objective(x)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(engine.seed());

    let result = match engine {
        EngineConfig::CfPso(params) => {
            let mut state = initialize_swarm(space, params.swarm_size, &counted, &mut rng);
            let mut stall = StallTracker::new(params.stall_iterations, state.best_value);
            for _ in 0..params.max_iterations {
                cfpso_step(&mut state, space, params, &counted, &mut rng);
                if stall.exhausted(state.best_value) {
                    break;
                }
            }
            OptimizationResult {
                best_position: state.best_position,
                best_value: state.best_value,
                history: state.history,
                evaluations: 0,
                iterations: state.iteration,
            }
        }
        EngineConfig::IwPso(params) => {
            let mut state = initialize_swarm(space, params.swarm_size, &counted, &mut rng);
            let mut stall = StallTracker::new(params.stall_iterations, state.best_value);
            for _ in 0..params.max_iterations {
                iwpso_step(&mut state, space, params, &counted, &mut rng);
                if stall.exhausted(state.best_value) {
                    break;
                }
            }
            OptimizationResult {
                best_position: state.best_position,
                best_value: state.best_value,
                history: state.history,
                evaluations: 0,
                iterations: state.iteration,
            }
        }
        EngineConfig::Ga(params) => {
            let mut state =
                initialize_population(space, params.population_size, &counted, &mut rng);
            let mut stall = StallTracker::new(params.stall_generations, state.best_value);
            for _ in 0..params.max_generations {
                ga_step(&mut state, space, params, &counted, &mut rng);
                if stall.exhausted(state.best_value) {
                    break;
                }
            }
            OptimizationResult {
                best_position: state.best_genes,
                best_value: state.best_value,
                history: state.history,
                evaluations: 0,
                iterations: state.generation,
            }
        }
    };

    Ok(OptimizationResult {
        evaluations: evaluations.load(Ordering::Relaxed),
        ..result
    })
}

struct StallTracker {
    window: usize,
    reference: f64,
    stalled: usize,
}

impl StallTracker {
    fn new(window: usize, initial: f64) -> Self {
        StallTracker { window, reference: initial, stalled: 0 }
    }

    fn exhausted(&mut self, best: f64) -> bool {
        if self.reference - best > IMPROVEMENT_EPSILON {
            self.reference = best;
            self.stalled = 0;
        } else {
            self.stalled += 1;
        }
        self.window > 0 && self.stalled >= self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn pso_evaluation_count_is_exact() {
        let space = SearchSpace::uniform(2, -5.0, 5.0).unwrap();
        let params = CfPsoParams {
            swarm_size: 7,
            max_iterations: 13,
            stall_iterations: 0,
            ..CfPsoParams::default()
        };
        let result = run(&EngineConfig::CfPso(params), &space, sphere).unwrap();
        assert_eq!(result.iterations, 13);
        assert_eq!(result.evaluations, 7 * (1 + 13));
        assert_eq!(result.history.len(), 13);
    }

    #[test]
    fn ga_evaluation_count_is_exact() {
        // Elite carry-over skips one evaluation per generation.
        let space = SearchSpace::uniform(2, -5.0, 5.0).unwrap();
        let params = GaParams {
            population_size: 10,
            max_generations: 5,
            stall_generations: 0,
            ..GaParams::default()
        };
        let result = run(&EngineConfig::Ga(params), &space, sphere).unwrap();
        assert_eq!(result.iterations, 5);
        assert_eq!(result.evaluations, 10 + 5 * 9);
    }

    #[test]
    fn zero_iterations_returns_initial_best() {
        let space = SearchSpace::uniform(1, 2.0, 3.0).unwrap();
        let params = CfPsoParams {
            swarm_size: 5,
            max_iterations: 0,
            ..CfPsoParams::default()
        };
        let result = run(&EngineConfig::CfPso(params), &space, sphere).unwrap();
        assert_eq!(result.iterations, 0);
        assert!(result.history.is_empty());
        assert_eq!(result.evaluations, 5);
        assert!(result.best_value >= 4.0 && result.best_value <= 9.0);
    }

    #[test]
    fn stall_window_stops_early() {
        let space = SearchSpace::uniform(1, -1.0, 1.0).unwrap();
        // Flat objective: no improvement is ever possible.
        let flat = |_: &[f64]| 1.0;
        let params = CfPsoParams {
            swarm_size: 4,
            max_iterations: 500,
            stall_iterations: 6,
            ..CfPsoParams::default()
        };
        let result = run(&EngineConfig::CfPso(params), &space, flat).unwrap();
        assert_eq!(result.iterations, 6);
    }

    #[test]
    fn equal_seeds_reproduce_bitwise() {
        let space = SearchSpace::uniform(3, -5.0, 5.0).unwrap();
        for engine in [
            EngineConfig::CfPso(CfPsoParams { rng_seed: 42, ..CfPsoParams::default() }),
            EngineConfig::IwPso(IwPsoParams { rng_seed: 42, ..IwPsoParams::default() }),
            EngineConfig::Ga(GaParams { rng_seed: 42, ..GaParams::default() }),
        ] {
            let a = run(&engine, &space, sphere).unwrap();
            let b = run(&engine, &space, sphere).unwrap();
            assert_eq!(a, b, "engine {} not reproducible", engine.name());
        }
    }

    #[test]
    fn different_seeds_usually_differ() {
        let space = SearchSpace::uniform(3, -5.0, 5.0).unwrap();
        let a = CfPsoParams {
            rng_seed: 1,
            max_iterations: 3,
            stall_iterations: 0,
            ..Default::default()
        };
        let mut b = a.clone();
        b.rng_seed = 2;
        let ra = run(&EngineConfig::CfPso(a), &space, sphere).unwrap();
        let rb = run(&EngineConfig::CfPso(b), &space, sphere).unwrap();
        assert_ne!(ra.best_position, rb.best_position);
    }
}
