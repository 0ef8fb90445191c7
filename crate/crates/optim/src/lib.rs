//! Box-bounded stochastic minimization engines.
//!
//! Three engines share one calling convention: constriction-factor particle
//! swarm (the workhorse), inertia-weight particle swarm, and a real-coded
//! genetic algorithm used as a comparison baseline. All engines are
//! deterministic for a fixed seed: randomness comes from a counter-based
//! stream cipher RNG drawn in a fixed sequential order, and only objective
//! evaluations run in parallel.

pub mod ga;
pub mod pso;
pub mod run;
pub mod space;

pub use ga::{ga_step, initialize_population, GaParams, GaState, Individual};
pub use pso::{
    constriction_factor, cfpso_step, initialize_swarm, iwpso_step, BoundaryPolicy, CfPsoParams,
    IwPsoParams, ParamError, Particle, RandScope, SwarmState,
};
pub use run::{run, EngineConfig, OptimError, OptimizationResult, IMPROVEMENT_EPSILON};
pub use space::{interval_is_searchable, SearchSpace, SpaceError};
