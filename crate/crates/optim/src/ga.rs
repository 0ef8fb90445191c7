use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::pso::ParamError;
use crate::space::SearchSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct GaParams {
    pub population_size: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Gaussian mutation sigma as a fraction of each dimension's width.
    pub mutation_sigma: f64,
    pub max_generations: usize,
    /// Generations without meaningful improvement before stopping; 0 disables.
    pub stall_generations: usize,
    pub rng_seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population_size: 30,
            tournament_size: 3,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_sigma: 0.1,
            max_generations: 100,
            stall_generations: 20,
            rng_seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.population_size < 2 {
            return Err(ParamError::TooFewMembers { min: 2, got: self.population_size });
        }
        if self.tournament_size < 1 || self.tournament_size > self.population_size {
            return Err(ParamError::BadTournament { got: self.tournament_size });
        }
        check_unit("crossover_rate", self.crossover_rate)?;
        check_unit("mutation_rate", self.mutation_rate)?;
        if !(self.mutation_sigma.is_finite() && self.mutation_sigma > 0.0) {
            return Err(ParamError::NonPositive {
                name: "mutation_sigma",
                value: self.mutation_sigma,
            });
        }
        Ok(())
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ParamError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ParamError::OutOfUnitRange { name, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaState {
    pub individuals: Vec<Individual>,
    pub best_genes: Vec<f64>,
    pub best_value: f64,
    pub generation: usize,
    /// Best value after each completed generation, length == `generation`.
    pub history: Vec<f64>,
}

fn sanitize(value: f64) -> f64 {
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

pub fn initialize_population<R, F>(
    space: &SearchSpace,
    population_size: usize,
    objective: &F,
    rng: &mut R,
) -> GaState
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let genomes: Vec<Vec<f64>> = (0..population_size).map(|_| space.sample(rng)).collect();
    let values: Vec<f64> = genomes
        .par_iter()
        .map(|g| sanitize(objective(g)))
        .collect();
    let individuals: Vec<Individual> = genomes
        .into_iter()
        .zip(values)
        .map(|(genes, value)| Individual { genes, value })
        .collect();
    let best = argmin(&individuals);
    GaState {
        best_genes: individuals[best].genes.clone(),
        best_value: individuals[best].value,
        individuals,
        generation: 0,
        history: Vec::new(),
    }
}

/// One generation: tournament selection, blend crossover, Gaussian mutation,
/// bounds clamping, with the single best individual carried over unchanged.
/// All randomness is drawn sequentially before the parallel evaluations, so
/// results do not depend on thread scheduling.
pub fn ga_step<R, F>(
    state: &mut GaState,
    space: &SearchSpace,
    params: &GaParams,
    objective: &F,
    rng: &mut R,
) where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    let elite = argmin(&state.individuals);
    let elite_value = state.individuals[elite].value;

    let mut offspring: Vec<Vec<f64>> = Vec::with_capacity(params.population_size);
    offspring.push(state.individuals[elite].genes.clone());
    while offspring.len() < params.population_size {
        let a = tournament(&state.individuals, params.tournament_size, rng);
        let b = tournament(&state.individuals, params.tournament_size, rng);
        let mut child = if rng.random::<f64>() < params.crossover_rate {
            blend_crossover(&state.individuals[a].genes, &state.individuals[b].genes, rng)
        } else {
            state.individuals[a].genes.clone()
        };
        for (d, gene) in child.iter_mut().enumerate() {
            if rng.random::<f64>() < params.mutation_rate {
                let sigma = params.mutation_sigma * space.width(d);
                let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
                *gene += normal.sample(rng);
            }
        }
        space.clamp(&mut child);
        offspring.push(child);
    }

    // The elite's value is already known; only the fresh genomes get evaluated.
    let values: Vec<f64> = offspring[1..]
        .par_iter()
        .map(|g| sanitize(objective(g)))
        .collect();

    state.individuals.clear();
    state.individuals.push(Individual {
        genes: offspring[0].clone(),
        value: elite_value,
    });
    for (genes, value) in offspring.into_iter().skip(1).zip(values) {
        state.individuals.push(Individual { genes, value });
    }

    let best = argmin(&state.individuals);
    if state.individuals[best].value < state.best_value {
        state.best_value = state.individuals[best].value;
        state.best_genes.clone_from(&state.individuals[best].genes);
    }
    state.generation += 1;
    state.history.push(state.best_value);
}

fn argmin(individuals: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in individuals.iter().enumerate() {
        if ind.value < individuals[best].value {
            best = i;
        }
    }
    best
}

/// Uniform draws with replacement; the fittest drawn index wins, first drawn
/// on ties.
fn tournament<R: Rng + ?Sized>(
    individuals: &[Individual],
    size: usize,
    rng: &mut R,
) -> usize {
    let mut winner = rng.random_range(0..individuals.len());
    for _ in 1..size {
        let challenger = rng.random_range(0..individuals.len());
        if individuals[challenger].value < individuals[winner].value {
            winner = challenger;
        }
    }
    winner
}

/// BLX-0.5: each gene is sampled uniformly from the parents' interval
/// stretched by half its length on both sides.
fn blend_crossover<R: Rng + ?Sized>(a: &[f64], b: &[f64], rng: &mut R) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let lo = x.min(y);
            let hi = x.max(y);
            let spread = hi - lo;
            if spread > 0.0 {
                rng.random_range(lo - 0.5 * spread..=hi + 0.5 * spread)
            } else {
                x
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn population_initializes_with_bests() {
        let space = SearchSpace::uniform(2, -3.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = initialize_population(&space, 10, &sphere, &mut rng);
        assert_eq!(state.individuals.len(), 10);
        for ind in &state.individuals {
            assert!(space.contains(&ind.genes));
            assert!(ind.value >= state.best_value);
        }
    }

    #[test]
    fn elite_survives_and_best_never_worsens() {
        let space = SearchSpace::uniform(3, -4.0, 4.0).unwrap();
        let params = GaParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut state = initialize_population(&space, params.population_size, &sphere, &mut rng);
        let mut last = state.best_value;
        for _ in 0..40 {
            ga_step(&mut state, &space, &params, &sphere, &mut rng);
            let current_pop_best = state
                .individuals
                .iter()
                .map(|i| i.value)
                .fold(f64::INFINITY, f64::min);
            assert!(current_pop_best <= last + 1e-15, "elite lost");
            assert!(state.best_value <= last + 1e-15);
            last = state.best_value;
            for ind in &state.individuals {
                assert!(space.contains(&ind.genes));
            }
        }
        assert_eq!(state.generation, 40);
        assert_eq!(state.history.len(), 40);
    }

    #[test]
    fn zero_rates_reduce_to_selection_of_existing_genomes() {
        let space = SearchSpace::uniform(2, 0.0, 1.0).unwrap();
        let params =
            GaParams { crossover_rate: 0.0, mutation_rate: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = initialize_population(&space, 8, &sphere, &mut rng);
        let originals: Vec<Vec<f64>> =
            state.individuals.iter().map(|i| i.genes.clone()).collect();
        ga_step(&mut state, &space, &params, &sphere, &mut rng);
        for ind in &state.individuals {
            assert!(
                originals.contains(&ind.genes),
                "genome {:?} was not in the parent population",
                ind.genes
            );
        }
    }

    #[test]
    fn params_validation_rejects_bad_rates() {
        let p = GaParams { mutation_rate: 1.5, ..Default::default() };
        assert!(matches!(p.validate(), Err(ParamError::OutOfUnitRange { .. })));
        let q = GaParams { tournament_size: 99, ..Default::default() };
        assert!(matches!(q.validate(), Err(ParamError::BadTournament { .. })));
        assert!(GaParams::default().validate().is_ok());
    }
}
