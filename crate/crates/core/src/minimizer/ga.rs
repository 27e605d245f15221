//! Generational GA over fixed-size subsets.
//!
//! Operators keep every chromosome at exactly `n` distinct indices:
//! crossover keeps the parents' intersection and refills from their
//! symmetric difference, and mutation swaps a selected index for an
//! unselected one.

use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fitness, Chromosome, GaParams, MinimizerError, SearchOutcome};
use crate::similarity::CondensedSimilarityMatrix;

/// A chromosome with its cached fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub chromosome: Chromosome,
    pub fitness: f64,
}

impl Scored {
    pub fn new(chromosome: Chromosome, m: &CondensedSimilarityMatrix) -> Self {
        let fitness = fitness(&chromosome, m);
        Self {
            chromosome,
            fitness,
        }
    }
}

/// Lower fitness first; ties broken by the lexicographically smaller chromosome.
pub fn rank(a: &Scored, b: &Scored) -> Ordering {
    a.fitness
        .total_cmp(&b.fitness)
        .then_with(|| a.chromosome.cmp(&b.chromosome))
}

pub fn random_subset<R: Rng + ?Sized>(rng: &mut R, total: usize, n: usize) -> Chromosome {
    let mut v = sample(rng, total, n).into_vec();
    v.sort_unstable();
    Chromosome::from_sorted_unchecked(v)
}

pub fn initialize<R: Rng + ?Sized>(
    rng: &mut R,
    total: usize,
    n: usize,
    size: usize,
) -> Vec<Chromosome> {
    (0..size).map(|_| random_subset(rng, total, n)).collect()
}

/// Draws `k` individuals with replacement and returns the best of them.
pub fn tournament<'a, R: Rng + ?Sized>(
    rng: &mut R,
    population: &'a [Scored],
    k: usize,
) -> &'a Scored {
    let mut best = &population[rng.random_range(0..population.len())];
    for _ in 1..k {
        let cand = &population[rng.random_range(0..population.len())];
        if rank(cand, best) == Ordering::Less {
            best = cand;
        }
    }
    best
}

/// Child keeps every index both parents share, then fills the remaining
/// slots uniformly from the indices exactly one parent has.
pub fn crossover<R: Rng + ?Sized>(rng: &mut R, a: &Chromosome, b: &Chromosome) -> Chromosome {
    debug_assert_eq!(a.len(), b.len());
    let (x, y) = (a.indices(), b.indices());
    let mut common = Vec::with_capacity(x.len());
    let mut differ = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < x.len() || j < y.len() {
        match (x.get(i), y.get(j)) {
            (Some(p), Some(q)) if p == q => {
                common.push(*p);
                i += 1;
                j += 1;
            }
            (Some(p), Some(q)) if p < q => {
                differ.push(*p);
                i += 1;
            }
            (Some(_), Some(q)) => {
                differ.push(*q);
                j += 1;
            }
            (Some(p), None) => {
                differ.push(*p);
                i += 1;
            }
            (None, Some(q)) => {
                differ.push(*q);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    let need = x.len() - common.len();
    for k in sample(rng, differ.len(), need) {
        common.push(differ[k]);
    }
    common.sort_unstable();
    Chromosome::from_sorted_unchecked(common)
}

/// Each gene independently, with probability `rate`, is swapped for a
/// uniformly drawn index outside the current selection.
pub fn mutate<R: Rng + ?Sized>(rng: &mut R, c: &Chromosome, total: usize, rate: f64) -> Chromosome {
    let n = c.len();
    if n == total || rate <= 0.0 {
        return c.clone();
    }
    let mut genes = c.indices().to_vec();
    let mut selected = vec![false; total];
    for &g in &genes {
        selected[g] = true;
    }
    let mut unselected: Vec<usize> = (0..total).filter(|&i| !selected[i]).collect();
    let mut changed = false;
    for gene in genes.iter_mut() {
        if rng.random::<f64>() < rate {
            let k = rng.random_range(0..unselected.len());
            std::mem::swap(gene, &mut unselected[k]);
            changed = true;
        }
    }
    if !changed {
        return c.clone();
    }
    genes.sort_unstable();
    Chromosome::from_sorted_unchecked(genes)
}

/// Searches for a size-`n` subset minimizing [`fitness`].
///
/// Generation 1 is the random initial population. The search stops once at
/// least `min_generations` have run and the best-so-far fitness improved by
/// less than `convergence_epsilon` over the previous generation, or at
/// `max_generations`.
pub fn ga_minimize(
    m: &CondensedSimilarityMatrix,
    n: usize,
    params: &GaParams,
    seed: u64,
) -> Result<SearchOutcome, MinimizerError> {
    params.validate()?;
    let total = m.n_tests();
    if n == 0 || n > total {
        return Err(MinimizerError::BudgetOutOfRange { n, total });
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if n == total {
        let best = Scored::new(Chromosome::full(total), m);
        return Ok(SearchOutcome {
            seed,
            best_fitness: best.fitness,
            best: best.chromosome,
            generations: 1,
            search_time_ms: start.elapsed().as_secs_f64() * 1e3,
            fitness_history: vec![best.fitness],
        });
    }

    let mut population: Vec<Scored> = initialize(&mut rng, total, n, params.population_size)
        .into_iter()
        .map(|c| Scored::new(c, m))
        .collect();
    population.sort_by(rank);
    let mut best = population[0].clone();
    let mut history = vec![best.fitness];
    let mut generations = 1;

    while generations < params.max_generations {
        let slots = params.population_size - params.elitism;
        let mut offspring = Vec::with_capacity(slots);
        while offspring.len() < slots {
            let a = tournament(&mut rng, &population, params.tournament_size)
                .chromosome
                .clone();
            let b = tournament(&mut rng, &population, params.tournament_size)
                .chromosome
                .clone();
            let (c1, c2) = if rng.random::<f64>() < params.crossover_rate {
                (crossover(&mut rng, &a, &b), crossover(&mut rng, &a, &b))
            } else {
                (a, b)
            };
            offspring.push(mutate(&mut rng, &c1, total, params.mutation_rate));
            if offspring.len() < slots {
                offspring.push(mutate(&mut rng, &c2, total, params.mutation_rate));
            }
        }

        let mut scored: Vec<Scored> = population[..params.elitism].to_vec();
        scored.extend(offspring.into_iter().map(|c| Scored::new(c, m)));
        scored.sort_by(rank);
        population = scored;
        generations += 1;

        let previous = best.fitness;
        if rank(&population[0], &best) == Ordering::Less {
            best = population[0].clone();
        }
        history.push(best.fitness);
        if generations >= params.min_generations
            && previous - best.fitness < params.convergence_epsilon
        {
            break;
        }
    }

    Ok(SearchOutcome {
        seed,
        best_fitness: best.fitness,
        best: best.chromosome,
        generations,
        search_time_ms: start.elapsed().as_secs_f64() * 1e3,
        fitness_history: history,
    })
}
