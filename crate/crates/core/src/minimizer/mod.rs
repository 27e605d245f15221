//! Budget-constrained diversity search over a condensed similarity matrix.
//!
//! A candidate minimized suite is a [`Chromosome`]: a sorted set of exactly
//! `n` distinct test indices. Its [`fitness`] is the mean, over selected
//! tests, of the squared maximum similarity to any other selected test.
//! Lower fitness means a more diverse suite, and the search minimizes it.

pub mod ga;
mod random;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VersionKey;
use crate::similarity::{CondensedSimilarityMatrix, SimilarityMeasure};

pub use ga::ga_minimize;
pub use random::random_minimize;

#[derive(Debug, Error, PartialEq)]
pub enum MinimizerError {
    #[error("target size {n} out of range for a suite of {total} tests")]
    BudgetOutOfRange { n: usize, total: usize },
    #[error("invalid GA parameters: {0}")]
    InvalidParams(String),
    #[error("chromosome index {index} out of range for {total} tests")]
    IndexOutOfRange { index: usize, total: usize },
    #[error("chromosome contains duplicate index {0}")]
    DuplicateIndex(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population_size: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub convergence_epsilon: f64,
    pub min_generations: usize,
    pub max_generations: usize,
    pub tournament_size: usize,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population_size: 100,
            mutation_rate: 0.01,
            crossover_rate: 0.90,
            convergence_epsilon: 0.0025,
            min_generations: 10,
            max_generations: 500,
            tournament_size: 2,
            elitism: 1,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), MinimizerError> {
        let bad = |m: &str| Err(MinimizerError::InvalidParams(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("mutation_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must lie in [0, 1]");
        }
        if !(self.convergence_epsilon > 0.0 && self.convergence_epsilon.is_finite()) {
            return bad("convergence_epsilon must be positive");
        }
        if self.min_generations == 0 || self.min_generations > self.max_generations {
            return bad("need 1 <= min_generations <= max_generations");
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be >= 1");
        }
        if self.elitism >= self.population_size {
            return bad("elitism must be smaller than population_size");
        }
        Ok(())
    }
}

/// Sorted, duplicate-free set of selected test indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Chromosome(Vec<usize>);

impl Chromosome {
    /// Sorts `indices` and checks they are distinct and below `total`.
    pub fn new(mut indices: Vec<usize>, total: usize) -> Result<Self, MinimizerError> {
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(MinimizerError::DuplicateIndex(w[0]));
            }
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= total) {
            return Err(MinimizerError::IndexOutOfRange { index, total });
        }
        Ok(Self(indices))
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn full(total: usize) -> Self {
        Self((0..total).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }
}

/// Mean squared maximum pairwise similarity within the selection; 0 for a
/// single-test selection.
pub fn fitness(c: &Chromosome, m: &CondensedSimilarityMatrix) -> f64 {
    let idx = c.indices();
    let n = idx.len();
    if n <= 1 {
        return 0.0;
    }
    let mut maxes = vec![0.0f64; n];
    for a in 0..n {
        for b in a + 1..n {
            let s = m.sim(idx[a], idx[b]);
            if s > maxes[a] {
                maxes[a] = s;
            }
            if s > maxes[b] {
                maxes[b] = s;
            }
        }
    }
    maxes.iter().map(|x| x * x).sum::<f64>() / n as f64
}

/// Result of one search call.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub seed: u64,
    pub best: Chromosome,
    pub best_fitness: f64,
    pub generations: usize,
    pub search_time_ms: f64,
    /// Best-so-far fitness after each generation.
    pub fitness_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Minimizer {
    Ga,
    Random,
}

impl std::fmt::Display for Minimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Minimizer::Ga => "ga",
            Minimizer::Random => "random",
        })
    }
}

/// One (version, budget, run) cell of the experiment grid; serializes to one
/// JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub project: String,
    pub version: String,
    pub budget: f64,
    pub seed: u64,
    pub selected: Chromosome,
    pub best_fitness: f64,
    pub generations: usize,
    pub search_time_ms: f64,
    pub run: usize,
    pub measure: SimilarityMeasure,
    pub minimizer: Minimizer,
    #[serde(default)]
    pub fitness_history: Vec<f64>,
    #[serde(default)]
    pub config_hash: String,
}

impl RunRecord {
    pub fn from_outcome(
        key: &VersionKey,
        budget: f64,
        run: usize,
        measure: SimilarityMeasure,
        minimizer: Minimizer,
        outcome: SearchOutcome,
    ) -> Self {
        Self {
            project: key.project.clone(),
            version: key.version.clone(),
            budget,
            seed: outcome.seed,
            selected: outcome.best,
            best_fitness: outcome.best_fitness,
            generations: outcome.generations,
            search_time_ms: outcome.search_time_ms,
            run,
            measure,
            minimizer,
            fitness_history: outcome.fitness_history,
            config_hash: String::new(),
        }
    }

    pub fn key(&self) -> VersionKey {
        VersionKey::new(&self.project, &self.version)
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            search_time_ms: 0.0,
            ..self.clone()
        }
    }
}

/// Seed of run `r` given the job's base seed.
pub fn run_seed(base_seed: u64, run: usize) -> u64 {
    base_seed.wrapping_add(run as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const COS: SimilarityMeasure = SimilarityMeasure::NormalizedCosine;

    /// Direct transcription over a dense matrix.
    fn oracle(sel: &[usize], dense: &[Vec<f64>]) -> f64 {
        if sel.len() < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for &i in sel {
            let mut best = f64::NEG_INFINITY;
            for &j in sel {
                if i != j && dense[i][j] > best {
                    best = dense[i][j];
                }
            }
            total += best.powi(2);
        }
        total / sel.len() as f64
    }

    #[test]
    fn identical_tests_score_one() {
        let m = CondensedSimilarityMatrix::from_fn(3, COS, |_, _| 1.0).unwrap();
        assert_eq!(fitness(&Chromosome::full(3), &m), 1.0);
    }

    #[test]
    fn pair_closed_form() {
        let m = CondensedSimilarityMatrix::from_fn(2, COS, |_, _| 0.6).unwrap();
        assert!((fitness(&Chromosome::full(2), &m) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn worked_three_element_example() {
        let m = CondensedSimilarityMatrix::from_condensed(3, COS, vec![0.2, 0.9, 0.4]).unwrap();
        let f = fitness(&Chromosome::full(3), &m);
        assert!((f - 0.593_333_333_333_333_3).abs() < 1e-12, "{f}");
        assert!((f - (0.81 + 0.16 + 0.81) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_test_is_zero() {
        let m = CondensedSimilarityMatrix::from_fn(4, COS, |_, _| 0.7).unwrap();
        assert_eq!(fitness(&Chromosome::new(vec![2], 4).unwrap(), &m), 0.0);
    }

    #[test]
    fn chromosome_validation() {
        assert_eq!(
            Chromosome::new(vec![3, 1, 2], 4).unwrap().indices(),
            &[1, 2, 3]
        );
        assert_eq!(
            Chromosome::new(vec![1, 1], 4),
            Err(MinimizerError::DuplicateIndex(1))
        );
        assert_eq!(
            Chromosome::new(vec![0, 4], 4),
            Err(MinimizerError::IndexOutOfRange { index: 4, total: 4 })
        );
    }

    #[test]
    fn params_validation() {
        assert!(GaParams::default().validate().is_ok());
        for p in [
            GaParams {
                population_size: 1,
                ..Default::default()
            },
            GaParams {
                elitism: 100,
                ..Default::default()
            },
            GaParams {
                min_generations: 600,
                ..Default::default()
            },
            GaParams {
                mutation_rate: 1.5,
                ..Default::default()
            },
            GaParams {
                convergence_epsilon: 0.0,
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn run_record_json_has_required_keys() {
        let key = VersionKey::new("P", "3");
        let rec = RunRecord::from_outcome(
            &key,
            0.5,
            2,
            COS,
            Minimizer::Ga,
            SearchOutcome {
                seed: 44,
                best: Chromosome::new(vec![0, 2], 3).unwrap(),
                best_fitness: 0.25,
                generations: 11,
                search_time_ms: 1.5,
                fitness_history: vec![0.3, 0.25],
            },
        );
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        for k in [
            "project",
            "version",
            "budget",
            "seed",
            "selected",
            "best_fitness",
            "generations",
            "search_time_ms",
        ] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["selected"], serde_json::json!([0, 2]));
        assert_eq!(v["measure"], "cos");
        let back: RunRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #[test]
        fn fitness_matches_dense_oracle(seed in any::<u64>(), n_total in 2usize..=20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dense = vec![vec![0.0; n_total]; n_total];
            for i in 0..n_total {
                for j in i + 1..n_total {
                    let s: f64 = rng.random();
                    dense[i][j] = s;
                    dense[j][i] = s;
                }
            }
            let m = CondensedSimilarityMatrix::from_fn(n_total, COS, |i, j| dense[i][j]).unwrap();
            let k = rng.random_range(1..=n_total);
            let sel = rand::seq::index::sample(&mut rng, n_total, k).into_vec();
            let c = Chromosome::new(sel.clone(), n_total).unwrap();
            let f = fitness(&c, &m);
            prop_assert!((f - oracle(&sel, &dense)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn fitness_ignores_unselected_pairs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_total = 12;
            let base: Vec<f64> = (0..66).map(|_| rng.random()).collect();
            let sel = Chromosome::new(rand::seq::index::sample(&mut rng, n_total, 5).into_vec(), n_total).unwrap();
            let m1 = CondensedSimilarityMatrix::from_condensed(n_total, COS, base.clone()).unwrap();
            let m2 = CondensedSimilarityMatrix::from_fn(n_total, COS, |i, j| {
                if sel.contains(i) && sel.contains(j) {
                    m1.sim(i, j)
                } else {
                    rng.random()
                }
            }).unwrap();
            prop_assert_eq!(fitness(&sel, &m1).to_bits(), fitness(&sel, &m2).to_bits());
        }
    }
}
