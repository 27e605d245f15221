use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ga::random_subset;
use super::{Chromosome, MinimizerError};

/// Uniform random `n`-subset of `0..total`, reproducible per seed.
pub fn random_minimize(total: usize, n: usize, seed: u64) -> Result<Chromosome, MinimizerError> {
    if n == 0 || n > total {
        return Err(MinimizerError::BudgetOutOfRange { n, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_subset(&mut rng, total, n))
}
