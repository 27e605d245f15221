//! Fixed-dimension test embeddings and the providers that produce them.
//!
//! Every provider yields exactly [`EMBEDDING_DIM`] finite values per test.
//! Vectors are stored as `f32`; all downstream similarity arithmetic is `f64`.

mod file;
mod hashing;
mod remote;

use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use crate::corpus::{TestCase, VersionSuite};

pub(crate) use file::version_file;
pub use file::{
    load_embeddings, read_embeddings, store_embeddings, write_embeddings, FileProvider,
};
pub use hashing::{hash_embed, HashingProvider};
pub use remote::{HealthStatus, RemoteProvider, DEFAULT_PROVIDER_URL, PROVIDER_URL_ENV};

pub const EMBEDDING_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider rejected request: {0}")]
    ProviderRejected(String),
    #[error("expected {EMBEDDING_DIM}-dimensional vectors, got {got}")]
    DimensionMismatch { got: usize },
    #[error("provider returned no vector for {} test(s): {missing:?}", missing.len())]
    PartialResult { missing: Vec<String> },
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("corrupt embedding file at byte {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One test's vector. Length and finiteness are checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbeddingError::DimensionMismatch { got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Narrows `f64` input to `f32` storage. Values that overflow `f32` are rejected.
    pub fn from_f64(values: &[f64]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderCapabilities {
    pub model_tag: String,
    pub max_batch: usize,
    pub deterministic: bool,
    /// Upper bound on concurrent `embed_batch` calls the provider tolerates.
    pub max_concurrent: usize,
}

/// Result of one provider call, aligned with the request order.
#[derive(Debug, Clone, Default)]
pub struct EmbeddedBatch {
    pub vectors: Vec<Option<Embedding>>,
    pub truncated: Vec<bool>,
}

pub trait EmbeddingProvider: Send + Sync {
    fn capabilities(&self) -> &ProviderCapabilities;

    /// Embeds `tests`, which are a contiguous slice of `suite.tests`.
    /// A `None` entry means the provider has no vector for that test.
    fn embed_batch(
        &self,
        suite: &VersionSuite,
        tests: &[TestCase],
    ) -> Result<EmbeddedBatch, EmbeddingError>;
}

/// Vectors for one suite, keyed by test id and kept in insertion order.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub model_tag: String,
    pub prep_time_ms: f64,
    /// Ids whose input was truncated by the provider.
    pub truncated: Vec<String>,
    entries: Vec<(String, Embedding)>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.model_tag == other.model_tag && self.entries == other.entries
    }
}

impl EmbeddingSet {
    pub fn new(
        model_tag: impl Into<String>,
        entries: Vec<(String, Embedding)>,
        prep_time_ms: f64,
    ) -> Result<Self, EmbeddingError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, _)) in entries.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            model_tag: model_tag.into(),
            prep_time_ms: prep_time_ms.max(0.0),
            truncated: Vec::new(),
            entries,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, test_id: &str) -> Option<&Embedding> {
        self.index.get(test_id).map(|&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    /// Vectors in suite order. Fails if any test is missing or the set holds
    /// ids outside the suite.
    pub fn aligned<'a>(
        &'a self,
        suite: &VersionSuite,
    ) -> Result<Vec<&'a Embedding>, EmbeddingError> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(suite.len());
        for t in &suite.tests {
            match self.get(&t.test_id) {
                Some(e) => out.push(e),
                None => missing.push(t.test_id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(EmbeddingError::PartialResult { missing });
        }
        if self.entries.len() != suite.len() {
            let extra = self
                .entries
                .iter()
                .find(|(id, _)| !suite.tests.iter().any(|t| &t.test_id == id))
                .map(|(id, _)| id.clone())
                .unwrap_or_default();
            return Err(EmbeddingError::ProviderRejected(format!(
                "embedding set holds id `{extra}` not present in {}",
                suite.key()
            )));
        }
        Ok(out)
    }
}

/// Embeds every test of `suite` in suite order, batching by the provider's
/// `max_batch`. `prep_time_ms` is the wall-clock time of the whole call.
pub fn embed_suite(
    provider: &dyn EmbeddingProvider,
    suite: &VersionSuite,
) -> Result<EmbeddingSet, EmbeddingError> {
    let start = Instant::now();
    let caps = provider.capabilities();
    let batch = caps.max_batch.max(1);

    let mut entries = Vec::with_capacity(suite.len());
    let mut missing = Vec::new();
    let mut truncated = Vec::new();
    for chunk in suite.tests.chunks(batch) {
        let out = provider.embed_batch(suite, chunk)?;
        if out.vectors.len() != chunk.len() {
            return Err(EmbeddingError::ProviderRejected(format!(
                "provider returned {} vectors for {} inputs",
                out.vectors.len(),
                chunk.len()
            )));
        }
        for (i, (test, vector)) in chunk.iter().zip(out.vectors).enumerate() {
            if out.truncated.get(i).copied().unwrap_or(false) {
                truncated.push(test.test_id.clone());
            }
            match vector {
                Some(v) => entries.push((test.test_id.clone(), v)),
                None => missing.push(test.test_id.clone()),
            }
        }
    }
    if !missing.is_empty() {
        return Err(EmbeddingError::PartialResult { missing });
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let mut set = EmbeddingSet::new(caps.model_tag.clone(), entries, elapsed)?;
    set.truncated = truncated;
    Ok(set)
}
