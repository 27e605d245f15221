//! HTTP client for the embedding sidecar.
//!
//! `POST {base}/embed` with `{"model": tag, "texts": [...]}` answers
//! `{"model": ..., "embeddings": [[768 floats], ...], "truncated": [bool, ...]}`.
//! `GET {base}/health` answers `{"status": ..., "models_loaded": [...], "dim": 768}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    EmbeddedBatch, Embedding, EmbeddingError, EmbeddingProvider, ProviderCapabilities,
    EMBEDDING_DIM,
};
use crate::corpus::{TestCase, VersionSuite};

pub const PROVIDER_URL_ENV: &str = "TSMIN_PROVIDER_URL";
pub const DEFAULT_PROVIDER_URL: &str = "http://127.0.0.1:8008";

const RETRIES: u32 = 3;
const DEFAULT_BACKOFF: Duration = Duration::from_millis(200);
const DEFAULT_BATCH: usize = 64;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    #[allow(dead_code)]
    model: Option<String>,
    embeddings: Vec<Vec<f64>>,
    #[serde(default)]
    truncated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    #[serde(default)]
    pub models_loaded: Vec<String>,
    pub dim: usize,
}

pub struct RemoteProvider {
    base_url: String,
    agent: ureq::Agent,
    backoff: Duration,
    caps: ProviderCapabilities,
}

enum Attempt {
    Retry(String),
    Fatal(EmbeddingError),
}

impl RemoteProvider {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            backoff: DEFAULT_BACKOFF,
            caps: ProviderCapabilities {
                model_tag: model.into(),
                max_batch: DEFAULT_BATCH,
                deterministic: true,
                max_concurrent: 1,
            },
        }
    }

    /// Uses `TSMIN_PROVIDER_URL` when set, else the local default port.
    pub fn from_env(model: impl Into<String>) -> Self {
        let url = std::env::var(PROVIDER_URL_ENV).unwrap_or_else(|_| DEFAULT_PROVIDER_URL.into());
        Self::new(url, model)
    }

    /// Base delay of the retry schedule; attempt `k` waits `backoff * 2^k`.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.caps.max_batch = max_batch.max(1);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn with_retries<T>(
        &self,
        mut f: impl FnMut() -> Result<T, Attempt>,
    ) -> Result<T, EmbeddingError> {
        let mut last = String::new();
        for attempt in 0..=RETRIES {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match f() {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(EmbeddingError::ProviderUnavailable(format!(
            "{} after {} retries: {last}",
            self.base_url, RETRIES
        )))
    }

    pub fn health(&self) -> Result<HealthStatus, EmbeddingError> {
        let url = format!("{}/health", self.base_url);
        let status = self.with_retries(|| {
            let mut resp = self
                .agent
                .get(&url)
                .call()
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let code = resp.status().as_u16();
            if code != 200 {
                return Err(Attempt::Retry(format!("health returned {code}")));
            }
            resp.body_mut()
                .read_json::<HealthStatus>()
                .map_err(|e| Attempt::Fatal(EmbeddingError::ProviderRejected(e.to_string())))
        })?;
        if status.dim != EMBEDDING_DIM {
            return Err(EmbeddingError::DimensionMismatch { got: status.dim });
        }
        Ok(status)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn embed_batch(
        &self,
        _suite: &VersionSuite,
        tests: &[TestCase],
    ) -> Result<EmbeddedBatch, EmbeddingError> {
        let url = format!("{}/embed", self.base_url);
        let request = EmbedRequest {
            model: &self.caps.model_tag,
            texts: tests.iter().map(|t| t.code.as_str()).collect(),
        };
        let resp: EmbedResponse = self.with_retries(|| {
            let mut resp = self
                .agent
                .post(&url)
                .send_json(&request)
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let code = resp.status().as_u16();
            if code >= 500 {
                return Err(Attempt::Retry(format!("server returned {code}")));
            }
            if code != 200 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(Attempt::Fatal(EmbeddingError::ProviderRejected(format!(
                    "{code}: {body}"
                ))));
            }
            resp.body_mut()
                .read_json::<EmbedResponse>()
                .map_err(|e| Attempt::Fatal(EmbeddingError::ProviderRejected(e.to_string())))
        })?;

        if resp.embeddings.len() != tests.len() {
            return Err(EmbeddingError::ProviderRejected(format!(
                "{} embeddings for {} texts",
                resp.embeddings.len(),
                tests.len()
            )));
        }
        let vectors = resp
            .embeddings
            .iter()
            .map(|v| Embedding::from_f64(v).map(Some))
            .collect::<Result<Vec<_>, _>>()?;
        let mut truncated = resp.truncated;
        truncated.resize(tests.len(), false);
        Ok(EmbeddedBatch { vectors, truncated })
    }
}
