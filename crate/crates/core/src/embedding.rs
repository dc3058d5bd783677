//! Vector representations of text and the provider contract behind them.
//!
//! Every [`EmbeddingVector`] is unit-norm, so cosine similarity is a plain dot
//! product. Vectors carry the id of the provider that produced them; comparing
//! vectors from different providers is an error.

use std::hash::Hasher;
use std::sync::Arc;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

/// Bucket count of the reference embedder.
pub const REFERENCE_DIM: usize = 256;
pub const REFERENCE_PROVIDER_ID: &str = "hashed-tf-256";

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text has no tokens to embed")]
    NoTokens,
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("stored vector is not unit-norm (norm {0})")]
    NotNormalized(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("provider mismatch: {left} vs {right}")]
    ProviderMismatch { left: String, right: String },
    #[error("embedding provider failure: {0}")]
    Provider(String),
}

impl EmbeddingError {
    /// Remote failures may succeed on retry; everything else is deterministic.
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Provider(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    provider_id: Arc<str>,
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`.
    pub fn new(provider_id: &str, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self {
            provider_id: provider_id.into(),
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Rebuilds a vector that was persisted already normalized, bit-for-bit.
    pub fn from_normalized(provider_id: &str, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbeddingError::NotNormalized(norm));
        }
        Ok(Self {
            provider_id: provider_id.into(),
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dot product of two unit vectors from the same provider.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.provider_id != b.provider_id {
        return Err(EmbeddingError::ProviderMismatch {
            left: a.provider_id.to_string(),
            right: b.provider_id.to_string(),
        });
    }
    // Summing the products in index order keeps the result symmetric bit-for-bit.
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .sum::<f64>())
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Stable FNV-1a bucket of a token.
pub fn token_bucket(token: &str, dim: usize) -> usize {
    let mut hasher = FnvHasher::default();
    hasher.write(token.as_bytes());
    (hasher.finish() % dim as u64) as usize
}

/// Hashed term-frequency embedder: bag of lowercased tokens, one bucket per
/// token hash, L2-normalized. Order-free and deterministic.
#[derive(Debug, Clone)]
pub struct HashedTfEmbedder {
    provider_id: String,
    dim: usize,
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        Self {
            provider_id: REFERENCE_PROVIDER_ID.to_string(),
            dim: REFERENCE_DIM,
        }
    }
}

impl HashedTfEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            provider_id: format!("hashed-tf-{dim}"),
            dim,
        }
    }
}

impl EmbeddingProvider for HashedTfEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut counts = vec![0.0; self.dim];
        let mut any = false;
        for token in tokenize(text) {
            counts[token_bucket(&token, self.dim)] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbeddingError::NoTokens);
        }
        EmbeddingVector::new(&self.provider_id, counts)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding service reached over HTTP: `POST {texts}` answered by `{vectors}`.
pub struct RemoteEmbedder {
    provider_id: String,
    dim: usize,
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(provider_id: &str, endpoint: &str, dim: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            provider_id: provider_id.to_string(),
            dim,
            endpoint: endpoint.to_string(),
            agent,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(|e| EmbeddingError::Provider(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Provider(e.to_string()))?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::Provider(format!(
                "expected {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dim,
                        right: values.len(),
                    });
                }
                EmbeddingVector::new(&self.provider_id, values)
            })
            .collect()
    }
}
