//! Text-to-vector providers behind a common trait.
//!
//! The harness never hosts an embedding model itself. Production runs talk to
//! an HTTP embedding service speaking a small JSON protocol; tests and offline
//! runs use a deterministic content-hash embedder that is byte-stable across
//! runs and platforms.

use async_trait::async_trait;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Embedding dimension used throughout the pipeline.
pub const EMBEDDING_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text at index {0} is empty")]
    EmptyText(usize),
    #[error("provider returned {got} values for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
    #[error("expected dimension {EMBEDDING_DIM}, got {0}")]
    WrongDimension(usize),
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("provider response missing index {0}")]
    MissingIndex(usize),
    #[error("duplicate index {0} in provider response")]
    DuplicateIndex(usize),
    #[error("http_service provider requires an endpoint")]
    MissingEndpoint,
    #[error("embedding request failed: {0}")]
    Request(String),
    #[error("embedding service returned status {0}")]
    Status(u16),
    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),
}

/// A fixed-length dense vector of finite f32 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbeddingError::WrongDimension(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Cosine similarity with `other`, in [-1, 1]. Zero if either vector has
    /// zero norm.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a as f64) * (b as f64))
            .sum();
        let norms = self.l2_norm() * other.l2_norm();
        if norms == 0.0 {
            0.0
        } else {
            dot / norms
        }
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbeddingError;
    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Which provider implementation to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpService,
    DeterministicTest,
}

/// Provider selection and wire parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_batch_size() -> usize {
    16
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl EmbeddingProviderConfig {
    pub fn deterministic_test() -> Self {
        Self {
            kind: ProviderKind::DeterministicTest,
            endpoint: None,
            model_id: None,
            batch_size: default_batch_size(),
            timeout_ms: default_timeout_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.kind == ProviderKind::HttpService && self.endpoint.is_none() {
            return Err(EmbeddingError::MissingEndpoint);
        }
        if self.batch_size == 0 {
            return Err(EmbeddingError::MalformedResponse(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Batch text embedding. Output order matches input order; identical text
/// yields an identical vector within one provider configuration.
#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

fn check_non_empty(texts: &[String]) -> Result<(), EmbeddingError> {
    for (i, text) in texts.iter().enumerate() {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText(i));
        }
    }
    Ok(())
}

/// Construct the provider named by `config`.
pub fn provider_from_config(
    config: &EmbeddingProviderConfig,
) -> Result<Box<dyn EmbeddingProvider>, EmbeddingError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::DeterministicTest => Box::new(DeterministicEmbedder),
        ProviderKind::HttpService => Box::new(HttpEmbedder::new(config)?),
    })
}

/// Embed a single text with the deterministic test embedder.
///
/// The vector is derived solely from a SHA-256 hash of the text: the hash
/// seeds a ChaCha8 stream, each dimension is drawn from the stream, and the
/// result is L2-normalized. Byte-stable across runs and platforms.
pub fn deterministic_embed(text: &str) -> Result<EmbeddingVector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText(0));
    }
    let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut values = vec![0f32; EMBEDDING_DIM];
    for v in &mut values {
        // Top 24 bits of the draw, mapped to [-1, 1): exactly representable
        // in f32, so no platform-dependent rounding.
        let draw = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
        *v = draw * 2.0 - 1.0;
    }
    let norm = values
        .iter()
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v = ((*v as f64) / norm) as f32;
        }
    } else {
        values[0] = 1.0;
    }
    EmbeddingVector::new(values)
}

/// Test/offline provider: unit-norm content-hash vectors.
pub struct DeterministicEmbedder;

#[async_trait]
impl EmbeddingProvider for DeterministicEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_non_empty(texts)?;
        texts.iter().map(|t| deterministic_embed(t)).collect()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    data: Vec<WireItem>,
}

#[derive(Deserialize)]
struct WireItem {
    index: usize,
    embedding: Vec<f32>,
}

/// HTTP embedding service client.
///
/// Wire shape: POST `{"model": id, "input": [text...]}` →
/// `{"data": [{"index": i, "embedding": [f32; 768]}...]}`. Responses are
/// matched to inputs by `index`, not array order. Vectors are used as
/// returned — no re-normalization — so the index sees the provider's raw
/// geometry.
pub struct HttpEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model_id: String,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(config: &EmbeddingProviderConfig) -> Result<Self, EmbeddingError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or(EmbeddingError::MissingEndpoint)?;
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| EmbeddingError::Request(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model_id: config.model_id.clone().unwrap_or_default(),
            batch_size: config.batch_size.max(1),
        })
    }

    async fn embed_one_batch(
        &self,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let request = WireRequest {
            model: &self.model_id,
            input: texts,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .json(&request)
            .send()
            .await
            .map_err(|e| EmbeddingError::Request(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbeddingError::Status(status.as_u16()));
        }
        let body: WireResponse = response
            .json()
            .await
            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(EmbeddingError::CountMismatch {
                expected: texts.len(),
                got: body.data.len(),
            });
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for item in body.data {
            if item.index >= texts.len() {
                return Err(EmbeddingError::MalformedResponse(format!(
                    "index {} out of range",
                    item.index
                )));
            }
            if slots[item.index].is_some() {
                return Err(EmbeddingError::DuplicateIndex(item.index));
            }
            slots[item.index] = Some(EmbeddingVector::new(item.embedding)?);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| slot.ok_or(EmbeddingError::MissingIndex(i)))
            .collect()
    }
}

#[async_trait]
impl EmbeddingProvider for HttpEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_non_empty(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_one_batch(batch).await?);
        }
        Ok(out)
    }
}
