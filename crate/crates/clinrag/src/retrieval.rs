//! Query building, kNN retrieval, passage re-ranking and context assembly.
//!
//! The default re-ranker is lexical word-set overlap so the harness runs
//! fully offline; an HTTP cross-encoder speaking a two-field JSON protocol
//! can be plugged in behind the same trait.

use std::collections::{HashMap, HashSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PatientCase;
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::gateway::Condition;
use crate::vector_index::{FlatIndex, IndexError, SearchHit};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no candidates to re-rank")]
    NoCandidates,
    #[error("chunk {0:?} has no stored text")]
    MissingChunkText(String),
    #[error("re-rank scorer returned {got} scores for {expected} passages")]
    ScoreCountMismatch { expected: usize, got: usize },
    #[error("re-rank request failed: {0}")]
    RerankRequest(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Retrieval knobs with the harness defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalParams {
    /// Candidates fetched from the index.
    #[serde(default = "default_k_retrieve")]
    pub k_retrieve: usize,
    /// Candidates kept after re-ranking.
    #[serde(default = "default_m_keep")]
    pub m_keep: usize,
    /// Context budget in characters.
    #[serde(default = "default_char_budget")]
    pub char_budget: usize,
}

fn default_k_retrieve() -> usize {
    8
}

fn default_m_keep() -> usize {
    4
}

fn default_char_budget() -> usize {
    6000
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            k_retrieve: default_k_retrieve(),
            m_keep: default_m_keep(),
            char_budget: default_char_budget(),
        }
    }
}

/// Re-rank result for one candidate passage.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankScore {
    pub chunk_id: String,
    /// Relevance in [0, 1].
    pub score: f64,
    /// 1-based rank the candidate had before re-ranking.
    pub original_rank: usize,
}

/// One candidate in the retrieval trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub chunk_id: String,
    pub l2_distance: f64,
    pub rerank_score: f64,
    pub final_rank: usize,
}

/// Passages assembled for one case under one condition, with the full
/// audit trail of every candidate considered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub case_id: String,
    /// (chunk_id, text) in final rank order.
    pub passages: Vec<(String, String)>,
    pub total_chars: usize,
    pub retrieval_trace: Vec<TraceEntry>,
}

/// Scores passages against a query; higher is more relevant, in [0, 1].
#[async_trait]
pub trait RerankScorer: Send + Sync {
    async fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, RetrievalError>;
}

fn word_set(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Default scorer: |Q ∩ P| / |Q| over lowercased word sets (0 for an empty
/// query).
pub struct LexicalOverlapScorer;

impl LexicalOverlapScorer {
    fn score_one(query_words: &HashSet<String>, passage: &str) -> f64 {
        if query_words.is_empty() {
            return 0.0;
        }
        let passage_words = word_set(passage);
        let hits = query_words.intersection(&passage_words).count();
        hits as f64 / query_words.len() as f64
    }
}

#[async_trait]
impl RerankScorer for LexicalOverlapScorer {
    async fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let query_words = word_set(query);
        Ok(passages
            .iter()
            .map(|p| Self::score_one(&query_words, p))
            .collect())
    }
}

#[derive(Serialize)]
struct RerankWireRequest<'a> {
    query: &'a str,
    passages: &'a [String],
}

#[derive(Deserialize)]
struct RerankWireResponse {
    scores: Vec<f64>,
}

/// Cross-encoder scoring service client.
///
/// Wire shape: POST `{"query": s, "passages": [s...]}` → `{"scores": [f32...]}`.
/// Scores are clamped to [0, 1] on receipt.
pub struct HttpRerankScorer {
    client: reqwest::Client,
    endpoint: String,
}

impl HttpRerankScorer {
    pub fn new(endpoint: String, timeout_ms: u64) -> Result<Self, RetrievalError> {
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| RetrievalError::RerankRequest(e.to_string()))?;
        Ok(Self { client, endpoint })
    }
}

#[async_trait]
impl RerankScorer for HttpRerankScorer {
    async fn score(&self, query: &str, passages: &[String]) -> Result<Vec<f64>, RetrievalError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&RerankWireRequest { query, passages })
            .send()
            .await
            .map_err(|e| RetrievalError::RerankRequest(e.to_string()))?;
        if !response.status().is_success() {
            return Err(RetrievalError::RerankRequest(format!(
                "scorer returned status {}",
                response.status().as_u16()
            )));
        }
        let body: RerankWireResponse = response
            .json()
            .await
            .map_err(|e| RetrievalError::RerankRequest(e.to_string()))?;
        if body.scores.len() != passages.len() {
            return Err(RetrievalError::ScoreCountMismatch {
                expected: passages.len(),
                got: body.scores.len(),
            });
        }
        Ok(body.scores.into_iter().map(|s| s.clamp(0.0, 1.0)).collect())
    }
}

/// Retrieval query for a case: the narrative fields, plus the pre-diagnosis
/// when the condition provides one. Deterministic.
pub fn build_query(case: &PatientCase, condition: Condition) -> String {
    let mut query = case.narrative();
    if condition.prediagnosis_provided {
        if let Some(pre) = &case.pre_diagnosis {
            query.push_str("\nWorking diagnosis: ");
            query.push_str(pre);
        }
    }
    query
}

/// Re-rank candidates: scores from the scorer, sorted descending, ties
/// broken by original rank. The output is a permutation of the input.
pub async fn rerank(
    scorer: &dyn RerankScorer,
    query: &str,
    candidates: &[(SearchHit, String)],
) -> Result<Vec<RerankScore>, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let passages: Vec<String> = candidates.iter().map(|(_, text)| text.clone()).collect();
    let scores = scorer.score(query, &passages).await?;
    if scores.len() != candidates.len() {
        return Err(RetrievalError::ScoreCountMismatch {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    let mut ranked: Vec<RerankScore> = candidates
        .iter()
        .zip(scores)
        .map(|((hit, _), score)| RerankScore {
            chunk_id: hit.chunk_id.clone(),
            score,
            original_rank: hit.rank,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.original_rank.cmp(&b.original_rank))
    });
    Ok(ranked)
}

/// Embed the case query, fetch top-k candidates, re-rank, keep the top m,
/// then pack passages in final-rank order until the character budget would
/// be exceeded. The first-ranked passage is always included whole: an empty
/// context would silently degrade a RAG condition to no-RAG.
pub async fn retrieve_context(
    case: &PatientCase,
    condition: Condition,
    index: &FlatIndex,
    embedder: &dyn EmbeddingProvider,
    scorer: &dyn RerankScorer,
    chunk_texts: &HashMap<String, String>,
    params: RetrievalParams,
) -> Result<ContextBundle, RetrievalError> {
    let query = build_query(case, condition);
    let query_vector = embedder
        .embed_batch(std::slice::from_ref(&query))
        .await?
        .remove(0);
    retrieve_context_with_query_vector(
        case,
        condition,
        &query,
        &query_vector,
        index,
        scorer,
        chunk_texts,
        params,
    )
    .await
}

/// Inner retrieval step, used directly by the runner so query embeddings can
/// be cached.
#[allow(clippy::too_many_arguments)]
pub async fn retrieve_context_with_query_vector(
    case: &PatientCase,
    _condition: Condition,
    query: &str,
    query_vector: &crate::embedding::EmbeddingVector,
    index: &FlatIndex,
    scorer: &dyn RerankScorer,
    chunk_texts: &HashMap<String, String>,
    params: RetrievalParams,
) -> Result<ContextBundle, RetrievalError> {
    let hits = index.search(query_vector, params.k_retrieve)?;
    let mut candidates: Vec<(SearchHit, String)> = Vec::with_capacity(hits.len());
    for hit in hits {
        let text = chunk_texts
            .get(&hit.chunk_id)
            .ok_or_else(|| RetrievalError::MissingChunkText(hit.chunk_id.clone()))?;
        candidates.push((hit, text.clone()));
    }
    let ranked = rerank(scorer, query, &candidates).await?;

    let distance_by_id: HashMap<&str, f64> = candidates
        .iter()
        .map(|(hit, _)| (hit.chunk_id.as_str(), hit.distance))
        .collect();
    let text_by_id: HashMap<&str, &str> = candidates
        .iter()
        .map(|(hit, text)| (hit.chunk_id.as_str(), text.as_str()))
        .collect();

    let retrieval_trace: Vec<TraceEntry> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| TraceEntry {
            chunk_id: r.chunk_id.clone(),
            l2_distance: distance_by_id[r.chunk_id.as_str()],
            rerank_score: r.score,
            final_rank: i + 1,
        })
        .collect();

    let mut passages: Vec<(String, String)> = Vec::new();
    let mut total_chars = 0usize;
    for entry in ranked.iter().take(params.m_keep) {
        let text = text_by_id[entry.chunk_id.as_str()];
        let chars = text.chars().count();
        if passages.is_empty() || total_chars + chars <= params.char_budget {
            total_chars += chars;
            passages.push((entry.chunk_id.clone(), text.to_string()));
        } else {
            break;
        }
    }

    Ok(ContextBundle {
        case_id: case.case_id.clone(),
        passages,
        total_chars,
        retrieval_trace,
    })
}
