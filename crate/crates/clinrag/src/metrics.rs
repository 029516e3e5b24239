//! Scoring: set-based F1 and RAGAS-style quality components.
//!
//! F1 is computed over exact canonical-term matches; what counts as
//! "correct" is therefore exactly the synonym-normalized match rule from the
//! extraction module. Faithfulness and answer relevance delegate claim
//! decomposition, verdicts and question regeneration to a judge — any chat
//! backend, including the mock.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::extraction::{ParseStatus, TermSet};
use crate::gateway::{Condition, ModelClass};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no records to aggregate")]
    NoRecords,
    #[error("faithfulness requires at least one context passage")]
    NoContexts,
    #[error("ragas composite requires at least one component")]
    NoComponents,
    #[error("judge generated no questions")]
    NoQuestions,
    #[error("judge returned {verdicts} verdicts for {claims} claims")]
    VerdictCountMismatch { claims: usize, verdicts: usize },
    #[error("judge failure: {0}")]
    Judge(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Precision, recall and their harmonic mean, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-based precision/recall/F1 against a gold term set.
///
/// An empty prediction scores zero precision; an empty gold set scores zero
/// recall (mirroring the prediction rule, so swapping the arguments swaps
/// precision and recall). F1 is 0 when both components are 0.
pub fn prf(predicted: &TermSet, gold: &TermSet) -> Prf {
    let inter = predicted.intersection_size(gold) as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        inter / predicted.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        inter / gold.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// One judged claim in the faithfulness audit trail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim: String,
    pub supported: bool,
}

/// RAGAS-style quality components. A component is absent when it could not
/// be computed for the run configuration (e.g. faithfulness without any
/// reference contexts); the composite averages the present components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagasComponents {
    pub faithfulness: Option<f64>,
    pub answer_relevance: Option<f64>,
    pub composite: f64,
    pub judge_trace: Vec<ClaimVerdict>,
}

impl RagasComponents {
    pub fn new(
        faithfulness: Option<(f64, Vec<ClaimVerdict>)>,
        answer_relevance: Option<f64>,
    ) -> Result<Self, MetricsError> {
        let (faith_score, judge_trace) = match faithfulness {
            Some((score, trace)) => (Some(score), trace),
            None => (None, Vec::new()),
        };
        let composite = ragas_composite(faith_score, answer_relevance)?;
        Ok(Self {
            faithfulness: faith_score,
            answer_relevance,
            composite,
            judge_trace,
        })
    }
}

/// Arithmetic mean of the present components.
pub fn ragas_composite(
    faithfulness: Option<f64>,
    answer_relevance: Option<f64>,
) -> Result<f64, MetricsError> {
    let present: Vec<f64> = [faithfulness, answer_relevance]
        .into_iter()
        .flatten()
        .collect();
    if present.is_empty() {
        return Err(MetricsError::NoComponents);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Judge interface: claim decomposition, verdicts and question regeneration.
/// Production judges adapt a chat backend; tests script the methods directly.
#[async_trait]
pub trait Judge: Send + Sync {
    async fn decompose_claims(&self, answer: &str) -> Result<Vec<String>, MetricsError>;
    async fn verdict_claims(
        &self,
        claims: &[String],
        contexts: &[String],
    ) -> Result<Vec<bool>, MetricsError>;
    async fn generate_questions(&self, answer: &str, n: usize)
        -> Result<Vec<String>, MetricsError>;
}

/// Fraction of the answer's atomic claims supported by the contexts, plus
/// the per-claim audit trail. An answer with zero extractable claims is
/// vacuously faithful (1.0); the record's parse status flags that case.
pub async fn faithfulness(
    answer_text: &str,
    contexts: &[String],
    judge: &dyn Judge,
) -> Result<(f64, Vec<ClaimVerdict>), MetricsError> {
    if contexts.is_empty() {
        return Err(MetricsError::NoContexts);
    }
    let claims = judge.decompose_claims(answer_text).await?;
    if claims.is_empty() {
        return Ok((1.0, Vec::new()));
    }
    let verdicts = judge.verdict_claims(&claims, contexts).await?;
    if verdicts.len() != claims.len() {
        return Err(MetricsError::VerdictCountMismatch {
            claims: claims.len(),
            verdicts: verdicts.len(),
        });
    }
    let supported = verdicts.iter().filter(|v| **v).count();
    let trace: Vec<ClaimVerdict> = claims
        .into_iter()
        .zip(verdicts)
        .map(|(claim, supported)| ClaimVerdict { claim, supported })
        .collect();
    Ok((supported as f64 / trace.len() as f64, trace))
}

/// Mean cosine similarity between the original question and questions the
/// judge regenerates from the answer, clamped to [0, 1].
pub async fn answer_relevance(
    question: &str,
    answer_text: &str,
    judge: &dyn Judge,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, MetricsError> {
    let generated = judge.generate_questions(answer_text, 3).await?;
    if generated.is_empty() {
        return Err(MetricsError::NoQuestions);
    }
    let mut texts = Vec::with_capacity(generated.len() + 1);
    texts.push(question.to_string());
    texts.extend(generated);
    let vectors = embedder.embed_batch(&texts).await?;
    let original = &vectors[0];
    let mean = vectors[1..]
        .iter()
        .map(|v| original.cosine(v).clamp(0.0, 1.0))
        .sum::<f64>()
        / (vectors.len() - 1) as f64;
    Ok(mean)
}

fn strip_list_prefix(line: &str) -> Option<&str> {
    let trimmed = line.trim();
    for prefix in ["- ", "* ", "+ "] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            return Some(rest.trim());
        }
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = trimmed[digits..].strip_prefix(". ") {
            return Some(rest.trim());
        }
    }
    None
}

/// Claims from a judge decomposition response: one per list item.
pub fn parse_claim_lines(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(strip_list_prefix)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Verdicts from a judge response: one SUPPORTED/UNSUPPORTED token per line,
/// in claim order. Count must match the number of claims.
pub fn parse_verdict_lines(text: &str, expected: usize) -> Result<Vec<bool>, MetricsError> {
    let verdicts: Vec<bool> = text
        .lines()
        .filter_map(|line| {
            let upper = line.to_uppercase();
            if upper.contains("UNSUPPORTED") {
                Some(false)
            } else if upper.contains("SUPPORTED") {
                Some(true)
            } else {
                None
            }
        })
        .collect();
    if verdicts.len() != expected {
        return Err(MetricsError::VerdictCountMismatch {
            claims: expected,
            verdicts: verdicts.len(),
        });
    }
    Ok(verdicts)
}

/// Regenerated questions from a judge response: list items, at most `n`.
pub fn parse_question_lines(text: &str, n: usize) -> Vec<String> {
    text.lines()
        .filter_map(strip_list_prefix)
        .filter(|s| !s.is_empty())
        .take(n)
        .map(str::to_string)
        .collect()
}

/// Whether a task produced scores or an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Scored,
    Error,
}

/// One line of the results file: everything known about a
/// (case, model, condition, trial) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub case_id: String,
    pub model: String,
    #[serde(default)]
    pub model_class: Option<ModelClass>,
    pub condition: Condition,
    pub trial: u32,
    pub status: RecordStatus,
    #[serde(default)]
    pub parse_status: Option<ParseStatus>,
    #[serde(default)]
    pub f1_dx: Option<Prf>,
    #[serde(default)]
    pub f1_tx: Option<Prf>,
    #[serde(default)]
    pub ragas: Option<RagasComponents>,
    #[serde(default)]
    pub prompt_hash: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Macro-averaged scores for one (model, condition) cell. A mean is absent
/// when no scored record carries that metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub model: String,
    #[serde(default)]
    pub model_class: Option<ModelClass>,
    pub condition: Condition,
    pub scored: usize,
    pub errored: usize,
    pub mean_f1_dx: Option<f64>,
    pub mean_f1_tx: Option<f64>,
    pub mean_ragas: Option<f64>,
}

/// Per-(model, condition) aggregates over a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub cells: Vec<AggregateCell>,
}

/// The three reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    F1Dx,
    F1Tx,
    Ragas,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::F1Dx => "F1-Dx",
            Metric::F1Tx => "F1-Tx",
            Metric::Ragas => "RAGAS",
        })
    }
}

/// A model's best mean score for one metric across conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopScore {
    pub model: String,
    pub model_class: Option<ModelClass>,
    pub condition: Condition,
    pub metric: Metric,
    pub score: f64,
}

/// Macro-average records into per-(model, condition) cells: every case (and
/// trial) weighs equally. Errored records are counted but excluded from the
/// means.
pub fn aggregate(records: &[ScoreRecord]) -> Result<Aggregates, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }

    struct CellAccumulator {
        model_class: Option<ModelClass>,
        scored: usize,
        errored: usize,
        f1_dx: Vec<f64>,
        f1_tx: Vec<f64>,
        ragas: Vec<f64>,
    }

    let mut cells: BTreeMap<(String, usize), CellAccumulator> = BTreeMap::new();
    for record in records {
        let key = (record.model.clone(), record.condition.assistance_rank());
        let cell = cells.entry(key).or_insert_with(|| CellAccumulator {
            model_class: None,
            scored: 0,
            errored: 0,
            f1_dx: Vec::new(),
            f1_tx: Vec::new(),
            ragas: Vec::new(),
        });
        if cell.model_class.is_none() {
            cell.model_class = record.model_class;
        }
        match record.status {
            RecordStatus::Scored => {
                cell.scored += 1;
                if let Some(p) = record.f1_dx {
                    cell.f1_dx.push(p.f1);
                }
                if let Some(p) = record.f1_tx {
                    cell.f1_tx.push(p.f1);
                }
                if let Some(ragas) = &record.ragas {
                    cell.ragas.push(ragas.composite);
                }
            }
            RecordStatus::Error => cell.errored += 1,
        }
    }

    fn mean(values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }

    Ok(Aggregates {
        cells: cells
            .into_iter()
            .map(|((model, rank), acc)| AggregateCell {
                model,
                model_class: acc.model_class,
                condition: Condition::ALL[rank],
                scored: acc.scored,
                errored: acc.errored,
                mean_f1_dx: mean(&acc.f1_dx),
                mean_f1_tx: mean(&acc.f1_tx),
                mean_ragas: mean(&acc.ragas),
            })
            .collect(),
    })
}

impl Aggregates {
    /// For each (model, metric) with at least one value, the condition with
    /// the maximum mean score. Ties go to the condition with the least
    /// assistance. Sorted by metric, then model name.
    pub fn top_scores(&self) -> Vec<TopScore> {
        let mut tops: Vec<TopScore> = Vec::new();
        for metric in [Metric::F1Dx, Metric::F1Tx, Metric::Ragas] {
            let mut best: BTreeMap<&str, &AggregateCell> = BTreeMap::new();
            for cell in &self.cells {
                let value = match metric {
                    Metric::F1Dx => cell.mean_f1_dx,
                    Metric::F1Tx => cell.mean_f1_tx,
                    Metric::Ragas => cell.mean_ragas,
                };
                if value.is_none() {
                    continue;
                }
                best.entry(cell.model.as_str())
                    .and_modify(|current| {
                        let current_value = match metric {
                            Metric::F1Dx => current.mean_f1_dx,
                            Metric::F1Tx => current.mean_f1_tx,
                            Metric::Ragas => current.mean_ragas,
                        }
                        .unwrap();
                        let candidate = value.unwrap();
                        let wins = candidate > current_value
                            || (candidate == current_value
                                && cell.condition.assistance_rank()
                                    < current.condition.assistance_rank());
                        if wins {
                            *current = cell;
                        }
                    })
                    .or_insert(cell);
            }
            for (model, cell) in best {
                let score = match metric {
                    Metric::F1Dx => cell.mean_f1_dx,
                    Metric::F1Tx => cell.mean_f1_tx,
                    Metric::Ragas => cell.mean_ragas,
                }
                .unwrap();
                tops.push(TopScore {
                    model: model.to_string(),
                    model_class: cell.model_class,
                    condition: cell.condition,
                    metric,
                    score,
                });
            }
        }
        tops
    }
}
