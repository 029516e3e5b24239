//! Experiment execution: the cases × models × conditions matrix with
//! caching, crash-safe resume and bounded provider parallelism.
//!
//! Tasks run concurrently up to the configured parallelism, but records are
//! appended to the results file in plan order, so at any moment the file is
//! a valid prefix of the full run. A per-task failure produces an error
//! record and never aborts the run.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use async_trait::async_trait;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::PatientCase;
use crate::embedding::{
    EmbeddingError, EmbeddingProvider, EmbeddingProviderConfig, EmbeddingVector,
};
use crate::extraction::{extract_answer_blocks, SynonymTable, TermSet};
use crate::gateway::{
    build_judge_claims_prompt, build_judge_questions_prompt, build_judge_verdicts_prompt, complete,
    CallMeta, CallPurpose, ChatBackend, Condition, FinishReason, GatewayError, ModelAnswer,
    ModelConfig, Prompt, RetryPolicy, TemplateSet,
};
use crate::metrics::{
    answer_relevance, faithfulness, parse_claim_lines, parse_question_lines, parse_verdict_lines,
    prf, Judge, MetricsError, RagasComponents, RecordStatus, ScoreRecord,
};
use crate::retrieval::{
    build_query, retrieve_context_with_query_vector, ContextBundle, RerankScorer, RetrievalError,
    RetrievalParams,
};
use crate::vector_index::{FlatIndex, IndexError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("case {0:?} has no pre_diagnosis but a planned condition provides one")]
    MissingPreDiagnosis(String),
    #[error("condition {condition} requires a vector index but none is configured")]
    MissingIndex { condition: String },
    #[error("task exceeded its {timeout_ms} ms budget")]
    TaskTimeout { timeout_ms: u64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fingerprint mismatch: manifest has {manifest}, current inputs give {current}")]
    FingerprintMismatch { manifest: String, current: String },
    #[error("manifest not found at {0}")]
    ManifestMissing(PathBuf),
    #[error("{0} exists without a manifest; discard it or re-run with --fresh")]
    OrphanRecords(PathBuf),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("{path}:{line}: corrupt record mid-file: {reason}")]
    CorruptRecords {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// One unit of work: a (case, model, condition, trial) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Task {
    pub case_idx: usize,
    pub model_idx: usize,
    pub condition: Condition,
    pub trial: u32,
}

/// Identity of a task within a run; also the resume key.
pub fn task_key(case_id: &str, model: &str, condition: Condition, trial: u32) -> String {
    format!(
        "{case_id}\u{1f}{model}\u{1f}{}\u{1f}{trial}",
        condition.label()
    )
}

/// Build the deterministic task list: cases, then models, then conditions,
/// then trials. Errors if a planned condition provides a pre-diagnosis some
/// case does not carry.
pub fn plan(
    cases: &[PatientCase],
    models: &[ModelConfig],
    conditions: &[Condition],
    trials: u32,
) -> Result<Vec<Task>, RunnerError> {
    for condition in conditions {
        if condition.prediagnosis_provided {
            for case in cases {
                if case.pre_diagnosis.is_none() {
                    return Err(RunnerError::MissingPreDiagnosis(case.case_id.clone()));
                }
            }
        }
    }
    let mut tasks = Vec::with_capacity(cases.len() * models.len() * conditions.len());
    for case_idx in 0..cases.len() {
        for model_idx in 0..models.len() {
            for condition in conditions {
                for trial in 0..trials.max(1) {
                    tasks.push(Task {
                        case_idx,
                        model_idx,
                        condition: *condition,
                        trial,
                    });
                }
            }
        }
    }
    Ok(tasks)
}

/// Judge backend plus its model configuration.
pub struct JudgeSetup<'a> {
    pub backend: &'a dyn ChatBackend,
    pub config: &'a ModelConfig,
}

/// Everything `execute` needs, borrowed for the duration of a run.
pub struct RunnerContext<'a> {
    pub cases: &'a [PatientCase],
    pub models: &'a [ModelConfig],
    pub conditions: &'a [Condition],
    pub trials: u32,
    pub templates: &'a TemplateSet,
    pub synonyms: &'a SynonymTable,
    pub index: Option<&'a FlatIndex>,
    pub chunk_texts: Option<&'a HashMap<String, String>>,
    pub embedder: &'a dyn EmbeddingProvider,
    pub scorer: &'a dyn RerankScorer,
    pub backend: &'a dyn ChatBackend,
    pub judge: Option<JudgeSetup<'a>>,
    pub retrieval: RetrievalParams,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub cache: Option<&'a Cache>,
    pub embedding_config: &'a EmbeddingProviderConfig,
    /// Wall-clock budget per task, retries and judge calls included. A task
    /// that overruns is recorded as errored; the run continues.
    pub task_timeout_ms: u64,
}

/// Default per-task budget: ten minutes.
pub const DEFAULT_TASK_TIMEOUT_MS: u64 = 600_000;

impl RunnerContext<'_> {
    /// Embedding-cache key salt: identical configs share cached vectors.
    fn embedding_salt(&self) -> String {
        serde_json::to_string(self.embedding_config).expect("serializable")
    }
}

/// A cached completion, reused bit-identically on hits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedAnswer {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub attempts: u32,
    pub model: String,
    pub prompt_hash: String,
}

/// Directory-backed cache: one JSON file per key. Completions are keyed by
/// (case, model, condition, purpose, trial, prompt hash); query embeddings
/// by (embedding config, text).
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: &Path) -> Result<Self, RunnerError> {
        std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn completion_key(
        case_id: &str,
        model: &str,
        condition: Condition,
        purpose: CallPurpose,
        trial: u32,
        prompt_hash: &str,
    ) -> String {
        let mut hasher = Sha256::new();
        for part in [
            "chat",
            case_id,
            model,
            &condition.label(),
            purpose.as_str(),
            &trial.to_string(),
            prompt_hash,
        ] {
            hasher.update(part.as_bytes());
            hasher.update([0x1f]);
        }
        hex::encode(hasher.finalize())
    }

    pub fn embedding_key(salt: &str, text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"emb\x1f");
        hasher.update(salt.as_bytes());
        hasher.update([0x1f]);
        hasher.update(text.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CachedAnswer> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, answer: &CachedAnswer) -> Result<(), RunnerError> {
        let text = serde_json::to_string(answer).expect("serializable");
        self.write_atomic(key, &text)
    }

    pub fn get_embedding(&self, key: &str) -> Option<EmbeddingVector> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put_embedding(&self, key: &str, vector: &EmbeddingVector) -> Result<(), RunnerError> {
        let text = serde_json::to_string(vector).expect("serializable");
        self.write_atomic(key, &text)
    }

    /// Write via a temp file and rename, so concurrent writers of the same
    /// key can never leave a torn entry behind.
    fn write_atomic(&self, key: &str, text: &str) -> Result<(), RunnerError> {
        static SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let seq = SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.path(key);
        let tmp = self
            .dir
            .join(format!(".{key}.{}.{seq}.tmp", std::process::id()));
        std::fs::write(&tmp, text).map_err(|source| RunnerError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| RunnerError::Io { path, source })
    }
}

/// Complete a prompt through the cache: hits reuse the stored raw text
/// without touching the backend; misses call the backend and store the
/// result. Errors are never cached.
async fn complete_cached(
    ctx: &RunnerContext<'_>,
    backend: &dyn ChatBackend,
    config: &ModelConfig,
    prompt: &Prompt,
    meta: &CallMeta,
    trial: u32,
) -> Result<ModelAnswer, GatewayError> {
    let key = Cache::completion_key(
        &meta.case_id,
        &meta.model_name,
        meta.condition,
        meta.purpose,
        trial,
        &prompt.content_hash,
    );
    if let Some(cache) = ctx.cache {
        if let Some(hit) = cache.get(&key) {
            return Ok(ModelAnswer {
                raw_text: hit.raw_text,
                model: hit.model,
                condition: meta.condition,
                case_id: meta.case_id.clone(),
                latency_ms: hit.latency_ms,
                prompt_hash: hit.prompt_hash,
                finish_reason: hit.finish_reason,
                attempts: hit.attempts,
            });
        }
    }
    let answer = complete(backend, config, prompt, meta, ctx.retry).await?;
    if let Some(cache) = ctx.cache {
        let entry = CachedAnswer {
            raw_text: answer.raw_text.clone(),
            finish_reason: answer.finish_reason.clone(),
            latency_ms: answer.latency_ms,
            attempts: answer.attempts,
            model: answer.model.clone(),
            prompt_hash: answer.prompt_hash.clone(),
        };
        cache.put(&key, &entry).map_err(|e| GatewayError::Fatal {
            status: None,
            message: format!("cache write failed: {e}"),
        })?;
    }
    Ok(answer)
}

async fn embed_query_cached(
    ctx: &RunnerContext<'_>,
    query: &str,
) -> Result<EmbeddingVector, RunnerError> {
    let key = Cache::embedding_key(&ctx.embedding_salt(), query);
    if let Some(cache) = ctx.cache {
        if let Some(hit) = cache.get_embedding(&key) {
            return Ok(hit);
        }
    }
    let vector = ctx
        .embedder
        .embed_batch(std::slice::from_ref(&query.to_string()))
        .await?
        .remove(0);
    if let Some(cache) = ctx.cache {
        cache.put_embedding(&key, &vector)?;
    }
    Ok(vector)
}

/// Judge adapter over a chat backend: prompts from the template set, calls
/// through the cache, responses parsed into claims/verdicts/questions.
struct ChatJudge<'a> {
    ctx: &'a RunnerContext<'a>,
    setup: &'a JudgeSetup<'a>,
    case_id: &'a str,
    model_name: &'a str,
    condition: Condition,
    trial: u32,
}

impl ChatJudge<'_> {
    async fn ask(&self, prompt: &Prompt, purpose: CallPurpose) -> Result<String, MetricsError> {
        let meta = CallMeta {
            case_id: self.case_id.to_string(),
            model_name: self.model_name.to_string(),
            condition: self.condition,
            purpose,
        };
        let answer = complete_cached(
            self.ctx,
            self.setup.backend,
            self.setup.config,
            prompt,
            &meta,
            self.trial,
        )
        .await
        .map_err(|e| MetricsError::Judge(e.to_string()))?;
        Ok(answer.raw_text)
    }
}

#[async_trait]
impl Judge for ChatJudge<'_> {
    async fn decompose_claims(&self, answer: &str) -> Result<Vec<String>, MetricsError> {
        let prompt = build_judge_claims_prompt(self.ctx.templates, answer);
        let text = self.ask(&prompt, CallPurpose::JudgeClaims).await?;
        Ok(parse_claim_lines(&text))
    }

    async fn verdict_claims(
        &self,
        claims: &[String],
        contexts: &[String],
    ) -> Result<Vec<bool>, MetricsError> {
        let prompt = build_judge_verdicts_prompt(self.ctx.templates, claims, contexts);
        let text = self.ask(&prompt, CallPurpose::JudgeVerdicts).await?;
        parse_verdict_lines(&text, claims.len())
    }

    async fn generate_questions(
        &self,
        answer: &str,
        n: usize,
    ) -> Result<Vec<String>, MetricsError> {
        let prompt = build_judge_questions_prompt(self.ctx.templates, answer, n);
        let text = self.ask(&prompt, CallPurpose::JudgeQuestions).await?;
        Ok(parse_question_lines(&text, n))
    }
}

struct ScoredParts {
    parse_status: crate::extraction::ParseStatus,
    f1_dx: crate::metrics::Prf,
    f1_tx: crate::metrics::Prf,
    ragas: Option<RagasComponents>,
    prompt_hash: String,
}

async fn score_task(
    ctx: &RunnerContext<'_>,
    task: Task,
    case: &PatientCase,
    model: &ModelConfig,
) -> Result<ScoredParts, RunnerError> {
    let condition = task.condition;
    let query = build_query(case, condition);

    // Contexts are retrieved for every task that has an index available:
    // under RAG they go into the prompt; otherwise they serve as post-hoc
    // references for faithfulness.
    let bundle: Option<ContextBundle> = match (ctx.index, ctx.chunk_texts) {
        (Some(index), Some(chunk_texts)) => {
            let query_vector = embed_query_cached(ctx, &query).await?;
            Some(
                retrieve_context_with_query_vector(
                    case,
                    condition,
                    &query,
                    &query_vector,
                    index,
                    ctx.scorer,
                    chunk_texts,
                    ctx.retrieval,
                )
                .await?,
            )
        }
        _ if condition.rag_enabled => {
            return Err(RunnerError::MissingIndex {
                condition: condition.label(),
            })
        }
        _ => None,
    };

    let prompt_context = if condition.rag_enabled {
        bundle.as_ref()
    } else {
        None
    };
    let prompt = crate::gateway::build_prompt(case, condition, prompt_context, ctx.templates)?;

    let meta = CallMeta {
        case_id: case.case_id.clone(),
        model_name: model.name.clone(),
        condition,
        purpose: CallPurpose::Answer,
    };
    let answer = complete_cached(ctx, ctx.backend, model, &prompt, &meta, task.trial).await?;

    let extracted = extract_answer_blocks(&answer.raw_text, ctx.synonyms);
    let gold_dx = TermSet::from_canonical(&case.gold_diagnoses);
    let gold_tx = TermSet::from_canonical(&case.gold_treatments);
    let f1_dx = prf(&extracted.diagnoses, &gold_dx);
    let f1_tx = prf(&extracted.treatments, &gold_tx);

    let ragas = match &ctx.judge {
        Some(setup) => {
            let judge = ChatJudge {
                ctx,
                setup,
                case_id: &case.case_id,
                model_name: &model.name,
                condition,
                trial: task.trial,
            };
            let contexts: Vec<String> = bundle
                .as_ref()
                .map(|b| b.passages.iter().map(|(_, text)| text.clone()).collect())
                .unwrap_or_default();
            let faith = if contexts.is_empty() {
                None
            } else {
                Some(faithfulness(&answer.raw_text, &contexts, &judge).await?)
            };
            let relevance =
                answer_relevance(&query, &answer.raw_text, &judge, ctx.embedder).await?;
            Some(RagasComponents::new(faith, Some(relevance))?)
        }
        None => None,
    };

    Ok(ScoredParts {
        parse_status: extracted.parse_status,
        f1_dx,
        f1_tx,
        ragas,
        prompt_hash: prompt.content_hash,
    })
}

async fn run_task(ctx: &RunnerContext<'_>, task: Task) -> ScoreRecord {
    let case = &ctx.cases[task.case_idx];
    let model = &ctx.models[task.model_idx];
    let budget = std::time::Duration::from_millis(ctx.task_timeout_ms.max(1));
    let outcome = match tokio::time::timeout(budget, score_task(ctx, task, case, model)).await {
        Ok(result) => result,
        Err(_) => Err(RunnerError::TaskTimeout {
            timeout_ms: ctx.task_timeout_ms,
        }),
    };
    match outcome {
        Ok(parts) => ScoreRecord {
            case_id: case.case_id.clone(),
            model: model.name.clone(),
            model_class: Some(model.class_label),
            condition: task.condition,
            trial: task.trial,
            status: RecordStatus::Scored,
            parse_status: Some(parts.parse_status),
            f1_dx: Some(parts.f1_dx),
            f1_tx: Some(parts.f1_tx),
            ragas: parts.ragas,
            prompt_hash: Some(parts.prompt_hash),
            error: None,
        },
        Err(e) => ScoreRecord {
            case_id: case.case_id.clone(),
            model: model.name.clone(),
            model_class: Some(model.class_label),
            condition: task.condition,
            trial: task.trial,
            status: RecordStatus::Error,
            parse_status: None,
            f1_dx: None,
            f1_tx: None,
            ragas: None,
            prompt_hash: None,
            error: Some(e.to_string()),
        },
    }
}

/// Append one record per line, flushing after each, so a crash leaves a
/// valid prefix.
struct RecordWriter {
    file: std::fs::File,
    path: PathBuf,
}

impl RecordWriter {
    fn append(path: &Path) -> Result<Self, RunnerError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| RunnerError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, record: &ScoreRecord) -> Result<(), RunnerError> {
        let mut line = serde_json::to_string(record).expect("serializable");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| RunnerError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Execute tasks with at most `ctx.parallelism` in flight. Records come back
/// (and stream to `records_path`, when given) in task order; per-task errors
/// are embedded in the records.
pub async fn execute(
    ctx: &RunnerContext<'_>,
    tasks: &[Task],
    records_path: Option<&Path>,
) -> Result<Vec<ScoreRecord>, RunnerError> {
    let mut writer = match records_path {
        Some(path) => Some(RecordWriter::append(path)?),
        None => None,
    };
    let mut stream = futures::stream::iter(tasks.iter().map(|task| run_task(ctx, *task)))
        .buffered(ctx.parallelism.max(1));
    let mut records = Vec::with_capacity(tasks.len());
    while let Some(record) = stream.next().await {
        if let Some(w) = writer.as_mut() {
            w.write(&record)?;
        }
        records.push(record);
    }
    Ok(records)
}

/// Inputs that pin a run's identity. Any change to any of them changes the
/// fingerprint and invalidates resume.
#[derive(Clone, Copy)]
pub struct FingerprintInputs<'a> {
    pub cases: &'a [PatientCase],
    pub models: &'a [ModelConfig],
    pub conditions: &'a [Condition],
    pub templates: &'a TemplateSet,
    pub synonyms_json: &'a str,
    pub index_fingerprint: Option<&'a [u8; 32]>,
    pub retrieval: RetrievalParams,
    pub embedding: &'a EmbeddingProviderConfig,
    pub trials: u32,
}

/// Content fingerprint over every input artifact of a run.
pub fn compute_fingerprint(inputs: &FingerprintInputs<'_>) -> String {
    let mut hasher = Sha256::new();
    let mut feed = |label: &str, bytes: &[u8]| {
        hasher.update(label.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    feed(
        "cases",
        &serde_json::to_vec(inputs.cases).expect("serializable"),
    );
    feed(
        "models",
        &serde_json::to_vec(inputs.models).expect("serializable"),
    );
    feed(
        "conditions",
        &serde_json::to_vec(inputs.conditions).expect("serializable"),
    );
    feed(
        "templates",
        &serde_json::to_vec(inputs.templates).expect("serializable"),
    );
    feed("synonyms", inputs.synonyms_json.as_bytes());
    feed(
        "index",
        inputs
            .index_fingerprint
            .map(|f| f.as_slice())
            .unwrap_or(&[]),
    );
    feed(
        "retrieval",
        &serde_json::to_vec(&inputs.retrieval).expect("serializable"),
    );
    feed(
        "embedding",
        &serde_json::to_vec(inputs.embedding).expect("serializable"),
    );
    feed("trials", &inputs.trials.to_le_bytes());
    hex::encode(hasher.finalize())
}

/// Run identity and configuration, persisted next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub fingerprint: String,
    pub template_version: String,
    pub models: Vec<ModelConfig>,
    pub conditions: Vec<Condition>,
    pub case_ids: Vec<String>,
    pub retrieval: RetrievalParams,
    pub embedding: EmbeddingProviderConfig,
    pub trials: u32,
    pub parallelism: usize,
    pub started_at: String,
    pub finished_at: Option<String>,
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}

pub fn records_path(out_dir: &Path) -> PathBuf {
    out_dir.join("records.ndjson")
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), RunnerError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, RunnerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| RunnerError::ManifestMissing(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::MalformedManifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Read completed records. A torn final line (crash mid-write) is dropped
/// and the file truncated to the valid prefix; corruption anywhere else is
/// an error.
fn read_existing_records(path: &Path) -> Result<Vec<ScoreRecord>, RunnerError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(RunnerError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ScoreRecord>(line) {
            Ok(record) => records.push(record),
            Err(e) if i == lines.len() - 1 => {
                // Torn tail: rewrite the valid prefix and continue.
                let mut prefix = String::new();
                for good in &lines[..i] {
                    prefix.push_str(good);
                    prefix.push('\n');
                }
                std::fs::write(path, prefix).map_err(|source| RunnerError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(RunnerError::CorruptRecords {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(records)
}

/// Outcome of [`run`]: the full record set in task order, the manifest, and
/// how many tasks this invocation actually executed.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<ScoreRecord>,
    pub manifest: RunManifest,
    pub executed: usize,
    pub resumed: bool,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Execute (or resume) a run against `out_dir`.
///
/// With no manifest present this is a fresh run. With a manifest whose
/// fingerprint matches, only unfinished tasks execute; a completed run is a
/// no-op. A fingerprint mismatch is an error — inputs changed since the
/// original run.
pub async fn run(
    ctx: &RunnerContext<'_>,
    fingerprint: String,
    out_dir: &Path,
) -> Result<RunOutcome, RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let manifest_file = manifest_path(out_dir);
    let records_file = records_path(out_dir);
    let tasks = plan(ctx.cases, ctx.models, ctx.conditions, ctx.trials)?;

    let (mut manifest, resumed) = if manifest_file.exists() {
        let manifest = read_manifest(&manifest_file)?;
        if manifest.fingerprint != fingerprint {
            return Err(RunnerError::FingerprintMismatch {
                manifest: manifest.fingerprint,
                current: fingerprint,
            });
        }
        (manifest, true)
    } else if records_file.exists() {
        return Err(RunnerError::OrphanRecords(records_file));
    } else {
        let manifest = RunManifest {
            run_id: fingerprint[..12].to_string(),
            fingerprint: fingerprint.clone(),
            template_version: ctx.templates.version.clone(),
            models: ctx.models.to_vec(),
            conditions: ctx.conditions.to_vec(),
            case_ids: ctx.cases.iter().map(|c| c.case_id.clone()).collect(),
            retrieval: ctx.retrieval,
            embedding: ctx.embedding_config.clone(),
            trials: ctx.trials,
            parallelism: ctx.parallelism,
            started_at: now_rfc3339(),
            finished_at: None,
        };
        write_manifest(&manifest_file, &manifest)?;
        (manifest, false)
    };

    let existing = read_existing_records(&records_file)?;
    let done: HashSet<String> = existing
        .iter()
        .map(|r| task_key(&r.case_id, &r.model, r.condition, r.trial))
        .collect();
    let remaining: Vec<Task> = tasks
        .iter()
        .copied()
        .filter(|t| {
            let key = task_key(
                &ctx.cases[t.case_idx].case_id,
                &ctx.models[t.model_idx].name,
                t.condition,
                t.trial,
            );
            !done.contains(&key)
        })
        .collect();

    if remaining.is_empty() && resumed {
        return Ok(RunOutcome {
            records: order_records(existing, &tasks, ctx),
            manifest,
            executed: 0,
            resumed,
        });
    }

    let executed = execute(ctx, &remaining, Some(&records_file)).await?;
    manifest.finished_at = Some(now_rfc3339());
    write_manifest(&manifest_file, &manifest)?;

    let mut all = existing;
    all.extend(executed.iter().cloned());
    Ok(RunOutcome {
        records: order_records(all, &tasks, ctx),
        manifest,
        executed: executed.len(),
        resumed,
    })
}

/// Order records in plan order, dropping duplicate task keys (first wins).
fn order_records(
    records: Vec<ScoreRecord>,
    tasks: &[Task],
    ctx: &RunnerContext<'_>,
) -> Vec<ScoreRecord> {
    let mut by_key: HashMap<String, ScoreRecord> = HashMap::new();
    for record in records {
        let key = task_key(
            &record.case_id,
            &record.model,
            record.condition,
            record.trial,
        );
        by_key.entry(key).or_insert(record);
    }
    tasks
        .iter()
        .filter_map(|t| {
            let key = task_key(
                &ctx.cases[t.case_idx].case_id,
                &ctx.models[t.model_idx].name,
                t.condition,
                t.trial,
            );
            by_key.remove(&key)
        })
        .collect()
}
