//! Prompt assembly and chat-completion dispatch.
//!
//! One OpenAI-compatible HTTP client serves every configured backend;
//! providers with different native APIs are reached through compatible
//! gateways. A scripted mock backend provides deterministic, zero-latency
//! responses for tests and offline runs.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::PatientCase;
use crate::extraction::{render_answer_block, TermSet};
use crate::retrieval::ContextBundle;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("context bundle present={context_present} but rag_enabled={rag_enabled}")]
    ContextMismatch {
        rag_enabled: bool,
        context_present: bool,
    },
    #[error("case {0:?} has no pre_diagnosis but the condition requires one")]
    MissingPreDiagnosis(String),
    #[error("template set: {0}")]
    Template(String),
    #[error("unknown condition token {0:?}")]
    BadConditionToken(String),
    #[error("transient backend failure{}: {message}", fmt_status(.status))]
    Transient {
        status: Option<u16>,
        message: String,
    },
    #[error("backend failure{}: {message}", fmt_status(.status))]
    Fatal {
        status: Option<u16>,
        message: String,
    },
    #[error("no scripted response for {0}")]
    MissingScriptEntry(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
}

fn fmt_status(status: &Option<u16>) -> String {
    match status {
        Some(s) => format!(" (status {s})"),
        None => String::new(),
    }
}

impl GatewayError {
    /// Retryable: rate limits, server errors, timeouts, connection failures.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transient { .. })
    }
}

/// One cell of the 2×2 experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub rag_enabled: bool,
    pub prediagnosis_provided: bool,
}

impl Condition {
    /// All four conditions, ordered by increasing assistance.
    pub const ALL: [Condition; 4] = [
        Condition {
            rag_enabled: false,
            prediagnosis_provided: false,
        },
        Condition {
            rag_enabled: true,
            prediagnosis_provided: false,
        },
        Condition {
            rag_enabled: false,
            prediagnosis_provided: true,
        },
        Condition {
            rag_enabled: true,
            prediagnosis_provided: true,
        },
    ];

    /// Parse a CLI token such as `rag+prediag` or `noprediag+norag`.
    pub fn parse(token: &str) -> Result<Self, GatewayError> {
        let mut rag: Option<bool> = None;
        let mut prediag: Option<bool> = None;
        for part in token.split('+') {
            match part.trim() {
                "rag" => rag = Some(true),
                "norag" => rag = Some(false),
                "prediag" => prediag = Some(true),
                "noprediag" => prediag = Some(false),
                _ => return Err(GatewayError::BadConditionToken(token.to_string())),
            }
        }
        match (rag, prediag) {
            (Some(rag_enabled), Some(prediagnosis_provided)) => Ok(Condition {
                rag_enabled,
                prediagnosis_provided,
            }),
            _ => Err(GatewayError::BadConditionToken(token.to_string())),
        }
    }

    /// CLI token form, e.g. `rag+noprediag`.
    pub fn label(&self) -> String {
        format!(
            "{}+{}",
            if self.rag_enabled { "rag" } else { "norag" },
            if self.prediagnosis_provided {
                "prediag"
            } else {
                "noprediag"
            },
        )
    }

    /// Human/report form matching the published table, e.g.
    /// `RAG, No Pre-Diagnosis`.
    pub fn configuration(&self) -> &'static str {
        match (self.rag_enabled, self.prediagnosis_provided) {
            (false, false) => "No RAG, No Pre-Diagnosis",
            (true, false) => "RAG, No Pre-Diagnosis",
            (false, true) => "No RAG, With Pre-Diagnosis",
            (true, true) => "RAG, With Pre-Diagnosis",
        }
    }

    /// Position in [`Condition::ALL`]: lower means less assistance. Used as
    /// the deterministic tie-break when selecting top scores.
    pub fn assistance_rank(&self) -> usize {
        Condition::ALL.iter().position(|c| c == self).unwrap()
    }
}

/// Paper-style size taxonomy: SLM below 100B parameters, LLM above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelClass {
    #[serde(rename = "SLM")]
    Slm,
    #[serde(rename = "LLM")]
    Llm,
}

impl std::fmt::Display for ModelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelClass::Slm => "SLM",
            ModelClass::Llm => "LLM",
        })
    }
}

/// One chat-completion backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Display name; also selects the `<NAME>_API_KEY` environment variable.
    pub name: String,
    pub endpoint: String,
    pub model_id: String,
    /// Fixed to 0 by default for reproducibility.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    pub class_label: ModelClass,
    /// Sampling seed, sent to providers that support one.
    #[serde(default = "default_seed")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_seed() -> Option<u64> {
    Some(0)
}

/// Environment variable holding the API key for a model config name:
/// non-alphanumeric characters become `_`, uppercased, plus `_API_KEY`.
pub fn api_key_env_var(name: &str) -> String {
    let mut var: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    var.push_str("_API_KEY");
    var
}

/// A worked input/output pair embedded in the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: String,
}

/// Versioned prompt templates, shared by every model. Judge prompts live in
/// the same file so a template version pins the whole evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub system: String,
    /// Must contain `{case}`, `{context}` and `{prediagnosis}` placeholders.
    pub user_skeleton: String,
    #[serde(default)]
    pub few_shot: Vec<FewShotExample>,
    #[serde(default = "default_judge_system")]
    pub judge_system: String,
    pub judge_claims: String,
    pub judge_verdicts: String,
    pub judge_gen_questions: String,
}

fn default_judge_system() -> String {
    "You are a careful clinical evaluation assistant. Answer exactly in the requested format."
        .to_string()
}

impl TemplateSet {
    pub fn load(path: &std::path::Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Template(format!("cannot read {}: {e}", path.display())))?;
        let set: TemplateSet = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        for placeholder in ["{case}", "{context}", "{prediagnosis}"] {
            if !self.user_skeleton.contains(placeholder) {
                return Err(GatewayError::Template(format!(
                    "user_skeleton is missing the {placeholder} placeholder"
                )));
            }
        }
        if !self.judge_claims.contains("{answer}") {
            return Err(GatewayError::Template(
                "judge_claims is missing the {answer} placeholder".into(),
            ));
        }
        for placeholder in ["{claims}", "{contexts}"] {
            if !self.judge_verdicts.contains(placeholder) {
                return Err(GatewayError::Template(format!(
                    "judge_verdicts is missing the {placeholder} placeholder"
                )));
            }
        }
        if !self.judge_gen_questions.contains("{answer}") {
            return Err(GatewayError::Template(
                "judge_gen_questions is missing the {answer} placeholder".into(),
            ));
        }
        Ok(())
    }
}

/// A fully rendered prompt. Identical for every model at a fixed
/// (case, condition, template version).
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    pub few_shot: Vec<FewShotExample>,
    /// SHA-256 of (template version, system, user); stable across runs.
    pub content_hash: String,
}

fn prompt_hash(version: &str, system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(version.as_bytes());
    hasher.update([0x1f]);
    hasher.update(system.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user.as_bytes());
    hex::encode(hasher.finalize())
}

/// Render retrieved passages into the context block inserted at `{context}`.
pub fn render_context_block(bundle: &ContextBundle) -> String {
    let mut block = String::from("Relevant guideline excerpts:\n");
    for (i, (chunk_id, text)) in bundle.passages.iter().enumerate() {
        block.push_str(&format!("[{}] ({chunk_id})\n{text}\n", i + 1));
    }
    block
}

/// Render the pre-diagnosis block inserted at `{prediagnosis}`.
pub fn render_prediagnosis_block(pre_diagnosis: &str) -> String {
    format!("Working diagnosis provided by the referring physician: {pre_diagnosis}\n")
}

fn render_few_shot(examples: &[FewShotExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut block = String::from("Worked examples:\n");
    for example in examples {
        block.push_str("Example input:\n");
        block.push_str(&example.input);
        block.push_str("\nExample output:\n");
        block.push_str(&example.output);
        block.push('\n');
    }
    block.push('\n');
    block
}

/// Assemble the condition-specific prompt for a case.
///
/// `context` must be present exactly when `condition.rag_enabled`. The four
/// condition prompts for a case differ only in the presence of the context
/// block and the pre-diagnosis block.
pub fn build_prompt(
    case: &PatientCase,
    condition: Condition,
    context: Option<&ContextBundle>,
    templates: &TemplateSet,
) -> Result<Prompt, GatewayError> {
    if condition.rag_enabled != context.is_some() {
        return Err(GatewayError::ContextMismatch {
            rag_enabled: condition.rag_enabled,
            context_present: context.is_some(),
        });
    }
    let context_block = context.map(render_context_block).unwrap_or_default();
    let prediag_block = if condition.prediagnosis_provided {
        let pre = case
            .pre_diagnosis
            .as_deref()
            .ok_or_else(|| GatewayError::MissingPreDiagnosis(case.case_id.clone()))?;
        render_prediagnosis_block(pre)
    } else {
        String::new()
    };

    let body = templates
        .user_skeleton
        .replace("{case}", &case.narrative())
        .replace("{context}", &context_block)
        .replace("{prediagnosis}", &prediag_block);
    let user = format!("{}{}", render_few_shot(&templates.few_shot), body);
    let content_hash = prompt_hash(&templates.version, &templates.system, &user);

    Ok(Prompt {
        system: templates.system.clone(),
        user,
        few_shot: templates.few_shot.clone(),
        content_hash,
    })
}

/// Prompt asking the judge to decompose an answer into atomic claims.
pub fn build_judge_claims_prompt(templates: &TemplateSet, answer: &str) -> Prompt {
    let user = templates.judge_claims.replace("{answer}", answer);
    let content_hash = prompt_hash(&templates.version, &templates.judge_system, &user);
    Prompt {
        system: templates.judge_system.clone(),
        user,
        few_shot: Vec::new(),
        content_hash,
    }
}

/// Prompt asking the judge for one SUPPORTED/UNSUPPORTED verdict per claim.
pub fn build_judge_verdicts_prompt(
    templates: &TemplateSet,
    claims: &[String],
    contexts: &[String],
) -> Prompt {
    let claims_block: String = claims
        .iter()
        .enumerate()
        .map(|(i, c)| format!("CLAIM {}: {c}\n", i + 1))
        .collect();
    let contexts_block: String = contexts
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {c}\n", i + 1))
        .collect();
    let user = templates
        .judge_verdicts
        .replace("{claims}", &claims_block)
        .replace("{contexts}", &contexts_block);
    let content_hash = prompt_hash(&templates.version, &templates.judge_system, &user);
    Prompt {
        system: templates.judge_system.clone(),
        user,
        few_shot: Vec::new(),
        content_hash,
    }
}

/// Prompt asking the judge to regenerate questions the answer would answer.
pub fn build_judge_questions_prompt(templates: &TemplateSet, answer: &str, n: usize) -> Prompt {
    let user = templates
        .judge_gen_questions
        .replace("{answer}", answer)
        .replace("{n}", &n.to_string());
    let content_hash = prompt_hash(&templates.version, &templates.judge_system, &user);
    Prompt {
        system: templates.judge_system.clone(),
        user,
        few_shot: Vec::new(),
        content_hash,
    }
}

/// Why a completion finished.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other(String),
}

impl FinishReason {
    fn from_wire(s: Option<String>) -> Self {
        match s.as_deref() {
            None | Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(other) => FinishReason::Other(other.to_string()),
        }
    }
}

/// Raw backend output before retry accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// What a chat call is for. Mock scripts and cache keys are
/// purpose-qualified so answer and judge traffic never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Answer,
    JudgeClaims,
    JudgeVerdicts,
    JudgeQuestions,
}

impl CallPurpose {
    pub fn as_str(&self) -> &'static str {
        match self {
            CallPurpose::Answer => "answer",
            CallPurpose::JudgeClaims => "judge_claims",
            CallPurpose::JudgeVerdicts => "judge_verdicts",
            CallPurpose::JudgeQuestions => "judge_questions",
        }
    }
}

/// Task routing metadata carried with every chat call. `model_name` is the
/// evaluated model the call belongs to, also for judge calls on its behalf.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallMeta {
    pub case_id: String,
    pub model_name: String,
    pub condition: Condition,
    pub purpose: CallPurpose,
}

impl CallMeta {
    pub fn describe(&self) -> String {
        format!(
            "case={} model={} condition={} purpose={}",
            self.case_id,
            self.model_name,
            self.condition.label(),
            self.purpose.as_str()
        )
    }
}

/// A chat-completion backend.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn chat(
        &self,
        config: &ModelConfig,
        prompt: &Prompt,
        meta: &CallMeta,
    ) -> Result<RawCompletion, GatewayError>;
}

/// Completion with provenance and retry accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAnswer {
    pub raw_text: String,
    pub model: String,
    pub condition: Condition,
    pub case_id: String,
    pub latency_ms: u64,
    pub prompt_hash: String,
    pub finish_reason: FinishReason,
    pub attempts: u32,
}

/// Backoff schedule for transient failures; the retry budget itself comes
/// from [`ModelConfig::max_retries`].
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff_base_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// Zero backoff, for tests and mock runs.
    pub fn immediate() -> Self {
        Self { backoff_base_ms: 0 }
    }

    fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(8)))
    }
}

/// Send a prompt, retrying transient failures with exponential backoff.
/// Makes at most `1 + config.max_retries` attempts.
pub async fn complete(
    backend: &dyn ChatBackend,
    config: &ModelConfig,
    prompt: &Prompt,
    meta: &CallMeta,
    policy: RetryPolicy,
) -> Result<ModelAnswer, GatewayError> {
    let started = Instant::now();
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match backend.chat(config, prompt, meta).await {
            Ok(raw) => {
                if raw.text.is_empty() {
                    return Err(GatewayError::Fatal {
                        status: None,
                        message: "backend returned an empty completion".into(),
                    });
                }
                return Ok(ModelAnswer {
                    raw_text: raw.text,
                    model: config.name.clone(),
                    condition: meta.condition,
                    case_id: meta.case_id.clone(),
                    latency_ms: started.elapsed().as_millis() as u64,
                    prompt_hash: prompt.content_hash.clone(),
                    finish_reason: raw.finish_reason,
                    attempts,
                });
            }
            Err(e) if e.is_transient() && attempts <= config.max_retries => {
                tokio::time::sleep(policy.delay(attempts - 1)).await;
            }
            Err(e) if e.is_transient() => {
                return Err(GatewayError::ExhaustedRetries {
                    attempts,
                    last: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Serialize)]
struct ChatWireRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    messages: [ChatWireMessage<'a>; 2],
}

#[derive(Serialize)]
struct ChatWireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatWireResponse {
    choices: Vec<ChatWireChoice>,
}

#[derive(Deserialize)]
struct ChatWireChoice {
    message: ChatWireContent,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatWireContent {
    content: Option<String>,
}

/// OpenAI-compatible chat-completions client. The API key, if any, is read
/// from the environment variable named by [`api_key_env_var`].
pub struct HttpChatBackend {
    client: reqwest::Client,
}

impl HttpChatBackend {
    pub fn new() -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Fatal {
                status: None,
                message: format!("cannot build http client: {e}"),
            })?;
        Ok(Self { client })
    }
}

#[async_trait]
impl ChatBackend for HttpChatBackend {
    async fn chat(
        &self,
        config: &ModelConfig,
        prompt: &Prompt,
        _meta: &CallMeta,
    ) -> Result<RawCompletion, GatewayError> {
        let request = ChatWireRequest {
            model: &config.model_id,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            seed: config.seed,
            messages: [
                ChatWireMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatWireMessage {
                    role: "user",
                    content: &prompt.user,
                },
            ],
        };
        let mut builder = self
            .client
            .post(&config.endpoint)
            .timeout(Duration::from_millis(config.timeout_ms))
            .json(&request);
        if let Ok(key) = std::env::var(api_key_env_var(&config.name)) {
            builder = builder.bearer_auth(key);
        }

        let response = builder.send().await.map_err(|e| {
            // Timeouts and connection failures are retryable.
            GatewayError::Transient {
                status: None,
                message: e.to_string(),
            }
        })?;

        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(GatewayError::Fatal {
                    status: Some(status),
                    message: "authentication failed".into(),
                })
            }
            429 | 500..=599 | 408 => {
                return Err(GatewayError::Transient {
                    status: Some(status),
                    message: "backend unavailable".into(),
                })
            }
            _ => {
                return Err(GatewayError::Fatal {
                    status: Some(status),
                    message: "request rejected".into(),
                })
            }
        }

        let body: ChatWireResponse = response.json().await.map_err(|e| GatewayError::Fatal {
            status: None,
            message: format!("malformed response body: {e}"),
        })?;
        let choice = body.choices.into_iter().next().ok_or(GatewayError::Fatal {
            status: None,
            message: "response contains no choices".into(),
        })?;
        let text = choice.message.content.unwrap_or_default();
        Ok(RawCompletion {
            text,
            finish_reason: FinishReason::from_wire(choice.finish_reason),
        })
    }
}

/// Script key for the mock backend: one canned response per
/// (case, model, condition, purpose).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScriptKey {
    pub case_id: String,
    pub model_name: String,
    pub condition: Condition,
    pub purpose: CallPurpose,
}

pub type MockScript = HashMap<ScriptKey, String>;

/// Deterministic test double: canned text per script key, zero latency,
/// per-purpose call counting. Unknown keys are an error naming the key.
pub struct MockBackend {
    script: MockScript,
    calls: Mutex<HashMap<CallPurpose, usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            calls: Mutex::new(HashMap::new()),
        }
    }

    /// Build from answer-only scripts keyed by (case_id, model, condition).
    pub fn from_answers(answers: HashMap<(String, String, Condition), String>) -> Self {
        let script = answers
            .into_iter()
            .map(|((case_id, model_name, condition), text)| {
                (
                    ScriptKey {
                        case_id,
                        model_name,
                        condition,
                        purpose: CallPurpose::Answer,
                    },
                    text,
                )
            })
            .collect();
        Self::new(script)
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().values().sum()
    }

    pub fn calls_for(&self, purpose: CallPurpose) -> usize {
        *self.calls.lock().unwrap().get(&purpose).unwrap_or(&0)
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn chat(
        &self,
        _config: &ModelConfig,
        _prompt: &Prompt,
        meta: &CallMeta,
    ) -> Result<RawCompletion, GatewayError> {
        *self.calls.lock().unwrap().entry(meta.purpose).or_insert(0) += 1;
        let key = ScriptKey {
            case_id: meta.case_id.clone(),
            model_name: meta.model_name.clone(),
            condition: meta.condition,
            purpose: meta.purpose,
        };
        match self.script.get(&key) {
            Some(text) => Ok(RawCompletion {
                text: text.clone(),
                finish_reason: FinishReason::Stop,
            }),
            None => Err(GatewayError::MissingScriptEntry(meta.describe())),
        }
    }
}

const DISTRACTOR_DIAGNOSES: &[&str] = &[
    "fibromyalgia",
    "osteoarthritis",
    "viral arthritis",
    "parvovirus infection",
];

const DISTRACTOR_TREATMENTS: &[&str] = &[
    "paracetamol",
    "acupuncture",
    "vitamin d supplementation",
    "bed rest",
];

fn demo_rng(parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

fn pick_percent(rng: &mut ChaCha8Rng) -> u32 {
    rng.next_u32() % 100
}

/// Build a deterministic full mock script for `--mock` runs and tests.
///
/// Answers embed a seeded subset of each case's gold terms (plus an
/// occasional distractor), so F1 and RAGAS vary by case, model and condition
/// while remaining bit-reproducible. Judge claims, verdicts and regenerated
/// questions are seeded from the same key.
pub fn demo_script(
    cases: &[PatientCase],
    model_names: &[String],
    conditions: &[Condition],
) -> MockScript {
    let mut script = MockScript::new();
    for case in cases {
        for model in model_names {
            for condition in conditions {
                let label = condition.label();
                let mut rng = demo_rng(&[&case.case_id, model, &label]);

                // RAG and a provided pre-diagnosis both make the mock more
                // likely to reproduce the gold terms.
                let dx_keep = if condition.prediagnosis_provided {
                    90
                } else if condition.rag_enabled {
                    80
                } else {
                    60
                };
                let tx_keep = if condition.rag_enabled { 80 } else { 55 };

                let dx: Vec<&str> = case
                    .gold_diagnoses
                    .iter()
                    .filter(|_| pick_percent(&mut rng) < dx_keep)
                    .map(|s| s.as_str())
                    .collect();
                let tx: Vec<&str> = case
                    .gold_treatments
                    .iter()
                    .filter(|_| pick_percent(&mut rng) < tx_keep)
                    .map(|s| s.as_str())
                    .collect();
                let mut dx: Vec<String> = dx.iter().map(|s| s.to_string()).collect();
                let mut tx: Vec<String> = tx.iter().map(|s| s.to_string()).collect();
                if pick_percent(&mut rng) < 25 {
                    let pick = rng.next_u32() as usize % DISTRACTOR_DIAGNOSES.len();
                    dx.push(DISTRACTOR_DIAGNOSES[pick].to_string());
                }
                if pick_percent(&mut rng) < 30 {
                    let pick = rng.next_u32() as usize % DISTRACTOR_TREATMENTS.len();
                    tx.push(DISTRACTOR_TREATMENTS[pick].to_string());
                }

                let dx_set = TermSet::from_canonical(&dx);
                let tx_set = TermSet::from_canonical(&tx);
                let answer = format!(
                    "Working through the findings step by step, the pattern of symptoms, labs and course points to the assessment below.\n\n{}",
                    render_answer_block(&dx_set, &tx_set)
                );

                let claims: Vec<String> = dx_set
                    .iter()
                    .map(|d| format!("the diagnosis {d} fits the presentation"))
                    .chain(
                        tx_set
                            .iter()
                            .map(|t| format!("{t} is an appropriate treatment")),
                    )
                    .collect();
                // No bullets parses as zero claims (vacuously faithful); the
                // text must still be non-empty to count as a completion.
                let claims_text: String = if claims.is_empty() {
                    "no factual claims found\n".to_string()
                } else {
                    claims.iter().map(|c| format!("- {c}\n")).collect()
                };

                let supported_rate = if condition.rag_enabled { 85 } else { 65 };
                let verdicts_text: String = if claims.is_empty() {
                    "none\n".to_string()
                } else {
                    claims
                        .iter()
                        .enumerate()
                        .map(|(i, _)| {
                            let verdict = if pick_percent(&mut rng) < supported_rate {
                                "SUPPORTED"
                            } else {
                                "UNSUPPORTED"
                            };
                            format!("{}. {verdict}\n", i + 1)
                        })
                        .collect()
                };

                let questions_text = format!(
                    "- What is the most likely diagnosis given this presentation?\n- Which treatment should be started for case {}?\n- How should the current therapy be adjusted?\n",
                    case.case_id
                );

                let mut insert = |purpose, text: String| {
                    script.insert(
                        ScriptKey {
                            case_id: case.case_id.clone(),
                            model_name: model.clone(),
                            condition: *condition,
                            purpose,
                        },
                        text,
                    );
                };
                insert(CallPurpose::Answer, answer);
                insert(CallPurpose::JudgeClaims, claims_text);
                insert(CallPurpose::JudgeVerdicts, verdicts_text);
                insert(CallPurpose::JudgeQuestions, questions_text);
            }
        }
    }
    script
}
