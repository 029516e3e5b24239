//! Harness configuration: one JSON file, every field defaulted, CLI flags
//! win over file values. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP};
use crate::embedding::EmbeddingProviderConfig;
use crate::gateway::ModelConfig;
use crate::retrieval::RetrievalParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus_dir: PathBuf,
    pub cases_file: PathBuf,
    /// Optional: no table means shape normalization only.
    pub synonyms_file: Option<PathBuf>,
    pub templates_file: PathBuf,
    pub index_file: PathBuf,
    pub output_dir: PathBuf,
    /// Optional: no directory disables completion/embedding caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            cases_file: PathBuf::from("cases.json"),
            synonyms_file: Some(PathBuf::from("synonyms.json")),
            templates_file: PathBuf::from("templates.json"),
            index_file: PathBuf::from("guidelines.rgix"),
            output_dir: PathBuf::from("out"),
            cache_dir: Some(PathBuf::from("cache")),
        }
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&path);
    }
}

impl PathsConfig {
    fn resolve_relative_to(&mut self, base: &Path) {
        resolve(base, &mut self.corpus_dir);
        resolve(base, &mut self.cases_file);
        if let Some(p) = self.synonyms_file.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.templates_file);
        resolve(base, &mut self.index_file);
        resolve(base, &mut self.output_dir);
        if let Some(p) = self.cache_dir.as_mut() {
            resolve(base, p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

/// Full harness configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub paths: PathsConfig,
    pub chunking: ChunkingConfig,
    pub retrieval: RetrievalParams,
    pub models: Vec<ModelConfig>,
    pub judge: Option<ModelConfig>,
    pub embedding: EmbeddingProviderConfig,
    /// Condition labels (`rag+prediag` form); absent means all four.
    pub conditions: Option<Vec<String>>,
    pub parallelism: usize,
    pub trials: u32,
    /// Optional cross-encoder scoring service replacing the lexical
    /// re-ranker.
    pub reranker_endpoint: Option<String>,
    pub reranker_timeout_ms: u64,
    /// Wall-clock budget per task in milliseconds.
    pub task_timeout_ms: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            chunking: ChunkingConfig::default(),
            retrieval: RetrievalParams::default(),
            models: Vec::new(),
            judge: None,
            embedding: EmbeddingProviderConfig::deterministic_test(),
            conditions: None,
            parallelism: 4,
            trials: 1,
            reranker_endpoint: None,
            reranker_timeout_ms: 30_000,
            task_timeout_ms: crate::runner::DEFAULT_TASK_TIMEOUT_MS,
        }
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: HarnessConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
        if let Some(base) = path.parent() {
            config.paths.resolve_relative_to(base);
        }
        config.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chunking.overlap >= self.chunking.chunk_size {
            return Err(ConfigError::Validation(format!(
                "chunking.overlap {} must be smaller than chunk_size {}",
                self.chunking.overlap, self.chunking.chunk_size
            )));
        }
        if self.retrieval.k_retrieve == 0 || self.retrieval.m_keep == 0 {
            return Err(ConfigError::Validation(
                "retrieval.k_retrieve and retrieval.m_keep must be at least 1".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Validation(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.trials == 0 {
            return Err(ConfigError::Validation("trials must be at least 1".into()));
        }
        self.embedding
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        let mut names = std::collections::HashSet::new();
        for model in &self.models {
            if !names.insert(model.name.as_str()) {
                return Err(ConfigError::Validation(format!(
                    "duplicate model name {:?}",
                    model.name
                )));
            }
        }
        Ok(())
    }
}
