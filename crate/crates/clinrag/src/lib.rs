//! Evaluation harness for retrieval-augmented clinical decision support.
//!
//! `clinrag` runs standardized patient cases through configurable
//! chat-completion backends under a 2×2 condition matrix (retrieval on/off ×
//! pre-diagnosis on/off) and scores the structured diagnosis/treatment output
//! with set-based F1 and RAGAS-style quality metrics (faithfulness, answer
//! relevance).
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] — load guideline documents and patient cases, split
//!    documents into overlapping character chunks.
//! 2. [`embedding`] — turn chunk and query text into 768-dimensional vectors
//!    via a pluggable provider (HTTP service or a deterministic test
//!    embedder).
//! 3. [`vector_index`] — exact flat L2 nearest-neighbor index with binary
//!    persistence.
//! 4. [`retrieval`] — query building, kNN search, passage re-ranking, and
//!    budgeted context assembly.
//! 5. [`gateway`] — prompt assembly from a versioned template set and
//!    dispatch to OpenAI-compatible chat backends (with retries) or to
//!    deterministic mocks.
//! 6. [`extraction`] — parse the structured `DIAGNOSES:`/`TREATMENTS:` answer
//!    block and normalize terms against a synonym table.
//! 7. [`metrics`] — F1 over term sets, judge-based faithfulness and answer
//!    relevance, per-cell aggregation.
//! 8. [`runner`] — the full cases × models × conditions matrix with caching,
//!    crash-safe resume, and bounded provider parallelism.
//! 9. [`report`] — top-score summary tables and grouped chart data, exported
//!    as Markdown/CSV/JSON.
//!
//! The `clinrag` binary (see [`cli`]) ties these together behind
//! `index | run | report | validate` subcommands.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod extraction;
pub mod gateway;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod runner;
pub mod vector_index;

pub use config::HarnessConfig;
pub use corpus::{GuidelineChunk, GuidelineDoc, PatientCase};
pub use embedding::{EmbeddingProvider, EmbeddingVector, EMBEDDING_DIM};
pub use gateway::{ChatBackend, Condition, ModelConfig, Prompt};
pub use metrics::{Prf, RagasComponents, ScoreRecord};
pub use retrieval::ContextBundle;
pub use vector_index::{FlatIndex, SearchHit};
