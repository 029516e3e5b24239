//! Command-line driver: `index | run | report | validate`.
//!
//! Values come from an optional JSON config file; flags win over file
//! values. Secrets are never read from the config — API keys come from
//! `<NAME>_API_KEY` environment variables only.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::config::{ChunkingConfig, HarnessConfig};
use crate::corpus::{chunk_document, load_cases, load_documents, GuidelineChunk, GuidelineDoc};
use crate::embedding::{provider_from_config, EmbeddingProvider, EmbeddingProviderConfig};
use crate::extraction::SynonymTable;
use crate::gateway::{
    demo_script, ChatBackend, Condition, HttpChatBackend, MockBackend, ModelClass, ModelConfig,
    RetryPolicy, TemplateSet,
};
use crate::metrics::aggregate;
use crate::report::{export, ragas_chart_data, read_records_ndjson, summary_table, ExportFormat};
use crate::retrieval::{HttpRerankScorer, LexicalOverlapScorer, RerankScorer};
use crate::runner::{
    compute_fingerprint, manifest_path, records_path, run, Cache, FingerprintInputs, JudgeSetup,
    RunnerContext,
};
use crate::vector_index::FlatIndex;

#[derive(Parser)]
#[command(
    name = "clinrag",
    about = "Evaluation harness for retrieval-augmented clinical decision support",
    version
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the guideline vector index from the corpus directory.
    Index(IndexArgs),
    /// Execute the cases × models × conditions matrix and write records.
    Run(RunArgs),
    /// Aggregate a records file into summary tables and chart data.
    Report(ReportArgs),
    /// Check that every configured artifact loads and validates.
    Validate,
}

#[derive(Args)]
pub struct IndexArgs {
    /// Corpus directory of .txt/.md guideline files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output index file.
    #[arg(long)]
    pub index_file: Option<PathBuf>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Use the deterministic test embedder instead of the HTTP service.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Args)]
pub struct RunArgs {
    /// Comma-separated model names (default: all configured models).
    #[arg(long)]
    pub models: Option<String>,
    /// Comma-separated condition tokens, e.g. `rag+prediag,norag+noprediag`.
    #[arg(long)]
    pub conditions: Option<String>,
    /// Passages retrieved per query (k_retrieve).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// Output directory for records.ndjson and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cases file override.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    /// Force every backend (models, judge, embedder) to deterministic mocks.
    #[arg(long)]
    pub mock: bool,
    /// Discard previous records/manifest in the output directory.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Records file (default: <output_dir>/records.ndjson).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Report output directory (default: the records file's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated formats: md, csv, json (default: all).
    #[arg(long)]
    pub formats: Option<String>,
}

pub async fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => HarnessConfig::load(path)?,
        None => HarnessConfig::default(),
    };
    match cli.command {
        Command::Index(args) => cmd_index(config, args).await,
        Command::Run(args) => cmd_run(config, args).await,
        Command::Report(args) => cmd_report(config, args),
        Command::Validate => cmd_validate(config),
    }
}

/// Fingerprint tying an index to the corpus, chunking and embedding config
/// it was built from.
pub fn index_fingerprint(
    docs: &[GuidelineDoc],
    chunking: ChunkingConfig,
    embedding: &EmbeddingProviderConfig,
) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for doc in docs {
        hasher.update(doc.doc_id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(doc.body.as_bytes());
        hasher.update([0x1e]);
    }
    hasher.update(serde_json::to_vec(&chunking).expect("serializable"));
    hasher.update(serde_json::to_vec(embedding).expect("serializable"));
    hasher.finalize().into()
}

fn effective_embedding(config: &HarnessConfig, mock: bool) -> EmbeddingProviderConfig {
    if mock {
        EmbeddingProviderConfig::deterministic_test()
    } else {
        config.embedding.clone()
    }
}

fn chunk_corpus(
    docs: &[GuidelineDoc],
    chunking: ChunkingConfig,
) -> anyhow::Result<Vec<GuidelineChunk>> {
    let mut chunks = Vec::new();
    for doc in docs {
        chunks.extend(chunk_document(doc, chunking.chunk_size, chunking.overlap)?);
    }
    Ok(chunks)
}

async fn cmd_index(config: HarnessConfig, args: IndexArgs) -> anyhow::Result<()> {
    let corpus_dir = args
        .corpus
        .unwrap_or_else(|| config.paths.corpus_dir.clone());
    let index_file = args
        .index_file
        .unwrap_or_else(|| config.paths.index_file.clone());
    let chunking = ChunkingConfig {
        chunk_size: args.chunk_size.unwrap_or(config.chunking.chunk_size),
        overlap: args.overlap.unwrap_or(config.chunking.overlap),
    };
    let embedding = effective_embedding(&config, args.mock);

    let docs = load_documents(&corpus_dir)
        .with_context(|| format!("loading corpus from {}", corpus_dir.display()))?;
    if docs.is_empty() {
        bail!(
            "empty corpus: no .txt/.md files in {}",
            corpus_dir.display()
        );
    }
    let chunks = chunk_corpus(&docs, chunking)?;
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();

    let provider = provider_from_config(&embedding)?;
    let vectors = provider
        .embed_batch(&texts)
        .await
        .context("embedding corpus chunks")?;

    let fingerprint = index_fingerprint(&docs, chunking, &embedding);
    let mut index = FlatIndex::new(fingerprint);
    for (chunk, vector) in chunks.iter().zip(&vectors) {
        index.add(&chunk.chunk_id, vector)?;
    }
    if let Some(parent) = index_file.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    index
        .save(&index_file)
        .with_context(|| format!("writing {}", index_file.display()))?;

    println!(
        "indexed {} chunks from {} documents",
        index.len(),
        docs.len()
    );
    println!("fingerprint {}", index.fingerprint_hex());
    println!("wrote {}", index_file.display());
    Ok(())
}

fn parse_conditions(spec: &str) -> anyhow::Result<Vec<Condition>> {
    let mut conditions = Vec::new();
    for token in spec.split(',') {
        let condition = Condition::parse(token)?;
        if !conditions.contains(&condition) {
            conditions.push(condition);
        }
    }
    if conditions.is_empty() {
        bail!("no conditions given");
    }
    Ok(conditions)
}

fn select_models(
    configured: &[ModelConfig],
    csv: Option<&str>,
) -> anyhow::Result<Vec<ModelConfig>> {
    match csv {
        None => Ok(configured.to_vec()),
        Some(csv) => {
            let mut selected = Vec::new();
            for name in csv.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let model = configured
                    .iter()
                    .find(|m| m.name == name)
                    .with_context(|| format!("model {name:?} is not configured"))?;
                selected.push(model.clone());
            }
            Ok(selected)
        }
    }
}

fn load_synonyms(config: &HarnessConfig) -> anyhow::Result<(SynonymTable, String)> {
    match &config.paths.synonyms_file {
        Some(path) if path.exists() => {
            let table = SynonymTable::load(path)?;
            let json = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Ok((table, json))
        }
        _ => Ok((SynonymTable::empty(), "{}".to_string())),
    }
}

async fn cmd_run(config: HarnessConfig, args: RunArgs) -> anyhow::Result<()> {
    let cases_file = args
        .cases
        .unwrap_or_else(|| config.paths.cases_file.clone());
    let out_dir = args.out.unwrap_or_else(|| config.paths.output_dir.clone());
    let trials = args.trials.unwrap_or(config.trials).max(1);
    let parallelism = args.parallelism.unwrap_or(config.parallelism).max(1);
    let mut retrieval = config.retrieval;
    if let Some(k) = args.k {
        retrieval.k_retrieve = k;
    }

    let cases = load_cases(&cases_file)
        .with_context(|| format!("loading cases from {}", cases_file.display()))?;
    let templates = TemplateSet::load(&config.paths.templates_file)?;
    let (synonyms, synonyms_json) = load_synonyms(&config)?;

    let conditions: Vec<Condition> = match args.conditions.as_deref() {
        Some(spec) => parse_conditions(spec)?,
        None => match &config.conditions {
            Some(labels) => parse_conditions(&labels.join(","))?,
            None => Condition::ALL.to_vec(),
        },
    };

    let models = select_models(&config.models, args.models.as_deref())?;
    if models.is_empty() {
        bail!("no models configured; add a models list to the config file");
    }

    let embedding = effective_embedding(&config, args.mock);
    let chunking = config.chunking;

    // Load the index (plus rebuilt chunk texts) whenever it exists: RAG
    // conditions need it for prompts, and faithfulness grades against the
    // same retrieved contexts in both arms.
    let any_rag = conditions.iter().any(|c| c.rag_enabled);
    let index_file = &config.paths.index_file;
    let (index, chunk_texts): (Option<FlatIndex>, Option<HashMap<String, String>>) = if index_file
        .exists()
    {
        let index = FlatIndex::load(index_file)
            .with_context(|| format!("loading index {}", index_file.display()))?;
        let docs = load_documents(&config.paths.corpus_dir)?;
        let expected = index_fingerprint(&docs, chunking, &embedding);
        if &expected != index.fingerprint() {
            bail!(
                "index {} is stale: fingerprint does not match the current corpus, \
                     chunking and embedding config — re-run `clinrag index`",
                index_file.display()
            );
        }
        let chunks = chunk_corpus(&docs, chunking)?;
        let texts: HashMap<String, String> =
            chunks.into_iter().map(|c| (c.chunk_id, c.text)).collect();
        (Some(index), Some(texts))
    } else if any_rag {
        bail!(
            "a RAG condition is planned but index {} does not exist — run `clinrag index` first",
            index_file.display()
        );
    } else {
        (None, None)
    };

    // Backends. --mock scripts every model and judge purpose from the cases.
    let model_names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
    let mock_judge_config = ModelConfig {
        name: "mock-judge".into(),
        endpoint: String::new(),
        model_id: "mock-judge".into(),
        temperature: 0.0,
        max_tokens: 512,
        timeout_ms: 1_000,
        max_retries: 0,
        class_label: ModelClass::Llm,
        seed: Some(0),
    };
    let backend: Box<dyn ChatBackend> = if args.mock {
        Box::new(MockBackend::new(demo_script(
            &cases,
            &model_names,
            &conditions,
        )))
    } else {
        Box::new(HttpChatBackend::new()?)
    };
    let judge_config: Option<&ModelConfig> = if args.mock {
        Some(&mock_judge_config)
    } else {
        config.judge.as_ref()
    };
    let judge = judge_config.map(|config| JudgeSetup {
        backend: backend.as_ref(),
        config,
    });

    let embedder: Box<dyn EmbeddingProvider> = provider_from_config(&embedding)?;

    // The lexical scorer is the offline default; a configured cross-encoder
    // endpoint replaces it (ignored under --mock).
    let scorer: Box<dyn RerankScorer> = match (&config.reranker_endpoint, args.mock) {
        (Some(endpoint), false) => Box::new(HttpRerankScorer::new(
            endpoint.clone(),
            config.reranker_timeout_ms,
        )?),
        _ => Box::new(LexicalOverlapScorer),
    };

    let cache = match &config.paths.cache_dir {
        Some(dir) => Some(Cache::open(dir)?),
        None => None,
    };

    let fingerprint = compute_fingerprint(&FingerprintInputs {
        cases: &cases,
        models: &models,
        conditions: &conditions,
        templates: &templates,
        synonyms_json: &synonyms_json,
        index_fingerprint: index.as_ref().map(|i| i.fingerprint()),
        retrieval,
        embedding: &embedding,
        trials,
    });

    if args.fresh {
        for stale in [records_path(&out_dir), manifest_path(&out_dir)] {
            if stale.exists() {
                std::fs::remove_file(&stale)
                    .with_context(|| format!("removing {}", stale.display()))?;
            }
        }
    }

    let ctx = RunnerContext {
        cases: &cases,
        models: &models,
        conditions: &conditions,
        trials,
        templates: &templates,
        synonyms: &synonyms,
        index: index.as_ref(),
        chunk_texts: chunk_texts.as_ref(),
        embedder: embedder.as_ref(),
        scorer: scorer.as_ref(),
        backend: backend.as_ref(),
        judge,
        retrieval,
        retry: if args.mock {
            RetryPolicy::immediate()
        } else {
            RetryPolicy::default()
        },
        parallelism,
        cache: cache.as_ref(),
        embedding_config: &embedding,
        task_timeout_ms: config.task_timeout_ms,
    };

    let outcome = run(&ctx, fingerprint, &out_dir).await?;
    let scored = outcome
        .records
        .iter()
        .filter(|r| r.status == crate::metrics::RecordStatus::Scored)
        .count();
    let errored = outcome.records.len() - scored;
    if outcome.resumed && outcome.executed == 0 {
        println!("run already complete; nothing to do");
    } else if outcome.resumed {
        println!("resumed: executed {} remaining tasks", outcome.executed);
    }
    println!(
        "{} records ({scored} scored, {errored} errored) -> {}",
        outcome.records.len(),
        records_path(&out_dir).display()
    );
    println!(
        "run {} fingerprint {}",
        outcome.manifest.run_id, outcome.manifest.fingerprint
    );
    Ok(())
}

fn cmd_report(config: HarnessConfig, args: ReportArgs) -> anyhow::Result<()> {
    let results = args
        .results
        .unwrap_or_else(|| records_path(&config.paths.output_dir));
    let out_dir = args.out.unwrap_or_else(|| {
        results
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let formats: Vec<ExportFormat> = match args.formats.as_deref() {
        None => ExportFormat::ALL.to_vec(),
        Some(csv) => csv
            .split(',')
            .map(ExportFormat::parse)
            .collect::<Result<_, _>>()?,
    };

    let records = read_records_ndjson(&results)?;
    let aggregates = aggregate(&records)?;
    let summary = summary_table(&aggregates);
    let chart = ragas_chart_data(&aggregates);

    let manifest_file = results.parent().map(manifest_path).filter(|p| p.exists());
    let manifest_json = match &manifest_file {
        Some(path) => Some(
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        ),
        None => None,
    };

    let written = export(
        &summary,
        &chart,
        &records,
        manifest_json.as_deref(),
        &out_dir,
        &formats,
    )?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_validate(config: HarnessConfig) -> anyhow::Result<()> {
    config.validate()?;
    println!("ok — config");

    let docs = load_documents(&config.paths.corpus_dir)
        .with_context(|| format!("corpus {}", config.paths.corpus_dir.display()))?;
    println!("ok — corpus: {} documents", docs.len());

    let cases = load_cases(&config.paths.cases_file)
        .with_context(|| format!("cases {}", config.paths.cases_file.display()))?;
    println!("ok — cases: {}", cases.len());

    let (synonyms, _) = load_synonyms(&config)?;
    println!("ok — synonyms: {} entries", synonyms.len());

    let templates = TemplateSet::load(&config.paths.templates_file)?;
    println!("ok — templates: version {}", templates.version);

    if config.paths.index_file.exists() {
        let index = FlatIndex::load(&config.paths.index_file)?;
        println!(
            "ok — index: {} entries, fingerprint {}",
            index.len(),
            index.fingerprint_hex()
        );
    } else {
        println!(
            "note — index not built yet ({})",
            config.paths.index_file.display()
        );
    }

    println!(
        "ok — {} models, judge {}",
        config.models.len(),
        if config.judge.is_some() {
            "configured"
        } else {
            "absent"
        }
    );
    Ok(())
}
