//! Summary tables, chart data and machine-readable exports.
//!
//! The summary table mirrors the published shape: one row per (model,
//! metric) at that model's best condition, with integer percentages.
//! Charts are emitted as data (CSV/JSON), not rendered images, so any
//! plotting front-end can consume them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Condition, ModelClass};
use crate::metrics::{Aggregates, Metric, ScoreRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no formats requested")]
    NoFormats,
    #[error("unknown export format {0:?} (expected md, csv or json)")]
    UnknownFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no records in {0}")]
    NoRecordsInFile(PathBuf),
}

/// Convention note surfaced in every report: in no-RAG conditions
/// faithfulness is graded against reference contexts retrieved post-hoc.
pub const RAGAS_CONVENTION_NOTE: &str = "RAGAS faithfulness in no-RAG conditions is graded \
against reference contexts retrieved post-hoc by the same retrieval pipeline; the model under \
test never saw them. RAGAS is the arithmetic mean of faithfulness and answer relevance.";

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub model_class: Option<ModelClass>,
    pub configuration: String,
    pub metric: Metric,
    /// `round(100 × score)`, half-up.
    pub top_percent: u32,
    pub raw_score: f64,
    pub assessment: String,
}

/// Table-shaped summary: per (model, metric), the best condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

/// RAGAS percentages per condition for one model, in [`Condition::ALL`]
/// order. `None` marks a condition with no scored records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChart {
    pub model: String,
    pub bars: [Option<f64>; 4],
    /// (min, max) over the present bars, as rounded percentages.
    pub range: Option<(u32, u32)>,
}

/// Grouped chart data for all models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub models: Vec<ModelChart>,
}

fn percent(score: f64) -> u32 {
    (score * 100.0).round().clamp(0.0, 100.0) as u32
}

/// Select, for each model and metric, the condition with the maximum mean
/// score; ties go to the least-assisted condition. Row order: metric, then
/// model name.
pub fn summary_table(aggregates: &Aggregates) -> SummaryTable {
    let rows = aggregates
        .top_scores()
        .into_iter()
        .map(|top| {
            let configuration = top.condition.configuration().to_string();
            let assessment = format!("Top {} at {}", top.metric, configuration);
            SummaryRow {
                model: top.model,
                model_class: top.model_class,
                configuration,
                metric: top.metric,
                top_percent: percent(top.score),
                raw_score: top.score,
                assessment,
            }
        })
        .collect();
    SummaryTable { rows }
}

/// Per-model RAGAS bars across the four conditions, plus each model's
/// (min, max) range.
pub fn ragas_chart_data(aggregates: &Aggregates) -> ChartData {
    let mut models: Vec<String> = aggregates.cells.iter().map(|c| c.model.clone()).collect();
    models.sort();
    models.dedup();

    let charts = models
        .into_iter()
        .map(|model| {
            let mut bars: [Option<f64>; 4] = [None; 4];
            for cell in aggregates.cells.iter().filter(|c| c.model == model) {
                bars[cell.condition.assistance_rank()] = cell.mean_ragas.map(|m| m * 100.0);
            }
            let present: Vec<u32> = bars
                .iter()
                .flatten()
                .map(|p| (*p).round().clamp(0.0, 100.0) as u32)
                .collect();
            let range = present
                .iter()
                .min()
                .zip(present.iter().max())
                .map(|(lo, hi)| (*lo, *hi));
            ModelChart { model, bars, range }
        })
        .collect();
    ChartData { models: charts }
}

/// Requested export renderings. Records and the manifest are copied
/// alongside whichever formats are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Markdown,
    Csv,
    Json,
}

impl ExportFormat {
    pub fn parse(token: &str) -> Result<Self, ReportError> {
        match token.trim().to_lowercase().as_str() {
            "md" | "markdown" => Ok(ExportFormat::Markdown),
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }

    pub const ALL: [ExportFormat; 3] = [
        ExportFormat::Markdown,
        ExportFormat::Csv,
        ExportFormat::Json,
    ];
}

fn class_str(class: Option<ModelClass>) -> String {
    class.map(|c| c.to_string()).unwrap_or_default()
}

/// Markdown rendering of the summary table, headers matching the published
/// table: Model, Model Size, Configuration, Metric, Top Score (%),
/// Evaluation Assessment.
pub fn render_summary_markdown(summary: &SummaryTable) -> String {
    let mut out = String::from("# Top F1 and RAGAS scores\n\n");
    out.push_str(
        "| Model | Model Size | Configuration | Metric | Top Score (%) | Evaluation Assessment |\n",
    );
    out.push_str("| --- | --- | --- | --- | --- | --- |\n");
    for row in &summary.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            row.model,
            class_str(row.model_class),
            row.configuration,
            row.metric,
            row.top_percent,
            row.assessment
        ));
    }
    out.push_str("\nNote: ");
    out.push_str(RAGAS_CONVENTION_NOTE);
    out.push('\n');
    out
}

fn render_summary_csv(summary: &SummaryTable) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| ReportError::Io {
        path: PathBuf::from("summary.csv"),
        source: std::io::Error::other(e),
    };
    writer
        .write_record([
            "Model",
            "Model Size",
            "Configuration",
            "Metric",
            "Top Score (%)",
            "Evaluation Assessment",
        ])
        .map_err(io_err)?;
    for row in &summary.rows {
        writer
            .write_record([
                row.model.as_str(),
                &class_str(row.model_class),
                &row.configuration,
                &row.metric.to_string(),
                &row.top_percent.to_string(),
                &row.assessment,
            ])
            .map_err(io_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("summary.csv"),
        source: std::io::Error::other(e),
    })?;
    String::from_utf8(bytes).map_err(|e| ReportError::Io {
        path: PathBuf::from("summary.csv"),
        source: std::io::Error::other(e),
    })
}

fn render_chart_csv(chart: &ChartData) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io_err = |e: csv::Error| ReportError::Io {
        path: PathBuf::from("ragas_by_condition.csv"),
        source: std::io::Error::other(e),
    };
    writer
        .write_record([
            "model",
            "configuration",
            "ragas_percent",
            "range_min",
            "range_max",
        ])
        .map_err(io_err)?;
    for model in &chart.models {
        for (rank, bar) in model.bars.iter().enumerate() {
            let value = bar.map(|v| format!("{v:.1}")).unwrap_or_default();
            let (lo, hi) = match model.range {
                Some((lo, hi)) => (lo.to_string(), hi.to_string()),
                None => (String::new(), String::new()),
            };
            writer
                .write_record([
                    model.model.as_str(),
                    Condition::ALL[rank].configuration(),
                    &value,
                    &lo,
                    &hi,
                ])
                .map_err(io_err)?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| ReportError::Io {
        path: PathBuf::from("ragas_by_condition.csv"),
        source: std::io::Error::other(e),
    })?;
    String::from_utf8(bytes).map_err(|e| ReportError::Io {
        path: PathBuf::from("ragas_by_condition.csv"),
        source: std::io::Error::other(e),
    })
}

#[derive(Serialize)]
struct JsonExport<'a> {
    note: &'static str,
    summary: &'a [SummaryRow],
    ragas_by_condition: &'a [ModelChart],
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write report files into `out_dir`. Byte-deterministic for identical
/// inputs. Returns the paths written.
pub fn export(
    summary: &SummaryTable,
    chart: &ChartData,
    records: &[ScoreRecord],
    manifest_json: Option<&str>,
    out_dir: &Path,
    formats: &[ExportFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    if formats.is_empty() {
        return Err(ReportError::NoFormats);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut written = Vec::new();
    for format in formats {
        match format {
            ExportFormat::Markdown => {
                written.push(write_file(
                    out_dir,
                    "summary.md",
                    &render_summary_markdown(summary),
                )?);
            }
            ExportFormat::Csv => {
                written.push(write_file(
                    out_dir,
                    "summary.csv",
                    &render_summary_csv(summary)?,
                )?);
                written.push(write_file(
                    out_dir,
                    "ragas_by_condition.csv",
                    &render_chart_csv(chart)?,
                )?);
            }
            ExportFormat::Json => {
                let payload = JsonExport {
                    note: RAGAS_CONVENTION_NOTE,
                    summary: &summary.rows,
                    ragas_by_condition: &chart.models,
                };
                let mut text = serde_json::to_string_pretty(&payload).expect("serializable");
                text.push('\n');
                written.push(write_file(out_dir, "summary.json", &text)?);
            }
        }
    }

    let mut ndjson = String::new();
    for record in records {
        ndjson.push_str(&serde_json::to_string(record).expect("serializable"));
        ndjson.push('\n');
    }
    written.push(write_file(out_dir, "records.ndjson", &ndjson)?);

    if let Some(manifest) = manifest_json {
        written.push(write_file(out_dir, "manifest.json", manifest)?);
    }
    Ok(written)
}

/// Read a newline-delimited record file, reporting the line number of the
/// first malformed line.
pub fn read_records_ndjson(path: &Path) -> Result<Vec<ScoreRecord>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord =
            serde_json::from_str(line).map_err(|e| ReportError::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(ReportError::NoRecordsInFile(path.to_path_buf()));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AggregateCell;

    fn cell(
        model: &str,
        class: ModelClass,
        condition: Condition,
        f1_dx: Option<f64>,
        f1_tx: Option<f64>,
        ragas: Option<f64>,
    ) -> AggregateCell {
        AggregateCell {
            model: model.into(),
            model_class: Some(class),
            condition,
            scored: 10,
            errored: 0,
            mean_f1_dx: f1_dx,
            mean_f1_tx: f1_tx,
            mean_ragas: ragas,
        }
    }

    const RAG_NOPRE: Condition = Condition {
        rag_enabled: true,
        prediagnosis_provided: false,
    };
    const NORAG_NOPRE: Condition = Condition {
        rag_enabled: false,
        prediagnosis_provided: false,
    };
    const RAG_PRE: Condition = Condition {
        rag_enabled: true,
        prediagnosis_provided: true,
    };
    const NORAG_PRE: Condition = Condition {
        rag_enabled: false,
        prediagnosis_provided: true,
    };

    /// Aggregates transcribed from the published top scores.
    pub(crate) fn table1_aggregates() -> Aggregates {
        Aggregates {
            cells: vec![
                cell(
                    "Mixtral-8x7b-32768",
                    ModelClass::Slm,
                    RAG_NOPRE,
                    Some(0.72),
                    Some(0.73),
                    None,
                ),
                cell(
                    "Mixtral-8x7b-32768",
                    ModelClass::Slm,
                    RAG_PRE,
                    None,
                    None,
                    Some(0.81),
                ),
                cell(
                    "Nemotron-70b-instruct",
                    ModelClass::Slm,
                    NORAG_NOPRE,
                    Some(0.71),
                    None,
                    None,
                ),
                cell(
                    "Qwen-Turbo",
                    ModelClass::Slm,
                    NORAG_NOPRE,
                    None,
                    Some(0.72),
                    None,
                ),
                cell("GPT-4o", ModelClass::Llm, RAG_PRE, None, None, Some(0.74)),
                cell(
                    "Claude-3.5-Sonnet",
                    ModelClass::Llm,
                    NORAG_PRE,
                    None,
                    None,
                    Some(0.80),
                ),
            ],
        }
    }

    #[test]
    fn reproduces_the_seven_published_rows() {
        let table = summary_table(&table1_aggregates());
        let got: Vec<(String, String, String, u32)> = table
            .rows
            .iter()
            .map(|r| {
                (
                    r.model.clone(),
                    r.configuration.clone(),
                    r.metric.to_string(),
                    r.top_percent,
                )
            })
            .collect();
        let expected: Vec<(String, String, String, u32)> = [
            ("Mixtral-8x7b-32768", "RAG, No Pre-Diagnosis", "F1-Dx", 72),
            (
                "Nemotron-70b-instruct",
                "No RAG, No Pre-Diagnosis",
                "F1-Dx",
                71,
            ),
            ("Mixtral-8x7b-32768", "RAG, No Pre-Diagnosis", "F1-Tx", 73),
            ("Qwen-Turbo", "No RAG, No Pre-Diagnosis", "F1-Tx", 72),
            (
                "Claude-3.5-Sonnet",
                "No RAG, With Pre-Diagnosis",
                "RAGAS",
                80,
            ),
            ("GPT-4o", "RAG, With Pre-Diagnosis", "RAGAS", 74),
            ("Mixtral-8x7b-32768", "RAG, With Pre-Diagnosis", "RAGAS", 81),
        ]
        .iter()
        .map(|(m, c, k, p)| (m.to_string(), c.to_string(), k.to_string(), *p))
        .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn summary_is_invariant_under_cell_permutation() {
        let mut aggregates = table1_aggregates();
        aggregates.cells.reverse();
        assert_eq!(
            summary_table(&aggregates),
            summary_table(&table1_aggregates())
        );
    }

    #[test]
    fn tie_goes_to_least_assistance() {
        let aggregates = Aggregates {
            cells: vec![
                cell("m", ModelClass::Slm, RAG_PRE, Some(0.5), None, None),
                cell("m", ModelClass::Slm, NORAG_NOPRE, Some(0.5), None, None),
            ],
        };
        let table = summary_table(&aggregates);
        assert_eq!(table.rows[0].configuration, "No RAG, No Pre-Diagnosis");
    }

    #[test]
    fn single_cell_is_trivially_top() {
        let aggregates = Aggregates {
            cells: vec![cell("m", ModelClass::Llm, RAG_NOPRE, Some(0.4), None, None)],
        };
        let table = summary_table(&aggregates);
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].top_percent, 40);
    }

    #[test]
    fn chart_range_spans_min_and_max() {
        let aggregates = Aggregates {
            cells: vec![
                cell(
                    "Nemotron-70b-instruct",
                    ModelClass::Slm,
                    NORAG_NOPRE,
                    None,
                    None,
                    Some(0.67),
                ),
                cell(
                    "Nemotron-70b-instruct",
                    ModelClass::Slm,
                    RAG_NOPRE,
                    None,
                    None,
                    Some(0.51),
                ),
                cell(
                    "Nemotron-70b-instruct",
                    ModelClass::Slm,
                    NORAG_PRE,
                    None,
                    None,
                    Some(0.58),
                ),
                cell(
                    "Nemotron-70b-instruct",
                    ModelClass::Slm,
                    RAG_PRE,
                    None,
                    None,
                    Some(0.62),
                ),
            ],
        };
        let chart = ragas_chart_data(&aggregates);
        assert_eq!(chart.models.len(), 1);
        assert_eq!(chart.models[0].range, Some((51, 67)));
        assert!(chart.models[0].bars.iter().all(|b| b.is_some()));
    }

    #[test]
    fn equal_bars_have_zero_width_range() {
        let aggregates = Aggregates {
            cells: Condition::ALL
                .iter()
                .map(|c| cell("m", ModelClass::Slm, *c, None, None, Some(0.6)))
                .collect(),
        };
        let chart = ragas_chart_data(&aggregates);
        assert_eq!(chart.models[0].range, Some((60, 60)));
    }

    #[test]
    fn errored_condition_yields_null_bar() {
        let aggregates = Aggregates {
            cells: vec![
                cell("m", ModelClass::Slm, NORAG_NOPRE, None, None, Some(0.5)),
                cell("m", ModelClass::Slm, RAG_NOPRE, None, None, None),
                cell("m", ModelClass::Slm, NORAG_PRE, None, None, Some(0.7)),
            ],
        };
        let chart = ragas_chart_data(&aggregates);
        let bars = &chart.models[0].bars;
        assert!(bars[0].is_some());
        assert!(bars[1].is_none());
        assert!(bars[2].is_some());
        assert!(bars[3].is_none());
        assert_eq!(chart.models[0].range, Some((50, 70)));
    }

    #[test]
    fn export_is_byte_deterministic() {
        let aggregates = table1_aggregates();
        let summary = summary_table(&aggregates);
        let chart = ragas_chart_data(&aggregates);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for dir in [&dir_a, &dir_b] {
            export(
                &summary,
                &chart,
                &[],
                Some("{}"),
                dir.path(),
                &ExportFormat::ALL,
            )
            .unwrap();
        }
        for name in [
            "summary.md",
            "summary.csv",
            "summary.json",
            "ragas_by_condition.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn empty_formats_is_an_error() {
        let aggregates = table1_aggregates();
        let summary = summary_table(&aggregates);
        let chart = ragas_chart_data(&aggregates);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export(&summary, &chart, &[], None, dir.path(), &[]),
            Err(ReportError::NoFormats)
        ));
    }

    #[test]
    fn markdown_headers_match_the_published_table() {
        let table = summary_table(&table1_aggregates());
        let md = render_summary_markdown(&table);
        assert!(md.contains(
            "| Model | Model Size | Configuration | Metric | Top Score (%) | Evaluation Assessment |"
        ));
        assert!(md.contains("| Mixtral-8x7b-32768 | SLM | RAG, With Pre-Diagnosis | RAGAS | 81 |"));
    }

    #[test]
    fn percentages_stay_within_bounds() {
        for score in [0.0, 0.004, 0.5, 0.995, 1.0] {
            assert!(percent(score) <= 100);
        }
    }
}
