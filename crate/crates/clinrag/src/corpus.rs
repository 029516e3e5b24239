//! Guideline corpus and patient case loading, plus overlapping chunking.
//!
//! Guidelines are plain-text or Markdown files in a flat directory; patient
//! cases are a single JSON array. Chunking is character-based so the pipeline
//! stays agnostic of any particular tokenizer.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction;

/// Default chunk size in characters.
pub const DEFAULT_CHUNK_SIZE: usize = 1200;
/// Default overlap between consecutive chunks, in characters.
pub const DEFAULT_OVERLAP: usize = 200;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8")]
    NotUtf8 { path: PathBuf },
    #[error("duplicate document id {doc_id:?} (from {path})")]
    DuplicateDocId { doc_id: String, path: PathBuf },
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("overlap {overlap} must be smaller than chunk_size {chunk_size}")]
    BadChunkParams { chunk_size: usize, overlap: usize },
    #[error("case file {path}: {reason}")]
    InvalidCaseFile { path: PathBuf, reason: String },
    #[error("case {case_id:?}: {reason}")]
    InvalidCase { case_id: String, reason: String },
    #[error("duplicate case id {0:?}")]
    DuplicateCaseId(String),
}

/// One guideline document as loaded from disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineDoc {
    /// Unique id, derived from the filename without extension.
    pub doc_id: String,
    /// Organization label, e.g. "EULAR". Derived from the leading token of
    /// the doc id; advisory only.
    pub source: String,
    /// First Markdown heading if present, otherwise the doc id.
    pub title: String,
    pub body: String,
}

/// An indexed text segment of a guideline document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineChunk {
    /// `doc_id` plus ordinal, e.g. `eular_ra#2`.
    pub chunk_id: String,
    pub doc_id: String,
    /// Character (not byte) offset of the chunk within the document body.
    pub start_offset: usize,
    pub text: String,
    /// First Markdown heading inside the chunk, if any.
    pub section_hint: Option<String>,
}

/// A standardized patient case with gold diagnosis/treatment term sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientCase {
    pub case_id: String,
    pub history: String,
    pub medications: String,
    pub labs: String,
    pub course: String,
    pub pre_diagnosis: Option<String>,
    pub gold_diagnoses: BTreeSet<String>,
    pub gold_treatments: BTreeSet<String>,
}

impl PatientCase {
    /// Narrative fields in a fixed order; used both as the retrieval query
    /// and as the `{case}` block of the prompt.
    pub fn narrative(&self) -> String {
        format!(
            "History: {}\nMedications: {}\nLaboratory values: {}\nCourse: {}",
            self.history, self.medications, self.labs, self.course
        )
    }
}

fn first_heading(text: &str) -> Option<String> {
    text.lines().find_map(|line| {
        let trimmed = line.trim_start();
        trimmed
            .strip_prefix('#')
            .map(|rest| rest.trim_start_matches('#').trim().to_string())
            .filter(|s| !s.is_empty())
    })
}

fn source_label(doc_id: &str) -> String {
    doc_id
        .split(['_', '-'])
        .next()
        .unwrap_or(doc_id)
        .to_uppercase()
}

/// Load every `.txt`/`.md` file in `dir` as a [`GuidelineDoc`], ordered by
/// doc id. Other files are ignored.
pub fn load_documents(dir: &Path) -> Result<Vec<GuidelineDoc>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let is_text = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt") | Some("md")
        );
        if path.is_file() && is_text {
            paths.push(path);
        }
    }

    let mut docs: Vec<GuidelineDoc> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let body =
            String::from_utf8(bytes).map_err(|_| CorpusError::NotUtf8 { path: path.clone() })?;
        let doc_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if body.trim().is_empty() {
            return Err(CorpusError::EmptyDocument(doc_id));
        }
        if docs.iter().any(|d| d.doc_id == doc_id) {
            return Err(CorpusError::DuplicateDocId { doc_id, path });
        }
        let title = first_heading(&body).unwrap_or_else(|| doc_id.clone());
        let source = source_label(&doc_id);
        docs.push(GuidelineDoc {
            doc_id,
            source,
            title,
            body,
        });
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

/// Number of chunks produced for a body of `len` characters:
/// `max(1, ceil((len − overlap) / (chunk_size − overlap)))`.
pub fn chunk_count(len: usize, chunk_size: usize, overlap: usize) -> usize {
    let stride = chunk_size - overlap;
    if len <= chunk_size {
        return 1;
    }
    (len - overlap).div_ceil(stride)
}

/// Split a document body into overlapping character windows.
///
/// Chunk `i` starts at `i · (chunk_size − overlap)`; emission stops once a
/// chunk reaches the end of the body, so the last chunk may be shorter and
/// every character is covered at least once.
pub fn chunk_document(
    doc: &GuidelineDoc,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<GuidelineChunk>, CorpusError> {
    if overlap >= chunk_size {
        return Err(CorpusError::BadChunkParams {
            chunk_size,
            overlap,
        });
    }
    let chars: Vec<char> = doc.body.chars().collect();
    let stride = chunk_size - overlap;

    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let end = usize::min(start + chunk_size, chars.len());
        let text: String = chars[start..end].iter().collect();
        let section_hint = first_heading(&text);
        chunks.push(GuidelineChunk {
            chunk_id: format!("{}#{}", doc.doc_id, chunks.len()),
            doc_id: doc.doc_id.clone(),
            start_offset: start,
            text,
            section_hint,
        });
        if end >= chars.len() {
            break;
        }
        start += stride;
    }
    debug_assert_eq!(chunks.len(), chunk_count(chars.len(), chunk_size, overlap));
    Ok(chunks)
}

/// Load and validate patient cases from a JSON array.
pub fn load_cases(path: &Path) -> Result<Vec<PatientCase>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cases: Vec<PatientCase> =
        serde_json::from_str(&text).map_err(|e| CorpusError::InvalidCaseFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for case in &cases {
        if !seen.insert(&case.case_id) {
            return Err(CorpusError::DuplicateCaseId(case.case_id.clone()));
        }
        validate_case(case)?;
    }
    Ok(cases)
}

fn validate_case(case: &PatientCase) -> Result<(), CorpusError> {
    if case.case_id.trim().is_empty() {
        return Err(CorpusError::InvalidCase {
            case_id: case.case_id.clone(),
            reason: "empty case_id".into(),
        });
    }
    if case.gold_diagnoses.is_empty() {
        return Err(CorpusError::InvalidCase {
            case_id: case.case_id.clone(),
            reason: "gold_diagnoses must not be empty".into(),
        });
    }
    for term in case.gold_diagnoses.iter().chain(&case.gold_treatments) {
        if !extraction::is_canonical_shape(term) {
            return Err(CorpusError::InvalidCase {
                case_id: case.case_id.clone(),
                reason: format!("gold term {term:?} is not in canonical form"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(body: &str) -> GuidelineDoc {
        GuidelineDoc {
            doc_id: "test".into(),
            source: "TEST".into(),
            title: "test".into(),
            body: body.into(),
        }
    }

    fn write(dir: &Path, name: &str, content: &[u8]) {
        std::fs::write(dir.join(name), content).unwrap();
    }

    #[test]
    fn loads_documents_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "eular_ra.md", b"# RA guideline\ncontent");
        write(dir.path(), "acr_gout.md", b"gout content");
        let docs = load_documents(dir.path()).unwrap();
        assert_eq!(docs.len(), 2);
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["acr_gout", "eular_ra"]);
        assert_eq!(docs[1].title, "RA guideline");
        assert_eq!(docs[1].source, "EULAR");
    }

    #[test]
    fn empty_directory_yields_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_documents(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn invalid_utf8_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "bad.txt", &[0x68, 0xFF, 0x69]);
        let err = load_documents(dir.path()).unwrap_err();
        assert!(err.to_string().contains("bad.txt"), "{err}");
    }

    #[test]
    fn non_text_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "notes.json", b"{}");
        write(dir.path(), "doc.txt", b"text");
        let docs = load_documents(dir.path()).unwrap();
        assert_eq!(docs.len(), 1);
    }

    #[test]
    fn empty_document_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "blank.txt", b"  \n ");
        let err = load_documents(dir.path()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyDocument(id) if id == "blank"));
    }

    #[test]
    fn chunk_offsets_follow_stride() {
        // 1000 chars, size 400, overlap 100: stride 300, the chunk at 600
        // reaches the end, so 3 chunks — matching the closed-form count.
        let d = doc(&"x".repeat(1000));
        let chunks = chunk_document(&d, 400, 100).unwrap();
        let starts: Vec<usize> = chunks.iter().map(|c| c.start_offset).collect();
        assert_eq!(starts, [0, 300, 600]);
        assert_eq!(chunks.len(), chunk_count(1000, 400, 100));
        assert!(chunks.iter().all(|c| c.text.chars().count() <= 400));
    }

    #[test]
    fn short_body_is_a_single_chunk() {
        let d = doc(&"y".repeat(100));
        let chunks = chunk_document(&d, 400, 100).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, d.body);
    }

    #[test]
    fn overlap_equal_to_chunk_size_is_rejected() {
        let d = doc("body");
        assert!(matches!(
            chunk_document(&d, 400, 400),
            Err(CorpusError::BadChunkParams { .. })
        ));
    }

    #[test]
    fn chunk_ids_carry_doc_id_and_ordinal() {
        let d = doc(&"z".repeat(700));
        let chunks = chunk_document(&d, 400, 100).unwrap();
        assert_eq!(chunks[0].chunk_id, "test#0");
        assert_eq!(chunks[1].chunk_id, "test#1");
    }

    #[test]
    fn section_hint_comes_from_heading_inside_chunk() {
        let d = doc("## Dosing\nstart methotrexate low and titrate");
        let chunks = chunk_document(&d, 400, 100).unwrap();
        assert_eq!(chunks[0].section_hint.as_deref(), Some("Dosing"));
    }

    #[test]
    fn chunking_is_unicode_safe() {
        let d = doc(&"ä".repeat(950));
        let chunks = chunk_document(&d, 400, 100).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(reconstruct(&chunks, 100), d.body);
    }

    fn reconstruct(chunks: &[GuidelineChunk], overlap: usize) -> String {
        let mut out = String::new();
        for (i, chunk) in chunks.iter().enumerate() {
            if i == 0 {
                out.push_str(&chunk.text);
            } else {
                out.extend(chunk.text.chars().skip(overlap));
            }
        }
        out
    }

    fn case_json(cases: &str) -> Vec<u8> {
        cases.as_bytes().to_vec()
    }

    const VALID_CASE: &str = r#"{
        "case_id": "case-01",
        "history": "h", "medications": "m", "labs": "l", "course": "c",
        "pre_diagnosis": "rheumatoid arthritis",
        "gold_diagnoses": ["rheumatoid arthritis"],
        "gold_treatments": ["methotrexate"]
    }"#;

    #[test]
    fn loads_valid_cases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.json");
        std::fs::write(&path, case_json(&format!("[{VALID_CASE}]"))).unwrap();
        let cases = load_cases(&path).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].case_id, "case-01");
    }

    #[test]
    fn empty_gold_diagnoses_names_the_case() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.json");
        let bad = VALID_CASE.replace(r#"["rheumatoid arthritis"]"#, "[]");
        std::fs::write(&path, case_json(&format!("[{bad}]"))).unwrap();
        let err = load_cases(&path).unwrap_err();
        assert!(err.to_string().contains("case-01"), "{err}");
    }

    #[test]
    fn duplicate_case_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.json");
        std::fs::write(&path, case_json(&format!("[{VALID_CASE},{VALID_CASE}]"))).unwrap();
        let err = load_cases(&path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateCaseId(id) if id == "case-01"));
    }

    #[test]
    fn non_canonical_gold_terms_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cases.json");
        let bad = VALID_CASE.replace("\"methotrexate\"", "\"Methotrexate \"");
        std::fs::write(&path, case_json(&format!("[{bad}]"))).unwrap();
        let err = load_cases(&path).unwrap_err();
        assert!(err.to_string().contains("canonical"), "{err}");
    }

    proptest! {
        #[test]
        fn reconstruction_and_count_formula(
            len in 1usize..4000,
            chunk_size in 2usize..600,
            overlap_frac in 0.0f64..1.0,
        ) {
            let overlap = ((chunk_size as f64 - 1.0) * overlap_frac) as usize;
            let body: String = (0..len).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
            let d = doc(&body);
            let chunks = chunk_document(&d, chunk_size, overlap).unwrap();
            prop_assert_eq!(chunks.len(), chunk_count(len, chunk_size, overlap));
            prop_assert_eq!(reconstruct(&chunks, overlap), body);
        }

        #[test]
        fn chunking_is_deterministic(len in 1usize..2000) {
            let body: String = (0..len).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
            let d = doc(&body);
            let a = chunk_document(&d, 120, 30).unwrap();
            let b = chunk_document(&d, 120, 30).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
