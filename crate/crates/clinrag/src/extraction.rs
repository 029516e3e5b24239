//! Parsing of structured diagnosis/treatment answers and term normalization.
//!
//! Model answers are expected to end in a structured block:
//!
//! ```text
//! DIAGNOSES:
//! - rheumatoid arthritis
//! TREATMENTS:
//! - methotrexate
//! ```
//!
//! Free text before or after the block (chain-of-thought reasoning) is
//! ignored. Answers that do not follow the grammar are handled by a lenient
//! fallback; parsing never fails, it only degrades the `ParseStatus`.

use std::collections::btree_set;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("term {0:?} is empty after normalization")]
    EmptyTerm(String),
    #[error("cannot read synonym table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("synonym table {path}: {reason}")]
    InvalidTable { path: String, reason: String },
}

/// A set of canonical terms: lowercase, single-space separated, trimmed,
/// no surrounding punctuation, no duplicates, no empty strings.
///
/// Backed by a `BTreeSet` so iteration order (and therefore rendering and
/// serialization) is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermSet(BTreeSet<String>);

impl TermSet {
    pub fn new() -> Self {
        Self(BTreeSet::new())
    }

    /// Build a term set by normalizing each raw term. Terms that normalize
    /// to nothing are rejected.
    pub fn from_raw<I, S>(raw: I, table: &SynonymTable) -> Result<Self, ExtractionError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for term in raw {
            set.insert(normalize_term(term.as_ref(), table)?);
        }
        Ok(Self(set))
    }

    /// Build from terms that are already canonical. Used for gold sets,
    /// which are validated at case-load time.
    pub fn from_canonical<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(terms.into_iter().map(|t| t.as_ref().to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.contains(term)
    }

    pub fn iter(&self) -> btree_set::Iter<'_, String> {
        self.0.iter()
    }

    /// Number of terms shared with `other`.
    pub fn intersection_size(&self, other: &TermSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

impl<'a> IntoIterator for &'a TermSet {
    type Item = &'a String;
    type IntoIter = btree_set::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Map from surface form to canonical term, matched case-insensitively.
///
/// Canonical terms map to themselves, so normalization is idempotent.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    map: HashMap<String, String>,
}

impl SynonymTable {
    /// An empty table: normalization only, no synonym rewriting.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Load from a JSON object `{surface: canonical, ...}`.
    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExtractionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: HashMap<String, String> =
            serde_json::from_str(&text).map_err(|e| ExtractionError::InvalidTable {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        Self::from_pairs(raw).map_err(|reason| ExtractionError::InvalidTable {
            path: path.display().to_string(),
            reason,
        })
    }

    /// Build from (surface, canonical) pairs, validating the invariants:
    /// surfaces are unique after shape normalization and every canonical
    /// term maps to itself.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut map: HashMap<String, String> = HashMap::new();
        for (surface, canonical) in pairs {
            let surface = canonical_shape(&surface)
                .map_err(|_| format!("surface form {surface:?} is empty after normalization"))?;
            let canonical = canonical_shape(&canonical).map_err(|_| {
                format!("canonical term {canonical:?} is empty after normalization")
            })?;
            if let Some(existing) = map.get(&surface) {
                if *existing != canonical {
                    return Err(format!(
                        "surface form {surface:?} maps to both {existing:?} and {canonical:?}"
                    ));
                }
            }
            map.insert(surface, canonical);
        }
        // Canonical terms must map to themselves.
        let canonicals: Vec<String> = map.values().cloned().collect();
        for canonical in canonicals {
            match map.get(&canonical) {
                Some(target) if *target != canonical => {
                    return Err(format!(
                        "canonical term {canonical:?} is itself mapped to {target:?}"
                    ));
                }
                Some(_) => {}
                None => {
                    map.insert(canonical.clone(), canonical);
                }
            }
        }
        Ok(Self { map })
    }

    fn lookup(&self, shaped: &str) -> Option<&str> {
        self.map.get(shaped).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Parse outcome of [`extract_answer_blocks`], carried into score records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// Both `DIAGNOSES:` and `TREATMENTS:` headers found in order.
    Ok,
    /// Partial grammar or bare-list heuristic used.
    Fallback,
    /// No structured content found; both sets empty.
    Unparseable,
}

/// Lowercase, collapse internal whitespace, strip surrounding punctuation.
/// Errors if nothing is left.
fn canonical_shape(raw: &str) -> Result<String, ExtractionError> {
    let lowered = raw.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    let joined = collapsed.join(" ");
    let stripped = joined.trim_matches(|c: char| !c.is_alphanumeric());
    if stripped.is_empty() {
        return Err(ExtractionError::EmptyTerm(raw.to_string()));
    }
    Ok(stripped.to_string())
}

/// Normalize a raw term to canonical form: shape normalization followed by
/// synonym substitution. Idempotent, since canonical terms map to themselves.
pub fn normalize_term(raw: &str, table: &SynonymTable) -> Result<String, ExtractionError> {
    let shaped = canonical_shape(raw)?;
    Ok(match table.lookup(&shaped) {
        Some(canonical) => canonical.to_string(),
        None => shaped,
    })
}

/// Returns true if `term` is already in canonical shape (the synonym mapping
/// is not consulted). Used to validate gold sets at load time.
pub fn is_canonical_shape(term: &str) -> bool {
    matches!(canonical_shape(term), Ok(shaped) if shaped == term)
}

/// Extracted diagnosis/treatment term sets plus how they were obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAnswer {
    pub diagnoses: TermSet,
    pub treatments: TermSet,
    pub parse_status: ParseStatus,
}

fn is_header(line: &str, name: &str) -> bool {
    line.trim().eq_ignore_ascii_case(name)
}

fn bullet_text(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    trimmed.strip_prefix("- ")
}

/// Collect bullet lines following `start`, skipping blank lines, stopping at
/// the first non-bullet non-blank line. Returns (bullets, next line index).
fn collect_bullets(lines: &[&str], start: usize) -> (Vec<String>, usize) {
    let mut bullets = Vec::new();
    let mut i = start;
    while i < lines.len() {
        let line = lines[i];
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        match bullet_text(line) {
            Some(text) => {
                bullets.push(text.to_string());
                i += 1;
            }
            None => break,
        }
    }
    (bullets, i)
}

/// A markdown list item in the loose sense used by the fallback scan.
fn loose_bullet_text(line: &str) -> Option<String> {
    let trimmed = line.trim_start();
    for prefix in ["- ", "* ", "+ "] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            return Some(rest.to_string());
        }
    }
    // Numbered item: "1. text"
    let mut chars = trimmed.char_indices();
    let mut digits_end = 0;
    for (idx, c) in chars.by_ref() {
        if c.is_ascii_digit() {
            digits_end = idx + 1;
        } else {
            break;
        }
    }
    if digits_end > 0 {
        if let Some(rest) = trimmed[digits_end..].strip_prefix(". ") {
            return Some(rest.to_string());
        }
    }
    None
}

/// Last contiguous run of markdown list items in the text.
fn last_markdown_list(lines: &[&str]) -> Vec<String> {
    let mut best: Vec<String> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in lines {
        match loose_bullet_text(line) {
            Some(item) => current.push(item),
            None => {
                if !line.trim().is_empty() && !current.is_empty() {
                    best = std::mem::take(&mut current);
                }
            }
        }
    }
    if !current.is_empty() {
        best = current;
    }
    best
}

fn normalize_bullets(bullets: &[String], table: &SynonymTable) -> TermSet {
    // Bullets that normalize to nothing are dropped; parsing never fails.
    let mut set = BTreeSet::new();
    for bullet in bullets {
        if let Ok(term) = normalize_term(bullet, table) {
            set.insert(term);
        }
    }
    TermSet(set)
}

/// Parse the structured answer block out of a raw model answer.
///
/// The strict grammar is a line `DIAGNOSES:` followed by `- ` bullets, then
/// `TREATMENTS:` likewise. Text before and after the block is ignored; since
/// chain-of-thought prose can restate the requested format, the *last*
/// `DIAGNOSES:` header anchors the block. When only one header is present,
/// its block is parsed and the result is marked `Fallback`. When neither is
/// present, the last markdown list in the text is taken as the diagnosis
/// list (`Fallback`); with no list at all the result is `Unparseable` with
/// empty sets.
pub fn extract_answer_blocks(raw_text: &str, table: &SynonymTable) -> ExtractedAnswer {
    let lines: Vec<&str> = raw_text.lines().collect();

    let dx_header = lines.iter().rposition(|l| is_header(l, "DIAGNOSES:"));
    let tx_header = match dx_header {
        Some(d) => lines[d + 1..]
            .iter()
            .position(|l| is_header(l, "TREATMENTS:"))
            .map(|off| d + 1 + off),
        None => lines.iter().rposition(|l| is_header(l, "TREATMENTS:")),
    };

    match (dx_header, tx_header) {
        (Some(d), Some(t)) => {
            let (dx_bullets, _) = collect_bullets(&lines, d + 1);
            let (tx_bullets, _) = collect_bullets(&lines, t + 1);
            ExtractedAnswer {
                diagnoses: normalize_bullets(&dx_bullets, table),
                treatments: normalize_bullets(&tx_bullets, table),
                parse_status: ParseStatus::Ok,
            }
        }
        (Some(d), None) => {
            let (dx_bullets, _) = collect_bullets(&lines, d + 1);
            ExtractedAnswer {
                diagnoses: normalize_bullets(&dx_bullets, table),
                treatments: TermSet::new(),
                parse_status: ParseStatus::Fallback,
            }
        }
        (None, Some(t)) => {
            let (tx_bullets, _) = collect_bullets(&lines, t + 1);
            ExtractedAnswer {
                diagnoses: TermSet::new(),
                treatments: normalize_bullets(&tx_bullets, table),
                parse_status: ParseStatus::Fallback,
            }
        }
        (None, None) => {
            let items = last_markdown_list(&lines);
            if items.is_empty() {
                ExtractedAnswer {
                    diagnoses: TermSet::new(),
                    treatments: TermSet::new(),
                    parse_status: ParseStatus::Unparseable,
                }
            } else {
                ExtractedAnswer {
                    diagnoses: normalize_bullets(&items, table),
                    treatments: TermSet::new(),
                    parse_status: ParseStatus::Fallback,
                }
            }
        }
    }
}

/// Render term sets into the block grammar. Re-parsing the output yields the
/// same sets.
pub fn render_answer_block(diagnoses: &TermSet, treatments: &TermSet) -> String {
    let mut out = String::from("DIAGNOSES:\n");
    for term in diagnoses {
        out.push_str("- ");
        out.push_str(term);
        out.push('\n');
    }
    out.push_str("TREATMENTS:\n");
    for term in treatments {
        out.push_str("- ");
        out.push_str(term);
        out.push('\n');
    }
    out
}
