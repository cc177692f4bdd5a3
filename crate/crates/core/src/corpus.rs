//! Paragraph-aligned document test sets.
//!
//! A corpus file is JSONL with one document per line:
//!
//! ```text
//! {"id": "doc-1", "src_lang": "en", "tgt_lang": "de", "domain": "news",
//!  "src": ["First paragraph.", "Second paragraph."],
//!  "ref": ["Erster Absatz.", "Zweiter Absatz."]}
//! ```
//!
//! `ref` is optional. Unknown top-level keys are reported as warnings and
//! otherwise ignored. All text is NFC-normalized and trimmed at load time.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use once_regex::blank_line_re;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(
        "document {doc_id}: {source_len} source segments but {reference_len} reference segments"
    )]
    AlignmentMismatch {
        doc_id: String,
        source_len: usize,
        reference_len: usize,
    },
    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("duplicate document id {0}")]
    DuplicateId(String),
}

/// One paragraph-aligned document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub domain: String,
    #[serde(rename = "src")]
    pub source_segments: Vec<String>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference_segments: Option<Vec<String>>,
}

impl Document {
    pub fn segment_count(&self) -> usize {
        self.source_segments.len()
    }

    /// `src_lang-tgt_lang`, e.g. `en-de`.
    pub fn direction(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }

    pub fn has_reference(&self) -> bool {
        self.reference_segments.is_some()
    }

    /// Checks the document invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: &str| CorpusError::InvalidDocument {
            doc_id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.src_lang.is_empty() || self.tgt_lang.is_empty() {
            return Err(invalid("missing language code"));
        }
        if self.src_lang == self.tgt_lang {
            return Err(invalid("source and target language are identical"));
        }
        if self.source_segments.is_empty() {
            return Err(invalid("no source segments"));
        }
        if let Some(i) = self
            .source_segments
            .iter()
            .position(|s| s.trim().is_empty())
        {
            return Err(invalid(&format!("source segment {i} is empty")));
        }
        if let Some(reference) = &self.reference_segments {
            if reference.len() != self.source_segments.len() {
                return Err(CorpusError::AlignmentMismatch {
                    doc_id: self.id.clone(),
                    source_len: self.source_segments.len(),
                    reference_len: reference.len(),
                });
            }
        }
        Ok(())
    }

    fn normalize(&mut self) {
        for seg in &mut self.source_segments {
            *seg = normalize_text(seg);
        }
        if let Some(reference) = &mut self.reference_segments {
            for seg in reference {
                *seg = normalize_text(seg);
            }
        }
    }
}

/// NFC + trim.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect::<String>().trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet {
    pub name: String,
    pub documents: Vec<Document>,
}

impl TestSet {
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self, CorpusError> {
        let ts = Self {
            name: name.into(),
            documents,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for doc in &self.documents {
            doc.validate()?;
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn domains(&self) -> BTreeSet<String> {
        self.documents.iter().map(|d| d.domain.clone()).collect()
    }

    pub fn directions(&self) -> BTreeSet<String> {
        self.documents.iter().map(Document::direction).collect()
    }

    /// Serializes to the JSONL corpus format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

/// A fixed in-context translation pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exemplar {
    pub source: String,
    pub target: String,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl Exemplar {
    pub fn direction(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

/// Non-fatal findings while loading a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub message: String,
}

const KNOWN_KEYS: [&str; 6] = ["id", "src_lang", "tgt_lang", "domain", "src", "ref"];

/// Loads and validates a corpus file. Warnings are logged.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<TestSet, CorpusError> {
    let (ts, warnings) = load_corpus_with_warnings(path, format)?;
    for w in warnings {
        log::warn!("{}:{}: {}", path.display(), w.line, w.message);
    }
    Ok(ts)
}

pub fn load_corpus_with_warnings(
    path: &Path,
    format: CorpusFormat,
) -> Result<(TestSet, Vec<LoadWarning>), CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&name, &text),
    }
}

/// Parses JSONL corpus text. Blank lines are skipped.
pub fn parse_jsonl(name: &str, text: &str) -> Result<(TestSet, Vec<LoadWarning>), CorpusError> {
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
            line,
            message: "expected a JSON object".into(),
        })?;
        let mut stripped = serde_json::Map::new();
        for (key, v) in obj {
            if KNOWN_KEYS.contains(&key.as_str()) {
                stripped.insert(key.clone(), v.clone());
            } else {
                warnings.push(LoadWarning {
                    line,
                    message: format!("ignoring unknown key {key:?}"),
                });
            }
        }
        let mut doc: Document = serde_json::from_value(serde_json::Value::Object(stripped))
            .map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
        doc.normalize();
        doc.validate()?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        documents.push(doc);
    }
    Ok((
        TestSet {
            name: name.to_string(),
            documents,
        },
        warnings,
    ))
}

/// Loads exemplars from a JSONL file (one [`Exemplar`] per line).
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut ex: Exemplar = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        ex.source = normalize_text(&ex.source);
        ex.target = normalize_text(&ex.target);
        if ex.source.is_empty() || ex.target.is_empty() {
            return Err(CorpusError::Parse {
                line: idx + 1,
                message: "exemplar source and target must be non-empty".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Paragraphs separated by one or more blank lines.
    #[default]
    BlankLine,
    /// Every non-empty line is a segment.
    SingleNewline,
}

impl SplitRule {
    pub fn separator(self) -> &'static str {
        match self {
            SplitRule::BlankLine => "\n\n",
            SplitRule::SingleNewline => "\n",
        }
    }
}

mod once_regex {
    use regex::Regex;
    use std::sync::OnceLock;

    pub fn blank_line_re() -> &'static Regex {
        static RE: OnceLock<Regex> = OnceLock::new();
        // a newline followed by one or more whitespace-only lines
        RE.get_or_init(|| Regex::new(r"\n(?:[ \t\f\v]*\n)+").unwrap())
    }
}

/// Splits raw text into trimmed, non-empty segments.
///
/// Line endings are normalized to `\n` first. Joining the result with
/// [`SplitRule::separator`] and splitting again yields the same segments.
pub fn split_into_segments(raw_text: &str, rule: SplitRule) -> Vec<String> {
    let text = raw_text.replace("\r\n", "\n").replace('\r', "\n");
    let pieces: Vec<&str> = match rule {
        SplitRule::BlankLine => blank_line_re().split(&text).collect(),
        SplitRule::SingleNewline => text.split('\n').collect(),
    };
    pieces
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// The fields a [`filter_testset`] predicate sees.
#[derive(Debug, Clone, Copy)]
pub struct DocKey<'a> {
    pub src_lang: &'a str,
    pub tgt_lang: &'a str,
    pub domain: &'a str,
    pub id: &'a str,
}

/// Keeps the documents matching `predicate`, preserving order.
pub fn filter_testset<F>(ts: &TestSet, predicate: F) -> TestSet
where
    F: Fn(DocKey<'_>) -> bool,
{
    TestSet {
        name: ts.name.clone(),
        documents: ts
            .documents
            .iter()
            .filter(|d| {
                predicate(DocKey {
                    src_lang: &d.src_lang,
                    tgt_lang: &d.tgt_lang,
                    domain: &d.domain,
                    id: &d.id,
                })
            })
            .cloned()
            .collect(),
    }
}

/// Conjunctive field filter; `None` fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocFilter {
    pub src_lang: Option<String>,
    pub tgt_lang: Option<String>,
    pub domain: Option<String>,
    pub id: Option<String>,
}

impl DocFilter {
    pub fn matches(&self, key: DocKey<'_>) -> bool {
        fn ok(want: &Option<String>, got: &str) -> bool {
            want.as_deref().is_none_or(|w| w == got)
        }
        ok(&self.src_lang, key.src_lang)
            && ok(&self.tgt_lang, key.tgt_lang)
            && ok(&self.domain, key.domain)
            && ok(&self.id, key.id)
    }
}
