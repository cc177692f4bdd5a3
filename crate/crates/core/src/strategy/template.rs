use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Mode;

pub const DEFAULT_TEMPLATE_SET: &str = "wmt24-style-v1";

const WMT24_STYLE_V1: &str = include_str!("../../resources/templates/wmt24-style-v1.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("placeholder {{{0}}} is not bound")]
    UnboundPlaceholder(String),
    #[error("unterminated placeholder starting at byte {0}")]
    Unterminated(usize),
    #[error("template set {set} has no section for {mode}:{icl}:{slot}")]
    MissingSection {
        set: String,
        mode: &'static str,
        icl: &'static str,
        slot: &'static str,
    },
    #[error("template set line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown template set {0:?}")]
    UnknownSet(String),
    #[error("failed to read template set {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Document,
    Segment,
    Primer,
    Exemplar,
}

impl Slot {
    fn key(self) -> &'static str {
        match self {
            Slot::Document => "document",
            Slot::Segment => "segment",
            Slot::Primer => "primer",
            Slot::Exemplar => "exemplar",
        }
    }

    fn from_key(key: &str) -> Option<Slot> {
        [Slot::Document, Slot::Segment, Slot::Primer, Slot::Exemplar]
            .into_iter()
            .find(|s| s.key() == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IclKey {
    Icl,
    NoIcl,
    Any,
}

impl IclKey {
    fn key(self) -> &'static str {
        match self {
            IclKey::Icl => "icl",
            IclKey::NoIcl => "noicl",
            IclKey::Any => "*",
        }
    }
}

type SectionKey = (Mode, IclKey, Slot);

/// Versioned prompt templates keyed by (mode, icl, slot).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    id: String,
    content_hash: String,
    sections: HashMap<SectionKey, String>,
}

impl PromptTemplateSet {
    /// The built-in set shipped with the crate.
    pub fn builtin(id: &str) -> Result<Self, TemplateError> {
        match id {
            DEFAULT_TEMPLATE_SET => Self::parse(id, WMT24_STYLE_V1),
            other => Err(TemplateError::UnknownSet(other.to_string())),
        }
    }

    pub fn default_set() -> Self {
        Self::builtin(DEFAULT_TEMPLATE_SET).expect("built-in template set parses")
    }

    /// A built-in id, or a path to a template file (the id is then the file stem).
    pub fn resolve(id_or_path: &str) -> Result<Self, TemplateError> {
        match Self::builtin(id_or_path) {
            Ok(set) => Ok(set),
            Err(TemplateError::UnknownSet(_)) if Path::new(id_or_path).is_file() => {
                Self::load(Path::new(id_or_path))
            }
            Err(e) => Err(e),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::parse(&id, &text)
    }

    pub fn parse(id: &str, text: &str) -> Result<Self, TemplateError> {
        let mut sections = HashMap::new();
        let mut current: Option<(SectionKey, Vec<&str>)> = None;
        let flush = |cur: Option<(SectionKey, Vec<&str>)>, sections: &mut HashMap<_, _>| {
            if let Some((key, lines)) = cur {
                let body = lines.join("\n").trim_end_matches(['\n', ' ']).to_string();
                sections.insert(key, body);
            }
        };
        for (idx, line) in text.lines().enumerate() {
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let key = parse_header(header).ok_or_else(|| TemplateError::Syntax {
                    line: idx + 1,
                    message: format!("bad section header [{header}]"),
                })?;
                if sections.contains_key(&key) || current.as_ref().is_some_and(|(k, _)| *k == key) {
                    return Err(TemplateError::Syntax {
                        line: idx + 1,
                        message: format!("duplicate section [{header}]"),
                    });
                }
                flush(current.take(), &mut sections);
                current = Some((key, Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            }
        }
        flush(current, &mut sections);
        Ok(Self {
            id: id.to_string(),
            content_hash: hex::encode(Sha256::digest(text.as_bytes())),
            sections,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// SHA-256 of the template file contents, hex encoded.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// Looks up a template; an exact icl key wins over `*`.
    pub fn get(&self, mode: Mode, icl: bool, slot: Slot) -> Result<&str, TemplateError> {
        let exact = if icl { IclKey::Icl } else { IclKey::NoIcl };
        self.sections
            .get(&(mode, exact, slot))
            .or_else(|| self.sections.get(&(mode, IclKey::Any, slot)))
            .map(String::as_str)
            .ok_or_else(|| TemplateError::MissingSection {
                set: self.id.clone(),
                mode: mode.key(),
                icl: exact.key(),
                slot: slot.key(),
            })
    }
}

fn parse_header(header: &str) -> Option<(Mode, IclKey, Slot)> {
    let mut parts = header.split(':');
    let mode = Mode::from_key(parts.next()?.trim())?;
    let icl = match parts.next()?.trim() {
        "icl" => IclKey::Icl,
        "noicl" => IclKey::NoIcl,
        "*" => IclKey::Any,
        _ => return None,
    };
    let slot = Slot::from_key(parts.next()?.trim())?;
    if parts.next().is_some() {
        return None;
    }
    Some((mode, icl, slot))
}

/// Values available to a template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptVars {
    pub src_lang: String,
    pub tgt_lang: String,
    pub segment: Option<String>,
    pub document: Option<String>,
    pub domain: Option<String>,
}

impl PromptVars {
    /// Language codes are rendered as English language names where known.
    pub fn for_direction(src_lang: &str, tgt_lang: &str) -> Self {
        Self {
            src_lang: language_name(src_lang).to_string(),
            tgt_lang: language_name(tgt_lang).to_string(),
            ..Default::default()
        }
    }

    pub fn with_segment(mut self, segment: &str) -> Self {
        self.segment = Some(segment.to_string());
        self
    }

    pub fn with_document(mut self, document: &str) -> Self {
        self.document = Some(document.to_string());
        self
    }

    pub fn with_domain(mut self, domain: &str) -> Self {
        self.domain = Some(domain.to_string());
        self
    }

    fn lookup(&self, name: &str) -> Result<&str, TemplateError> {
        let value = match name {
            "src_lang" => Some(self.src_lang.as_str()),
            "tgt_lang" => Some(self.tgt_lang.as_str()),
            "segment" => self.segment.as_deref(),
            "document" => self.document.as_deref(),
            "domain" => self.domain.as_deref(),
            other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
        };
        value.ok_or_else(|| TemplateError::UnboundPlaceholder(name.to_string()))
    }
}

/// Substitutes `{name}` placeholders. `{{` and `}}` produce literal braces.
pub fn render_prompt(template: &str, vars: &PromptVars) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut offset = 0;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
            offset += pos + 2;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
            offset += pos + 2;
        } else if let Some(after) = tail.strip_prefix('}') {
            out.push('}');
            rest = after;
            offset += pos + 1;
        } else {
            let end = tail
                .find('}')
                .ok_or(TemplateError::Unterminated(offset + pos))?;
            out.push_str(vars.lookup(&tail[1..end])?);
            rest = &tail[end + 1..];
            offset += pos + end + 1;
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn language_name(code: &str) -> &str {
    match code {
        "en" => "English",
        "de" => "German",
        "zh" => "Chinese",
        "cs" => "Czech",
        "hi" => "Hindi",
        "is" => "Icelandic",
        "ja" => "Japanese",
        "ru" => "Russian",
        "es" => "Spanish",
        "uk" => "Ukrainian",
        "fr" => "French",
        other => other,
    }
}
