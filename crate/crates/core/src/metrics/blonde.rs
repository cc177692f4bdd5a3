//! BlonDE-lite: discourse-marker F1 from closed word lists.
//!
//! For each category a multiset of markers is extracted from the whole
//! document (hypothesis and reference separately); precision and recall come
//! from the multiset intersection. Categories with no marker in the reference
//! are left out of the combined score, which is the unweighted mean of the
//! remaining category F1 values.
//!
//! Extraction rules:
//! * pronouns and connectives: case-folded list match; connectives may span
//!   several tokens and are matched longest first without overlap.
//! * tense: each token gets the label of the first matching rule, exact words
//!   before `*suffix` patterns; suffix matches need a stem of 3+ letters.
//! * entities: maximal runs of capitalized tokens; a run starting a sentence
//!   loses its first token, and pronouns never count. Entity strings are
//!   compared exactly, which also covers transliteration consistency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize_intl;
use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Tense,
    Pronoun,
    Entity,
    Connective,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Tense,
        Category::Pronoun,
        Category::Entity,
        Category::Connective,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensePattern {
    Word(String),
    Suffix(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TenseRule {
    pub label: String,
    pub pattern: TensePattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityRule {
    CapitalizedSequence,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlondeResources {
    pub language: String,
    pub pronouns: HashSet<String>,
    /// Token sequences, longest first.
    pub connectives: Vec<Vec<String>>,
    pub tense: Vec<TenseRule>,
    pub entity_rule: EntityRule,
}

const EN_PRONOUNS: &str = include_str!("../../resources/blonde/en/pronouns.txt");
const EN_CONNECTIVES: &str = include_str!("../../resources/blonde/en/connectives.txt");
const EN_TENSE: &str = include_str!("../../resources/blonde/en/tense.txt");
const EN_ENTITIES: &str = include_str!("../../resources/blonde/en/entities.txt");

fn list_entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl BlondeResources {
    /// Built-in resources; only English is bundled.
    pub fn builtin(language: &str) -> Option<Self> {
        match language {
            "en" => Some(
                Self::from_texts("en", EN_PRONOUNS, EN_CONNECTIVES, EN_TENSE, EN_ENTITIES)
                    .expect("bundled resources parse"),
            ),
            _ => None,
        }
    }

    /// Loads `<dir>/<language>/{pronouns,connectives,tense,entities}.txt`.
    pub fn load(dir: &Path, language: &str) -> Result<Self, MetricError> {
        let base = dir.join(language);
        let read = |name: &str| {
            let path = base.join(name);
            fs::read_to_string(&path).map_err(|e| MetricError::Resource {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        Self::from_texts(
            language,
            &read("pronouns.txt")?,
            &read("connectives.txt")?,
            &read("tense.txt")?,
            &read("entities.txt")?,
        )
    }

    /// Directory resources when present for the language, else built-ins.
    pub fn resolve(dir: Option<&Path>, language: &str) -> Result<Option<Self>, MetricError> {
        if let Some(dir) = dir {
            if dir.join(language).is_dir() {
                return Self::load(dir, language).map(Some);
            }
        }
        Ok(Self::builtin(language))
    }

    pub fn from_texts(
        language: &str,
        pronouns: &str,
        connectives: &str,
        tense: &str,
        entities: &str,
    ) -> Result<Self, MetricError> {
        let bad = |message: String| MetricError::Resource {
            path: format!("{language} resources"),
            message,
        };
        let pronouns: HashSet<String> = list_entries(pronouns).map(str::to_lowercase).collect();
        let mut connectives: Vec<Vec<String>> = list_entries(connectives)
            .map(|c| {
                c.to_lowercase()
                    .split_whitespace()
                    .map(str::to_string)
                    .collect()
            })
            .collect();
        connectives.sort_by(|a: &Vec<String>, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let mut rules = Vec::new();
        for line in list_entries(tense) {
            let (label, pattern) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("tense rule without tab: {line:?}")))?;
            let pattern = pattern.trim().to_lowercase();
            let pattern = match pattern.strip_prefix('*') {
                Some(suffix) => TensePattern::Suffix(suffix.to_string()),
                None => TensePattern::Word(pattern),
            };
            rules.push(TenseRule {
                label: label.trim().to_string(),
                pattern,
            });
        }
        // exact words take precedence over suffixes
        rules.sort_by_key(|r| matches!(r.pattern, TensePattern::Suffix(_)));
        let entity_rule = match list_entries(entities).next() {
            Some("capitalized_sequence") => EntityRule::CapitalizedSequence,
            Some("none") | None => EntityRule::None,
            Some(other) => return Err(bad(format!("unknown entity rule {other:?}"))),
        };
        if pronouns.is_empty() || connectives.is_empty() || rules.is_empty() {
            return Err(bad(
                "pronoun, connective and tense lists must be non-empty".into()
            ));
        }
        Ok(Self {
            language: language.to_string(),
            pronouns,
            connectives,
            tense: rules,
            entity_rule,
        })
    }

    fn tense_label(&self, token: &str) -> Option<&str> {
        self.tense.iter().find_map(|rule| {
            let hit = match &rule.pattern {
                TensePattern::Word(w) => token == w,
                TensePattern::Suffix(s) => {
                    token.ends_with(s.as_str())
                        && token[..token.len() - s.len()].chars().count() >= 3
                        && token.chars().all(char::is_alphabetic)
                }
            };
            hit.then_some(rule.label.as_str())
        })
    }
}

/// Marker multisets for one document.
pub type Markers = BTreeMap<Category, HashMap<String, usize>>;

fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "!" | "?" | "。" | "！" | "？")
}

fn starts_uppercase(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

/// Extracts markers from the segments of one document.
pub fn extract_markers(segments: &[String], res: &BlondeResources) -> Markers {
    let mut markers: Markers = Category::ALL.iter().map(|c| (*c, HashMap::new())).collect();
    let mut bump = |cat: Category, key: String| {
        *markers
            .get_mut(&cat)
            .expect("category")
            .entry(key)
            .or_default() += 1;
    };
    for segment in segments {
        let tokens = tokenize_intl(segment);
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();

        for t in &lower {
            if res.pronouns.contains(t) {
                bump(Category::Pronoun, t.clone());
            }
            if let Some(label) = res.tense_label(t) {
                bump(Category::Tense, label.to_string());
            }
        }

        let mut i = 0;
        while i < lower.len() {
            let hit = res.connectives.iter().find(|c| lower[i..].starts_with(c));
            match hit {
                Some(c) => {
                    bump(Category::Connective, c.join(" "));
                    i += c.len();
                }
                None => i += 1,
            }
        }

        if res.entity_rule == EntityRule::CapitalizedSequence {
            let mut sentence_start = true;
            let mut run: Vec<&str> = Vec::new();
            let mut run_initial = false;
            let mut flush = |run: &mut Vec<&str>, initial: bool| {
                let start = usize::from(initial);
                if run.len() > start {
                    bump(Category::Entity, run[start..].join(" "));
                }
                run.clear();
            };
            for (tok, low) in tokens.iter().zip(&lower) {
                if starts_uppercase(tok) && !res.pronouns.contains(low) {
                    if run.is_empty() {
                        run_initial = sentence_start;
                    }
                    run.push(tok);
                } else {
                    flush(&mut run, run_initial);
                }
                sentence_start = is_sentence_end(tok);
            }
            flush(&mut run, run_initial);
        }
    }
    markers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub hyp: usize,
    pub reference: usize,
    pub matched: usize,
}

impl CategoryCounts {
    pub fn score(&self) -> CategoryScore {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.matched, self.hyp);
        let recall = ratio(self.matched, self.reference);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        CategoryScore {
            precision,
            recall,
            f1,
            counts: *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: CategoryCounts,
}

impl CategoryScore {
    /// Whether the category occurs in the reference.
    pub fn present(&self) -> bool {
        self.counts.reference > 0
    }
}

/// Additive counts, so corpus scores pool documents.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlondeCounts {
    pub categories: BTreeMap<Category, CategoryCounts>,
}

impl BlondeCounts {
    pub fn from_markers(hyp: &Markers, reference: &Markers) -> Self {
        let empty = HashMap::new();
        let categories = Category::ALL
            .iter()
            .map(|cat| {
                let h = hyp.get(cat).unwrap_or(&empty);
                let r = reference.get(cat).unwrap_or(&empty);
                let matched = h
                    .iter()
                    .map(|(k, c)| (*c).min(r.get(k).copied().unwrap_or(0)))
                    .sum();
                (
                    *cat,
                    CategoryCounts {
                        hyp: h.values().sum(),
                        reference: r.values().sum(),
                        matched,
                    },
                )
            })
            .collect();
        Self { categories }
    }

    pub fn add(&mut self, other: &BlondeCounts) {
        for (cat, c) in &other.categories {
            let e = self.categories.entry(*cat).or_default();
            e.hyp += c.hyp;
            e.reference += c.reference;
            e.matched += c.matched;
        }
    }

    pub fn score(&self) -> BlondeScore {
        let categories: BTreeMap<Category, CategoryScore> = self
            .categories
            .iter()
            .map(|(cat, c)| (*cat, c.score()))
            .collect();
        let present: Vec<f64> = categories
            .values()
            .filter(|s| s.present())
            .map(|s| s.f1)
            .collect();
        let combined = if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        };
        BlondeScore {
            categories,
            combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlondeScore {
    pub categories: BTreeMap<Category, CategoryScore>,
    /// Mean F1 over categories present in the reference.
    pub combined: Option<f64>,
}

pub fn blonde_counts(hyp: &[String], reference: &[String], res: &BlondeResources) -> BlondeCounts {
    BlondeCounts::from_markers(&extract_markers(hyp, res), &extract_markers(reference, res))
}

/// Document-level BlonDE-lite score.
pub fn blonde_lite(hyp: &[String], reference: &[String], res: &BlondeResources) -> BlondeScore {
    blonde_counts(hyp, reference, res).score()
}
