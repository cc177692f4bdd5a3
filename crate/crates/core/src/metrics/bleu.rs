//! Document-level BLEU.
//!
//! Each document's segments are joined with a single space and treated as
//! one unit; clipped n-gram counts and lengths are summed over documents and
//! the brevity penalty is taken from the summed lengths.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::tokenize::BleuTokenizer;
use super::MetricError;
use crate::corpus::Document;
use crate::strategy::DocumentTranslation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Adds `k` to matches and totals for n >= 2.
    AddK(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
    pub tokenizer: BleuTokenizer,
    pub case_sensitive: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: Smoothing::None,
            tokenizer: BleuTokenizer::Intl13aLike,
            case_sensitive: true,
        }
    }
}

impl BleuConfig {
    /// Defaults with the tokenizer chosen for the target language.
    pub fn for_target(lang: &str) -> Self {
        Self {
            tokenizer: BleuTokenizer::for_language(lang),
            ..Self::default()
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        if self.case_sensitive {
            self.tokenizer.tokenize(text)
        } else {
            self.tokenizer.tokenize(&text.to_lowercase())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramMatch {
    pub matched: usize,
    pub total: usize,
}

/// Clipped n-gram matches of `hyp` against `reference`.
pub fn ngram_clipped_counts<T: Hash + Eq>(hyp: &[T], reference: &[T], n: usize) -> NgramMatch {
    assert!(n >= 1, "n-gram order must be at least 1");
    let total = (hyp.len() + 1).saturating_sub(n);
    if total == 0 {
        return NgramMatch { matched: 0, total };
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for w in reference.windows(n) {
        *ref_counts.entry(w).or_default() += 1;
    }
    let mut matched = 0;
    for w in hyp.windows(n) {
        if let Some(c) = ref_counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    NgramMatch { matched, total }
}

/// `1` when the hypothesis is at least as long as the reference, otherwise
/// `exp(1 - ref_len / hyp_len)`; `0` for an empty hypothesis.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Sufficient statistics; additive over documents.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matched: Vec<usize>,
    pub total: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        Self {
            matched: vec![0; max_n],
            total: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn from_tokens<T: Hash + Eq>(hyp: &[T], reference: &[T], max_n: usize) -> Self {
        let mut stats = Self::new(max_n);
        for n in 1..=max_n {
            let m = ngram_clipped_counts(hyp, reference, n);
            stats.matched[n - 1] = m.matched;
            stats.total[n - 1] = m.total;
        }
        stats.hyp_len = hyp.len();
        stats.ref_len = reference.len();
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matched.iter_mut().zip(&other.matched) {
            *a += b;
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub stats: BleuStats,
}

/// Orders for which the hypothesis has no n-grams at all (every document is
/// shorter than n tokens) are left out of the geometric mean.
pub fn bleu_from_stats(stats: &BleuStats, cfg: &BleuConfig) -> BleuScore {
    let bp = brevity_penalty(stats.hyp_len, stats.ref_len);
    let mut num = 1.0f64;
    let mut den = 1.0f64;
    let mut orders = 0;
    let mut precisions = Vec::with_capacity(cfg.max_n);
    for n in 0..cfg.max_n {
        if stats.total[n] == 0 {
            precisions.push(0.0);
            continue;
        }
        let (mut m, mut t) = (stats.matched[n] as f64, stats.total[n] as f64);
        if let Smoothing::AddK(k) = cfg.smoothing {
            if n > 0 {
                m += k;
                t += k;
            }
        }
        precisions.push(m / t);
        num *= m;
        den *= t;
        orders += 1;
    }
    let score = if orders == 0 || num == 0.0 {
        0.0
    } else {
        100.0 * bp * (num / den).powf(1.0 / orders as f64)
    };
    BleuScore {
        score: score.clamp(0.0, 100.0),
        precisions,
        brevity_penalty: bp,
        stats: stats.clone(),
    }
}

/// Statistics for one document pair.
pub fn document_stats(
    hyp: &DocumentTranslation,
    reference: &[String],
    cfg: &BleuConfig,
) -> BleuStats {
    let hyp_tokens = cfg.tokenize(&hyp.joined());
    let ref_tokens = cfg.tokenize(&reference.join(" "));
    BleuStats::from_tokens(&hyp_tokens, &ref_tokens, cfg.max_n)
}

/// Document-level BLEU over a set of translated documents.
///
/// References are looked up by document id; documents without one are
/// reported together in the error.
pub fn doc_bleu(
    hyp_docs: &[DocumentTranslation],
    ref_docs: &[Document],
    cfg: &BleuConfig,
) -> Result<BleuScore, MetricError> {
    assert!(cfg.max_n >= 1, "max_n must be at least 1");
    let by_id: HashMap<&str, &Document> = ref_docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut missing = Vec::new();
    let mut stats = BleuStats::new(cfg.max_n);
    for hyp in hyp_docs {
        match by_id
            .get(hyp.doc_id.as_str())
            .and_then(|d| d.reference_segments.as_ref())
        {
            Some(reference) => stats.add(&document_stats(hyp, reference, cfg)),
            None => missing.push(hyp.doc_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(MetricError::MissingReference(missing));
    }
    Ok(bleu_from_stats(&stats, cfg))
}
