//! Scoring: document BLEU, BlonDE-lite, segment-mean external scores and
//! length statistics.

mod bleu;
mod blonde;
mod segment;
mod tokenize;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, TestSet};
use crate::costing::{count_tokens, CostError, TokenizerSpec};
use crate::strategy::DocumentTranslation;

pub use bleu::{
    bleu_from_stats, brevity_penalty, doc_bleu, document_stats, ngram_clipped_counts, BleuConfig,
    BleuScore, BleuStats, NgramMatch, Smoothing,
};
pub use blonde::{
    blonde_counts, blonde_lite, extract_markers, BlondeCounts, BlondeResources, BlondeScore,
    Category, CategoryCounts, CategoryScore, EntityRule, Markers, TensePattern, TenseRule,
};
pub use segment::{
    aligned_triples, parse_scores, scorer_input_tsv, segment_mean, segment_mean_score,
    CommandScorer, ScoreFileScorer, SegmentMeanReport, SegmentScorer, SegmentTriple,
    SentenceBleuScorer,
};
pub use tokenize::{tokenize_intl, BleuTokenizer};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no reference for documents: {}", .0.join(", "))]
    MissingReference(Vec<String>),
    #[error("scorer returned {got} scores for {expected} segments")]
    ScoreCount { expected: usize, got: usize },
    #[error("scorer output line {line} is not a number: {value:?}")]
    NonNumericScore { line: usize, value: String },
    #[error("scorer {scorer}: {message}")]
    Scorer { scorer: String, message: String },
    #[error("resource {path}: {message}")]
    Resource { path: String, message: String },
    #[error(transparent)]
    Tokens(#[from] CostError),
}

/// Serializes `None` as the string `"not computed"`.
pub mod not_computed {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub const LABEL: &str = "not computed";

    pub fn serialize<S: Serializer, T: Serialize>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => x.serialize(s),
            None => s.serialize_str(LABEL),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either<T> {
        Value(T),
        Label(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(
        d: D,
    ) -> Result<Option<T>, D::Error> {
        Ok(match Either::<T>::deserialize(d)? {
            Either::Value(v) => Some(v),
            Either::Label(l) if l == LABEL => None,
            Either::Label(l) => {
                return Err(serde::de::Error::custom(format!("unexpected string {l:?}")))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    SegmentMetricsSkipped,
    NoReference,
    BlondeUnsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    #[serde(with = "not_computed")]
    pub ref_tokens: Option<usize>,
    pub hyp_tokens: usize,
    #[serde(with = "not_computed")]
    pub ratio: Option<f64>,
}

impl LengthStats {
    fn new(ref_tokens: Option<usize>, hyp_tokens: usize) -> Self {
        let ratio = ref_tokens
            .filter(|r| *r > 0)
            .map(|r| hyp_tokens as f64 / r as f64);
        Self {
            ref_tokens,
            hyp_tokens,
            ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub doc_id: String,
    #[serde(with = "not_computed")]
    pub dbleu: Option<f64>,
    #[serde(with = "not_computed")]
    pub blonde: Option<BlondeScore>,
    #[serde(with = "not_computed")]
    pub segment_mean: Option<f64>,
    pub length: LengthStats,
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub documents: usize,
    #[serde(with = "not_computed")]
    pub dbleu: Option<f64>,
    #[serde(with = "not_computed")]
    pub blonde: Option<BlondeScore>,
    #[serde(with = "not_computed")]
    pub segment_mean: Option<f64>,
    pub segments_scored: usize,
    pub length: LengthStats,
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub documents: Vec<DocMetrics>,
    pub aggregate: AggregateMetrics,
}

/// What to compute in [`evaluate`].
#[derive(Clone, Copy)]
pub struct ScoringOptions<'a> {
    pub dbleu: bool,
    /// `None` selects [`BleuConfig::for_target`] from the documents' target language.
    pub bleu: Option<BleuConfig>,
    /// `None` means BlonDE-lite is not computed.
    pub blonde: Option<&'a BlondeResources>,
    pub scorer: Option<&'a dyn SegmentScorer>,
    pub tokenizer: &'a TokenizerSpec,
}

fn token_sum(segments: &[String], spec: &TokenizerSpec) -> Result<usize, CostError> {
    segments.iter().map(|s| count_tokens(s, spec)).sum()
}

/// Scores translated documents of one language direction.
///
/// Metrics whose prerequisites are missing (no reference, misaligned
/// segments, no resources) are left as "not computed" and flagged.
pub fn evaluate(
    docs: &[(&DocumentTranslation, &Document)],
    opts: &ScoringOptions<'_>,
) -> Result<MetricReport, MetricError> {
    let bleu_cfg = opts.bleu.unwrap_or_else(|| {
        BleuConfig::for_target(docs.first().map_or("", |(_, d)| d.tgt_lang.as_str()))
    });
    let mut documents = Vec::with_capacity(docs.len());
    let mut agg_flags = BTreeSet::new();
    let mut bleu_total = BleuStats::new(bleu_cfg.max_n);
    let mut blonde_total = BlondeCounts::default();
    let (mut ref_total, mut hyp_total) = (0usize, 0usize);
    let mut all_refs = true;

    // segment scorer runs once over every aligned segment
    let mut seg_scores: HashMap<String, Vec<f64>> = HashMap::new();
    let mut segments_scored = 0;
    let mut seg_mean = None;
    if let Some(scorer) = opts.scorer {
        let mut triples = Vec::new();
        let mut owners = Vec::new();
        for (hyp, doc) in docs {
            let (t, _) = aligned_triples(&[(*hyp, *doc)]);
            owners.extend(std::iter::repeat_n(doc.id.clone(), t.len()));
            triples.extend(t);
        }
        if !triples.is_empty() {
            let scores = scorer.score(&triples)?;
            if scores.len() != triples.len() {
                return Err(MetricError::ScoreCount {
                    expected: triples.len(),
                    got: scores.len(),
                });
            }
            segments_scored = scores.len();
            seg_mean = Some(scores.iter().sum::<f64>() / scores.len() as f64);
            for (owner, s) in owners.into_iter().zip(scores) {
                seg_scores.entry(owner).or_default().push(s);
            }
        }
    }

    for (hyp, doc) in docs {
        let mut flags = BTreeSet::new();
        let hyp_tokens = token_sum(&hyp.hypothesis_segments, opts.tokenizer)?;
        hyp_total += hyp_tokens;
        let reference = doc.reference_segments.as_ref();
        let ref_tokens = reference
            .map(|r| token_sum(r, opts.tokenizer))
            .transpose()?;
        if let Some(r) = ref_tokens {
            ref_total += r;
        } else {
            all_refs = false;
            flags.insert(Flag::NoReference);
        }
        let dbleu = match reference {
            Some(r) if opts.dbleu => {
                let stats = document_stats(hyp, r, &bleu_cfg);
                bleu_total.add(&stats);
                Some(bleu_from_stats(&stats, &bleu_cfg).score)
            }
            _ => None,
        };
        let blonde = match (reference, opts.blonde) {
            (Some(r), Some(res)) => {
                let counts = blonde_counts(&hyp.hypothesis_segments, r, res);
                blonde_total.add(&counts);
                Some(counts.score())
            }
            _ => None,
        };
        let aligned = hyp.alignment_ok && reference.is_some();
        if !aligned {
            flags.insert(Flag::SegmentMetricsSkipped);
        }
        let segment_mean = seg_scores
            .get(&doc.id)
            .map(|v| v.iter().sum::<f64>() / v.len() as f64);
        agg_flags.extend(flags.iter().copied());
        documents.push(DocMetrics {
            doc_id: doc.id.clone(),
            dbleu,
            blonde,
            segment_mean,
            length: LengthStats::new(ref_tokens, hyp_tokens),
            flags,
        });
    }
    if opts.blonde.is_none() {
        agg_flags.insert(Flag::BlondeUnsupported);
    }
    let any_ref = documents.iter().any(|d| d.length.ref_tokens.is_some());
    let aggregate = AggregateMetrics {
        documents: documents.len(),
        dbleu: (opts.dbleu && any_ref).then(|| bleu_from_stats(&bleu_total, &bleu_cfg).score),
        blonde: (opts.blonde.is_some() && any_ref).then(|| blonde_total.score()),
        segment_mean: seg_mean,
        segments_scored,
        length: LengthStats::new(all_refs.then_some(ref_total), hyp_total),
        flags: agg_flags,
    };
    Ok(MetricReport {
        documents,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRow {
    pub doc_id: String,
    pub ref_tokens: usize,
    /// `None` when the document has no translation (e.g. excluded).
    pub hyp_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthReport {
    pub rows: Vec<LengthRow>,
    pub total_ref_tokens: usize,
    pub total_hyp_tokens: usize,
}

/// Reference vs. hypothesis token counts for the `top_n` documents with the
/// longest references (ties broken by id). Documents without a reference
/// are not ranked.
pub fn length_report(
    testset: &TestSet,
    translations: &[DocumentTranslation],
    spec: &TokenizerSpec,
    top_n: usize,
) -> Result<LengthReport, MetricError> {
    length_report_with(testset, translations, |_| spec.clone(), top_n)
}

/// Like [`length_report`], choosing the tokenizer per document.
pub fn length_report_with<F>(
    testset: &TestSet,
    translations: &[DocumentTranslation],
    spec_for: F,
    top_n: usize,
) -> Result<LengthReport, MetricError>
where
    F: Fn(&Document) -> TokenizerSpec,
{
    let by_id: HashMap<&str, &DocumentTranslation> = translations
        .iter()
        .map(|t| (t.doc_id.as_str(), t))
        .collect();
    let mut rows = Vec::new();
    for doc in &testset.documents {
        let Some(reference) = &doc.reference_segments else {
            continue;
        };
        let spec = spec_for(doc);
        let hyp_tokens = by_id
            .get(doc.id.as_str())
            .map(|t| token_sum(&t.hypothesis_segments, &spec))
            .transpose()?;
        rows.push(LengthRow {
            doc_id: doc.id.clone(),
            ref_tokens: token_sum(reference, &spec)?,
            hyp_tokens,
        });
    }
    rows.sort_by(|a, b| {
        b.ref_tokens
            .cmp(&a.ref_tokens)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    rows.truncate(top_n);
    Ok(LengthReport {
        total_ref_tokens: rows.iter().map(|r| r.ref_tokens).sum(),
        total_hyp_tokens: rows.iter().filter_map(|r| r.hyp_tokens).sum(),
        rows,
    })
}
