//! Inference cost accounting under prefix (KV) caching.
//!
//! A ledger charges each turn's prompt ("prefill") either in full
//! ([`CacheMode::Uncached`]) or only for the part not already held in the
//! cache from the previous turn ([`CacheMode::Cached`]). The cache after a
//! turn holds that turn's request plus the generated reply; reuse is measured
//! as the longest message-wise common prefix with the next request.
//! Generated tokens are charged the same way in both modes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, ChatResponse};
use crate::strategy::{strategy_slug, Message, Mode};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("external token counts have no entry for {0:?}")]
    MissingEntry(String),
    #[error("turn {turn}: request does not extend the previous turn's conversation")]
    PrefixViolation { turn: usize },
    #[error("failed to load token counts from {path}: {message}")]
    Load { path: String, message: String },
}

/// Number of maximal non-whitespace runs.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Pretokenized counts keyed by exact text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExternalCounts {
    pub source: PathBuf,
    pub counts: HashMap<String, usize>,
}

impl ExternalCounts {
    /// Loads a JSON object mapping text to token count.
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let err = |message: String| CostError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let counts = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self {
            source: path.to_path_buf(),
            counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TokenizerSpec {
    #[default]
    Whitespace,
    /// Non-whitespace Unicode scalar values.
    Char,
    External(ExternalCounts),
}

impl TokenizerSpec {
    /// Whitespace tokens, or characters for Chinese and Japanese.
    pub fn for_language(lang: &str) -> Self {
        if is_unsegmented_language(lang) {
            TokenizerSpec::Char
        } else {
            TokenizerSpec::Whitespace
        }
    }

    pub fn id(&self) -> String {
        match self {
            TokenizerSpec::Whitespace => "whitespace".into(),
            TokenizerSpec::Char => "char".into(),
            TokenizerSpec::External(ext) => format!("external:{}", ext.source.display()),
        }
    }
}

pub(crate) fn is_unsegmented_language(lang: &str) -> bool {
    let base = lang.split(['-', '_']).next().unwrap_or(lang);
    matches!(base, "zh" | "ja")
}

pub fn count_tokens(text: &str, spec: &TokenizerSpec) -> Result<usize, CostError> {
    match spec {
        TokenizerSpec::Whitespace => Ok(whitespace_tokens(text)),
        TokenizerSpec::Char => Ok(text.chars().filter(|c| !c.is_whitespace()).count()),
        TokenizerSpec::External(ext) => ext
            .counts
            .get(text)
            .copied()
            .ok_or_else(|| CostError::MissingEntry(text.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    Uncached,
    Cached,
}

impl CacheMode {
    pub const ALL: [CacheMode; 2] = [CacheMode::Uncached, CacheMode::Cached];

    pub fn key(self) -> &'static str {
        match self {
            CacheMode::Uncached => "uncached",
            CacheMode::Cached => "cached",
        }
    }
}

/// One request/response pair of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub mode: Mode,
    pub exchanges: Vec<Exchange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnCost {
    pub turn_index: usize,
    pub prefill_new: usize,
    pub prefill_reused: usize,
    pub generated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostTotals {
    pub prefill_new: usize,
    pub prefill_reused: usize,
    pub generated: usize,
}

impl CostTotals {
    pub fn add(&mut self, other: &CostTotals) {
        self.prefill_new += other.prefill_new;
        self.prefill_reused += other.prefill_reused;
        self.generated += other.generated;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub mode: CacheMode,
    pub entries: Vec<TurnCost>,
    pub totals: CostTotals,
}

impl CostLedger {
    fn from_entries(mode: CacheMode, entries: Vec<TurnCost>) -> Self {
        let mut totals = CostTotals::default();
        for e in &entries {
            totals.prefill_new += e.prefill_new;
            totals.prefill_reused += e.prefill_reused;
            totals.generated += e.generated;
        }
        Self {
            mode,
            entries,
            totals,
        }
    }
}

/// A turn reduced to (message key, token count) pairs.
struct CountedTurn<K> {
    request: Vec<(K, usize)>,
    response: (K, usize),
}

fn ledger_core<K: PartialEq + Clone>(
    turns: &[CountedTurn<K>],
    enforce_prefix: bool,
    mode: CacheMode,
) -> Result<CostLedger, CostError> {
    let mut cache: Vec<(K, usize)> = Vec::new();
    let mut entries = Vec::with_capacity(turns.len());
    for (turn_index, turn) in turns.iter().enumerate() {
        let common = cache
            .iter()
            .zip(&turn.request)
            .take_while(|(a, b)| a.0 == b.0)
            .count();
        if enforce_prefix && turn_index > 0 && common != cache.len() {
            return Err(CostError::PrefixViolation { turn: turn_index });
        }
        let total: usize = turn.request.iter().map(|m| m.1).sum();
        let reused = match mode {
            CacheMode::Uncached => 0,
            CacheMode::Cached => turn.request[..common].iter().map(|m| m.1).sum(),
        };
        entries.push(TurnCost {
            turn_index,
            prefill_new: total - reused,
            prefill_reused: reused,
            generated: turn.response.1,
        });
        cache.clear();
        cache.extend(turn.request.iter().cloned());
        cache.push(turn.response.clone());
    }
    Ok(CostLedger::from_entries(mode, entries))
}

fn count_message(m: &Message, spec: &TokenizerSpec) -> Result<usize, CostError> {
    count_tokens(&m.content, spec)
}

/// Builds the ledger for one session transcript.
///
/// Multi-turn transcripts must be prefix-stable (each request extends the
/// previous request plus its reply); otherwise the cache could not be valid
/// and the ledger is refused.
pub fn ledger_for_session(
    transcript: &Transcript,
    mode: CacheMode,
    spec: &TokenizerSpec,
) -> Result<CostLedger, CostError> {
    let mut turns = Vec::with_capacity(transcript.exchanges.len());
    for ex in &transcript.exchanges {
        let request = ex
            .request
            .messages
            .iter()
            .map(|m| Ok((m.clone(), count_message(m, spec)?)))
            .collect::<Result<Vec<_>, CostError>>()?;
        let reply = Message::assistant(ex.response.content.clone());
        let n = count_message(&reply, spec)?;
        turns.push(CountedTurn {
            request,
            response: (reply, n),
        });
    }
    ledger_core(&turns, transcript.mode.is_multi_turn(), mode)
}

/// Tokens in the last request plus its reply.
pub fn final_conversation_tokens(
    transcript: &Transcript,
    spec: &TokenizerSpec,
) -> Result<usize, CostError> {
    let Some(last) = transcript.exchanges.last() else {
        return Ok(0);
    };
    let mut total = count_tokens(&last.response.content, spec)?;
    for m in &last.request.messages {
        total += count_message(m, spec)?;
    }
    Ok(total)
}

/// Fixed prompt overheads, in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Overheads {
    /// Per-segment instruction wrapped around each segment.
    pub instruction: usize,
    /// Whole-document instruction (single-turn).
    pub document_instruction: usize,
    /// Primer text around the full source (source-primed).
    pub primer: usize,
    /// Shared in-context exemplar prefix; zero means no ICL.
    pub icl_prefix: usize,
}

/// Token statistics of one document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DocStats {
    pub source_tokens: Vec<usize>,
    pub target_tokens: Vec<usize>,
    pub overheads: Overheads,
}

impl DocStats {
    pub fn uniform(segments: usize, seg_tokens: usize, out_tokens: usize) -> Self {
        Self {
            source_tokens: vec![seg_tokens; segments],
            target_tokens: vec![out_tokens; segments],
            overheads: Overheads::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub mode: Mode,
    pub cache_mode: CacheMode,
    pub turns: usize,
    pub totals: CostTotals,
    /// Prefill processed relative to segment-level under the same cache mode.
    pub ratio_vs_segment_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SymKey {
    Icl,
    User(usize),
    Output(usize),
}

fn symbolic_turns(mode: Mode, stats: &DocStats) -> Vec<CountedTurn<SymKey>> {
    let o = &stats.overheads;
    let k = stats.source_tokens.len();
    let mut prefix = Vec::new();
    if o.icl_prefix > 0 {
        prefix.push((SymKey::Icl, o.icl_prefix));
    }
    let src_total: usize = stats.source_tokens.iter().sum();
    let seg_user = |i: usize| (SymKey::User(i), o.instruction + stats.source_tokens[i]);
    let output = |i: usize| (SymKey::Output(i), stats.target_tokens[i]);
    match mode {
        Mode::SingleTurn => {
            let mut request = prefix;
            request.push((SymKey::User(0), o.document_instruction + src_total));
            vec![CountedTurn {
                request,
                response: (SymKey::Output(0), stats.target_tokens.iter().sum()),
            }]
        }
        Mode::SegmentLevel => (0..k)
            .map(|i| {
                let mut request = prefix.clone();
                request.push(seg_user(i));
                CountedTurn {
                    request,
                    response: output(i),
                }
            })
            .collect(),
        Mode::MultiTurn | Mode::MultiTurnSourcePrimed => {
            let mut history = prefix;
            let mut turns = Vec::with_capacity(k);
            for i in 0..k {
                let mut user = seg_user(i);
                if i == 0 && mode == Mode::MultiTurnSourcePrimed {
                    user.1 += o.primer + src_total;
                }
                let mut request = history.clone();
                request.push(user);
                history = request.clone();
                history.push(output(i));
                turns.push(CountedTurn {
                    request,
                    response: output(i),
                });
            }
            turns
        }
    }
}

/// Simulates every strategy under both cache modes for one document.
pub fn compare_strategies(stats: &DocStats) -> Vec<ComparisonRow> {
    assert_eq!(
        stats.source_tokens.len(),
        stats.target_tokens.len(),
        "source and target token lists must align"
    );
    let icl = stats.overheads.icl_prefix > 0;
    let mut rows = Vec::new();
    for cache_mode in CacheMode::ALL {
        let ledgers: Vec<(Mode, usize, CostLedger)> = Mode::ALL
            .into_iter()
            .map(|mode| {
                let turns = symbolic_turns(mode, stats);
                let ledger = ledger_core(&turns, mode.is_multi_turn(), cache_mode)
                    .expect("symbolic transcripts are prefix-stable");
                (mode, turns.len(), ledger)
            })
            .collect();
        let baseline = ledgers
            .iter()
            .find(|(m, _, _)| *m == Mode::SegmentLevel)
            .map(|(_, _, l)| l.totals.prefill_new)
            .unwrap_or(0);
        for (mode, turns, ledger) in ledgers {
            let ratio = if baseline == 0 {
                f64::NAN
            } else {
                ledger.totals.prefill_new as f64 / baseline as f64
            };
            rows.push(ComparisonRow {
                strategy: strategy_slug(mode, icl),
                mode,
                cache_mode,
                turns,
                totals: ledger.totals,
                ratio_vs_segment_level: ratio,
            });
        }
    }
    rows
}

/// Column order of the comparison CSV.
pub const COMPARISON_CSV_HEADER: &str =
    "segments,strategy,cache_mode,turns,prefill_new,prefill_reused,generated,ratio_vs_segment_level";

/// Renders comparison rows as CSV, with the segment count as first column.
pub fn comparison_csv(blocks: &[(usize, Vec<ComparisonRow>)]) -> String {
    let mut out = String::from(COMPARISON_CSV_HEADER);
    out.push('\n');
    for (segments, rows) in blocks {
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.4}",
                segments,
                r.strategy,
                r.cache_mode.key(),
                r.turns,
                r.totals.prefill_new,
                r.totals.prefill_reused,
                r.totals.generated,
                r.ratio_vs_segment_level
            );
        }
    }
    out
}
