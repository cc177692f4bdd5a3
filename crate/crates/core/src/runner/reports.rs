use std::collections::BTreeMap;
use std::path::PathBuf;

use super::artifacts::{write_atomic, CellRecord, RunArtifacts};
use super::config::{RunPlan, ScoringPlan, StrategyPlan, TokenizerPolicy};
use super::table::Table;
use super::RunError;
use crate::corpus::{Document, TestSet};
use crate::costing::CostTotals;
use crate::metrics::{
    bleu_from_stats, document_stats, evaluate, length_report_with, BleuConfig, BleuStats,
    BlondeResources, LengthReport, MetricReport, ScoringOptions,
};
use crate::strategy::{DocumentTranslation, Mode};

/// Fixed report files, relative to `<run>/reports`. Per-strategy metric
/// details are written under `metrics/<backend>/<strategy>.json`.
pub const REPORT_FILES: [&str; 11] = [
    "main.csv",
    "main.md",
    "per_direction.csv",
    "per_direction.md",
    "domains.csv",
    "domains.md",
    "topn_lengths.csv",
    "topn_totals.csv",
    "costs.csv",
    "costs.md",
    "exclusions.csv",
];

const MISSING: &str = "-";

/// Two decimals, or "-" when the value was not computed.
pub fn format_score(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.2}"))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Signed difference of the two-decimal renderings, e.g. "+4.16".
pub fn format_delta(score: f64, baseline: f64) -> String {
    let d = round2(round2(score) - round2(baseline)) + 0.0;
    format!("{d:+.2}")
}

fn format_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.4}"))
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Scores on a 0–1 scale are shown as percentages, like dBLEU.
fn pct(v: Option<f64>) -> Option<f64> {
    v.map(|x| x * 100.0)
}

/// Everything computed for one (backend, strategy) pair.
struct PairSummary<'a> {
    backend: &'a str,
    strategy: &'a StrategyPlan,
    documents: usize,
    excluded: usize,
    directions: BTreeMap<String, MetricReport>,
    /// domain -> direction -> dBLEU
    domains: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    lengths: LengthReport,
    uncached: CostTotals,
    cached: CostTotals,
    turns: usize,
}

impl PairSummary<'_> {
    fn avg_dbleu(&self) -> Option<f64> {
        mean(self.directions.values().map(|r| r.aggregate.dbleu))
    }

    fn avg_blonde(&self) -> Option<f64> {
        pct(mean(self.directions.values().map(|r| {
            r.aggregate.blonde.as_ref().and_then(|b| b.combined)
        })))
    }

    fn avg_segment(&self) -> Option<f64> {
        pct(mean(
            self.directions.values().map(|r| r.aggregate.segment_mean),
        ))
    }

    fn domain_score(&self, domain: &str) -> Option<f64> {
        self.domains
            .get(domain)
            .and_then(|by_dir| mean(by_dir.values().copied()))
    }
}

struct Context<'a> {
    plan: &'a RunPlan,
    docs: BTreeMap<&'a str, &'a Document>,
    blonde: BTreeMap<String, Option<BlondeResources>>,
}

impl<'a> Context<'a> {
    fn new(plan: &'a RunPlan) -> Result<Self, RunError> {
        let docs = plan.documents().map(|d| (d.id.as_str(), d)).collect();
        let mut blonde = BTreeMap::new();
        for doc in plan.documents() {
            if !blonde.contains_key(&doc.tgt_lang) {
                blonde.insert(
                    doc.tgt_lang.clone(),
                    plan.scoring.blonde_for(&doc.tgt_lang)?,
                );
            }
        }
        Ok(Self { plan, docs, blonde })
    }

    fn summarize(
        &self,
        backend: &'a str,
        strategy: &'a StrategyPlan,
        cells: &[&CellRecord],
        excluded: usize,
    ) -> Result<PairSummary<'a>, RunError> {
        let plan = self.plan;
        let mut by_direction: BTreeMap<String, Vec<(&DocumentTranslation, &Document)>> =
            BTreeMap::new();
        let (mut uncached, mut cached, mut turns) =
            (CostTotals::default(), CostTotals::default(), 0);
        for cell in cells {
            let Some(doc) = self.docs.get(cell.doc_id.as_str()) else {
                continue;
            };
            by_direction
                .entry(doc.direction())
                .or_default()
                .push((&cell.translation, doc));
            uncached.add(&cell.ledgers.uncached.totals);
            cached.add(&cell.ledgers.cached.totals);
            turns += cell.ledgers.turns;
        }
        let scorer = match strategy.mode {
            // whole-document output has no reliable segment alignment
            Mode::SingleTurn => None,
            _ => plan.scoring.segment_scorer.as_deref(),
        };
        let mut directions = BTreeMap::new();
        let mut domains: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
        for (direction, pairs) in &by_direction {
            let first = pairs[0].1;
            let spec = plan.tokenizer.spec_for(first);
            let bleu = BleuConfig::for_target(&first.tgt_lang);
            let opts = ScoringOptions {
                dbleu: plan.scoring.dbleu,
                bleu: Some(bleu),
                blonde: self.blonde.get(&first.tgt_lang).and_then(Option::as_ref),
                scorer,
                tokenizer: &spec,
            };
            directions.insert(direction.clone(), evaluate(pairs, &opts)?);

            let mut per_domain: BTreeMap<&str, Option<BleuStats>> = BTreeMap::new();
            for (hyp, doc) in pairs {
                let slot = per_domain.entry(doc.domain.as_str()).or_insert(None);
                if let Some(reference) = &doc.reference_segments {
                    slot.get_or_insert_with(|| BleuStats::new(bleu.max_n))
                        .add(&document_stats(hyp, reference, &bleu));
                }
            }
            for (domain, stats) in per_domain {
                let score = stats
                    .filter(|_| plan.scoring.dbleu)
                    .map(|s| bleu_from_stats(&s, &bleu).score);
                domains
                    .entry(domain.to_string())
                    .or_default()
                    .insert(direction.clone(), score);
            }
        }
        let all = TestSet {
            name: "all".into(),
            documents: plan.documents().cloned().collect(),
        };
        let translations: Vec<DocumentTranslation> =
            cells.iter().map(|c| c.translation.clone()).collect();
        let lengths = length_report_with(
            &all,
            &translations,
            |d| plan.tokenizer.spec_for(d).into_owned(),
            plan.top_n,
        )?;
        Ok(PairSummary {
            backend,
            strategy,
            documents: cells.len(),
            excluded,
            directions,
            domains,
            lengths,
            uncached,
            cached,
            turns,
        })
    }
}

fn strategy_label(s: &StrategyPlan, human: bool) -> String {
    if human {
        s.display_name()
    } else {
        s.slug()
    }
}

fn main_table(pairs: &[PairSummary<'_>], scorer: Option<&str>, human: bool) -> Table {
    let seg_header = match (human, scorer) {
        (true, Some(name)) => format!("Seg-mean ({name})"),
        (true, None) => "Seg-mean".to_string(),
        (false, _) => "segment_mean".to_string(),
    };
    let header: Vec<String> = if human {
        vec![
            "Backend".into(),
            "Strategy".into(),
            "dBLEU".into(),
            "BlonDE".into(),
            seg_header,
            "Docs".into(),
            "Excluded".into(),
        ]
    } else {
        vec![
            "backend".into(),
            "strategy".into(),
            "dbleu".into(),
            "blonde".into(),
            seg_header,
            "documents".into(),
            "excluded".into(),
        ]
    };
    let mut t = Table::new(&header);
    for p in pairs {
        t.push(vec![
            p.backend.to_string(),
            strategy_label(p.strategy, human),
            format_score(p.avg_dbleu()),
            format_score(p.avg_blonde()),
            format_score(p.avg_segment()),
            p.documents.to_string(),
            p.excluded.to_string(),
        ]);
    }
    t
}

fn per_direction_table(pairs: &[PairSummary<'_>], human: bool) -> Table {
    let header: &[&str] = if human {
        &[
            "Backend",
            "Strategy",
            "Direction",
            "Docs",
            "dBLEU",
            "BlonDE",
            "Seg-mean",
        ]
    } else {
        &[
            "backend",
            "strategy",
            "direction",
            "documents",
            "dbleu",
            "blonde",
            "segment_mean",
        ]
    };
    let mut t = Table::new(header);
    for p in pairs {
        for (dir, r) in &p.directions {
            t.push(vec![
                p.backend.to_string(),
                strategy_label(p.strategy, human),
                dir.clone(),
                r.aggregate.documents.to_string(),
                format_score(r.aggregate.dbleu),
                format_score(pct(r.aggregate.blonde.as_ref().and_then(|b| b.combined))),
                format_score(pct(r.aggregate.segment_mean)),
            ]);
        }
    }
    t
}

/// The SegmentLevel pair with the same backend and ICL setting.
fn baseline<'p, 'a>(
    pairs: &'p [PairSummary<'a>],
    p: &PairSummary<'_>,
) -> Option<&'p PairSummary<'a>> {
    if p.strategy.mode == Mode::SegmentLevel {
        return None;
    }
    pairs.iter().find(|b| {
        b.backend == p.backend
            && b.strategy.mode == Mode::SegmentLevel
            && b.strategy.icl == p.strategy.icl
    })
}

fn domain_list(pairs: &[PairSummary<'_>]) -> Vec<String> {
    let mut all: Vec<String> = pairs
        .iter()
        .flat_map(|p| p.domains.keys().cloned())
        .collect();
    all.sort();
    all.dedup();
    all
}

fn domains_csv(pairs: &[PairSummary<'_>]) -> Table {
    let mut t = Table::new(&[
        "domain",
        "backend",
        "strategy",
        "dbleu",
        "delta_vs_segment_level",
    ]);
    for domain in domain_list(pairs) {
        for p in pairs {
            let score = p.domain_score(&domain);
            let delta = match (
                score,
                baseline(pairs, p).and_then(|b| b.domain_score(&domain)),
            ) {
                (Some(s), Some(b)) => format_delta(s, b),
                _ => MISSING.to_string(),
            };
            t.push(vec![
                domain.clone(),
                p.backend.to_string(),
                p.strategy.slug(),
                format_score(score),
                delta,
            ]);
        }
    }
    t
}

fn domains_md(pairs: &[PairSummary<'_>]) -> Table {
    let multi_backend = pairs.iter().any(|p| p.backend != pairs[0].backend);
    let mut header = vec!["Domain".to_string()];
    header.extend(pairs.iter().map(|p| {
        if multi_backend {
            format!("{} / {}", p.backend, p.strategy.display_name())
        } else {
            p.strategy.display_name()
        }
    }));
    let mut t = Table::new(&header);
    for domain in domain_list(pairs) {
        let mut row = vec![domain.clone()];
        for p in pairs {
            let score = p.domain_score(&domain);
            let base = baseline(pairs, p).and_then(|b| b.domain_score(&domain));
            row.push(match (score, base) {
                (Some(s), Some(b)) => format!("{} ({})", format_score(Some(s)), format_delta(s, b)),
                (s, _) => format_score(s),
            });
        }
        t.push(row);
    }
    t
}

fn topn_tables(pairs: &[PairSummary<'_>]) -> (Table, Table) {
    let mut rows = Table::new(&[
        "backend",
        "strategy",
        "rank",
        "doc_id",
        "ref_tokens",
        "hyp_tokens",
        "hyp_ref_ratio",
    ]);
    let mut totals = Table::new(&[
        "backend",
        "strategy",
        "documents",
        "ref_tokens",
        "hyp_tokens",
        "hyp_ref_ratio",
    ]);
    for p in pairs {
        for (rank, r) in p.lengths.rows.iter().enumerate() {
            let ratio = r
                .hyp_tokens
                .filter(|_| r.ref_tokens > 0)
                .map(|h| h as f64 / r.ref_tokens as f64);
            rows.push(vec![
                p.backend.to_string(),
                p.strategy.slug(),
                (rank + 1).to_string(),
                r.doc_id.clone(),
                r.ref_tokens.to_string(),
                r.hyp_tokens
                    .map_or_else(|| MISSING.to_string(), |h| h.to_string()),
                format_ratio(ratio),
            ]);
        }
        let ref_total = p.lengths.total_ref_tokens;
        totals.push(vec![
            p.backend.to_string(),
            p.strategy.slug(),
            p.lengths.rows.len().to_string(),
            ref_total.to_string(),
            p.lengths.total_hyp_tokens.to_string(),
            format_ratio(
                (ref_total > 0).then(|| p.lengths.total_hyp_tokens as f64 / ref_total as f64),
            ),
        ]);
    }
    (rows, totals)
}

fn costs_table(pairs: &[PairSummary<'_>], human: bool) -> Table {
    let header: &[&str] = if human {
        &[
            "Backend",
            "Strategy",
            "Cache",
            "Docs",
            "Turns",
            "Prefill (new)",
            "Prefill (reused)",
            "Generated",
        ]
    } else {
        &[
            "backend",
            "strategy",
            "cache_mode",
            "documents",
            "turns",
            "prefill_new",
            "prefill_reused",
            "generated",
        ]
    };
    let mut t = Table::new(header);
    for p in pairs {
        for (mode, totals) in [("uncached", &p.uncached), ("cached", &p.cached)] {
            t.push(vec![
                p.backend.to_string(),
                strategy_label(p.strategy, human),
                mode.to_string(),
                p.documents.to_string(),
                p.turns.to_string(),
                totals.prefill_new.to_string(),
                totals.prefill_reused.to_string(),
                totals.generated.to_string(),
            ]);
        }
    }
    t
}

fn titled(title: &str, table: &Table) -> String {
    format!("# {title}\n\n{}", table.to_markdown())
}

/// Renders every report as (relative path, contents). Output depends only
/// on the plan and the artifacts, never on timing.
pub fn render_reports(
    plan: &RunPlan,
    artifacts: &RunArtifacts,
) -> Result<BTreeMap<String, String>, RunError> {
    let ctx = Context::new(plan)?;
    let mut pairs = Vec::new();
    for backend in &plan.backends {
        for strategy in &plan.strategies {
            let slug = strategy.slug();
            let cells: Vec<&CellRecord> = artifacts.cells_for(&backend.name, &slug).collect();
            let excluded = artifacts
                .manifest
                .exclusions
                .iter()
                .filter(|e| e.backend == backend.name && e.strategy == slug)
                .count();
            pairs.push(ctx.summarize(&backend.name, strategy, &cells, excluded)?);
        }
    }
    let scorer = plan.scoring.segment_scorer_name();
    let mut out = BTreeMap::new();
    out.insert(
        "main.csv".into(),
        main_table(&pairs, scorer, false).to_csv(),
    );
    out.insert(
        "main.md".into(),
        titled(
            "Results (average across directions)",
            &main_table(&pairs, scorer, true),
        ),
    );
    out.insert(
        "per_direction.csv".into(),
        per_direction_table(&pairs, false).to_csv(),
    );
    out.insert(
        "per_direction.md".into(),
        titled("Results per direction", &per_direction_table(&pairs, true)),
    );
    out.insert("domains.csv".into(), domains_csv(&pairs).to_csv());
    out.insert(
        "domains.md".into(),
        titled(
            "dBLEU by domain (delta vs. segment-level)",
            &domains_md(&pairs),
        ),
    );
    let (rows, totals) = topn_tables(&pairs);
    out.insert("topn_lengths.csv".into(), rows.to_csv());
    out.insert("topn_totals.csv".into(), totals.to_csv());
    out.insert("costs.csv".into(), costs_table(&pairs, false).to_csv());
    out.insert(
        "costs.md".into(),
        titled("Token costs", &costs_table(&pairs, true)),
    );
    let mut excl = Table::new(&["backend", "strategy", "doc_id", "reason"]);
    for e in &artifacts.manifest.exclusions {
        excl.push(vec![
            e.backend.clone(),
            e.strategy.clone(),
            e.doc_id.clone(),
            e.reason.clone(),
        ]);
    }
    out.insert("exclusions.csv".into(), excl.to_csv());
    for p in &pairs {
        let mut json = serde_json::to_string_pretty(&p.directions).expect("metrics serialize");
        json.push('\n');
        out.insert(
            format!("metrics/{}/{}.json", p.backend, p.strategy.slug()),
            json,
        );
    }
    Ok(out)
}

/// Scores translations produced outside a run, grouped by direction.
/// Every translation must name a document of `testset`.
pub fn score_translations(
    testset: &TestSet,
    translations: &[DocumentTranslation],
    scoring: &ScoringPlan,
    tokenizer: &TokenizerPolicy,
) -> Result<BTreeMap<String, MetricReport>, RunError> {
    let mut by_direction: BTreeMap<String, Vec<(&DocumentTranslation, &Document)>> =
        BTreeMap::new();
    for t in translations {
        let doc = testset.get(&t.doc_id).ok_or_else(|| {
            RunError::Invalid(format!("translation for unknown document {}", t.doc_id))
        })?;
        by_direction
            .entry(doc.direction())
            .or_default()
            .push((t, doc));
    }
    let mut out = BTreeMap::new();
    for (direction, pairs) in by_direction {
        let first = pairs[0].1;
        let spec = tokenizer.spec_for(first);
        let blonde = scoring.blonde_for(&first.tgt_lang)?;
        let opts = ScoringOptions {
            dbleu: scoring.dbleu,
            bleu: Some(BleuConfig::for_target(&first.tgt_lang)),
            blonde: blonde.as_ref(),
            scorer: scoring.segment_scorer.as_deref(),
            tokenizer: &spec,
        };
        out.insert(direction, evaluate(&pairs, &opts)?);
    }
    Ok(out)
}

/// Writes all reports under `<run>/reports` and returns their paths.
pub fn emit_reports(plan: &RunPlan, artifacts: &RunArtifacts) -> Result<Vec<PathBuf>, RunError> {
    let dir = artifacts.run_dir.join("reports");
    let mut written = Vec::new();
    for (name, body) in render_reports(plan, artifacts)? {
        let path = dir.join(&name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
