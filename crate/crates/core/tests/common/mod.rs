#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use docmt_core::corpus::{Document, Exemplar, TestSet};
use docmt_core::gateway::{
    BackendConfig, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError, MockIdentity,
};
use docmt_core::runner::{RunPlan, StrategyPlan};
use docmt_core::strategy::Mode;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const WORDS: &[&str] = &[
    "the",
    "report",
    "said",
    "however",
    "markets",
    "rose",
    "Berlin",
    "he",
    "she",
    "they",
    "because",
    "water",
    "policy",
    "will",
    "was",
    "city",
    "new",
    "old",
    "and",
    "school",
    "students",
    "therefore",
    "quickly",
    "announced",
    "plans",
    "river",
    "bridge",
    "council",
];

pub fn sentence(rng: &mut StdRng, len: usize) -> String {
    let words: Vec<&str> = (0..len)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect();
    format!("{}.", words.join(" "))
}

/// A document whose reference equals its source.
pub fn echo_doc(id: &str, domain: &str, segments: Vec<String>) -> Document {
    Document {
        id: id.into(),
        src_lang: "en".into(),
        tgt_lang: "de".into(),
        domain: domain.into(),
        reference_segments: Some(segments.clone()),
        source_segments: segments,
    }
}

pub fn random_doc(
    rng: &mut StdRng,
    id: &str,
    segments: std::ops::RangeInclusive<usize>,
) -> Document {
    let k = rng.random_range(segments);
    let segs = (0..k)
        .map(|_| {
            let len = rng.random_range(3..15);
            sentence(rng, len)
        })
        .collect();
    let domains = ["news", "literary", "speech", "social"];
    echo_doc(id, domains[rng.random_range(0..domains.len())], segs)
}

pub fn synthetic_testset(
    seed: u64,
    docs: usize,
    segments: std::ops::RangeInclusive<usize>,
) -> TestSet {
    let mut rng = StdRng::seed_from_u64(seed);
    let documents = (0..docs)
        .map(|i| random_doc(&mut rng, &format!("doc{i:03}"), segments.clone()))
        .collect();
    TestSet::new("synthetic", documents).unwrap()
}

pub fn exemplars(src: &str, tgt: &str) -> Vec<Exemplar> {
    (0..3)
        .map(|i| Exemplar {
            source: format!("Example source {i}."),
            target: format!("Example target {i}."),
            src_lang: src.into(),
            tgt_lang: tgt.into(),
        })
        .collect()
}

pub fn strategy(mode: Mode, icl: bool) -> StrategyPlan {
    let ex = if icl {
        exemplars("en", "de")
    } else {
        Vec::new()
    };
    StrategyPlan::new(mode, icl, ex)
}

pub fn all_strategies() -> Vec<StrategyPlan> {
    Mode::ALL
        .iter()
        .flat_map(|m| [strategy(*m, false), strategy(*m, true)])
        .collect()
}

pub fn identity_plan(
    run_id: &str,
    testset: TestSet,
    strategies: Vec<StrategyPlan>,
    out: &Path,
) -> RunPlan {
    RunPlan::new(
        run_id,
        vec![testset],
        vec![BackendConfig::mock("mock", BackendKind::MockIdentity)],
        strategies,
        out,
    )
}

/// Wraps a backend, counting calls and failing requests whose tag starts
/// with one of `fail_prefixes`.
pub struct Scripted {
    pub calls: AtomicUsize,
    pub fail_prefixes: Vec<String>,
    pub inner: Arc<dyn ChatBackend>,
}

impl Scripted {
    pub fn identity() -> Self {
        Self {
            calls: AtomicUsize::new(0),
            fail_prefixes: Vec::new(),
            inner: Arc::new(MockIdentity),
        }
    }

    pub fn failing(prefixes: &[&str]) -> Self {
        Self {
            fail_prefixes: prefixes.iter().map(|p| p.to_string()).collect(),
            ..Self::identity()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for Scripted {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self
            .fail_prefixes
            .iter()
            .any(|p| req.request_tag.starts_with(p.as_str()))
        {
            return Err(GatewayError::Http {
                status: 400,
                body: "refused".into(),
            });
        }
        self.inner.complete(req)
    }
}

/// Every file under `dir`, as (relative path, contents), sorted.
pub fn read_tree(dir: &Path) -> Vec<(String, String)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, String)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, std::fs::read_to_string(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
