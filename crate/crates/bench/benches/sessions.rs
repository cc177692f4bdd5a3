use std::sync::Arc;

use criterion::{BenchmarkId, Criterion};
use docmt_bench::pair;
use docmt_core::costing::{
    compare_strategies, ledger_for_session, CacheMode, DocStats, Exchange, TokenizerSpec,
    Transcript,
};
use docmt_core::gateway::{ChatBackend, MockIdentity};
use docmt_core::strategy::{init_session, Mode, NextRequest, PromptTemplateSet, StrategyConfig};

/// Drives one multi-turn session against the identity mock.
fn transcript(segments: usize) -> Transcript {
    let (doc, _) = pair(1, segments, 20);
    let cfg = Arc::new(StrategyConfig::new(Mode::MultiTurn));
    let templates = Arc::new(PromptTemplateSet::default_set());
    let mut session = init_session(cfg, templates, Arc::new(doc)).unwrap();
    let mut exchanges = Vec::new();
    while let NextRequest::Request(request) = session.next_request().unwrap() {
        let response = MockIdentity.complete(&request).unwrap();
        session.ingest_chat_response(&response).unwrap();
        exchanges.push(Exchange { request, response });
    }
    Transcript {
        mode: Mode::MultiTurn,
        exchanges,
    }
}

fn drive(c: &mut Criterion) {
    let mut group = c.benchmark_group("multi_turn_session");
    for segments in [8, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(segments), &segments, |b, &k| {
            b.iter(|| transcript(k));
        });
    }
    group.finish();
}

fn ledgers(c: &mut Criterion) {
    let mut group = c.benchmark_group("cached_ledger");
    for segments in [8, 32] {
        let t = transcript(segments);
        group.bench_with_input(BenchmarkId::from_parameter(segments), &t, |b, t| {
            b.iter(|| {
                ledger_for_session(t, CacheMode::Cached, &TokenizerSpec::Whitespace).unwrap()
            });
        });
    }
    group.finish();
    c.bench_function("compare_strategies/32", |b| {
        let stats = DocStats::uniform(32, 100, 100);
        b.iter(|| compare_strategies(&stats));
    });
}

criterion::criterion_group!(benches, drive, ledgers);
criterion::criterion_main!(benches);
