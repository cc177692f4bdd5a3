mod common;

use std::fs;
use std::sync::Arc;

use common::*;
use docmt_core::gateway::{BackendConfig, BackendKind, Gateway};
use docmt_core::runner::{
    emit_reports, execute, load_artifacts, load_transcript, CellPaths, Executor, FailPolicy,
    RunError,
};
use docmt_core::strategy::{Message, Mode};

fn prefix_stable(requests: &[Vec<Message>], replies: &[String]) -> bool {
    requests.windows(2).zip(replies).all(|(pair, reply)| {
        let (prev, next) = (&pair[0], &pair[1]);
        next.len() == prev.len() + 2
            && next[..prev.len()] == prev[..]
            && next[prev.len()] == Message::assistant(reply.clone())
    })
}

#[test]
fn one_document_two_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let ts = synthetic_testset(1, 1, 4..=4);
    let plan = identity_plan(
        "pair",
        ts,
        vec![
            strategy(Mode::SegmentLevel, false),
            strategy(Mode::MultiTurn, false),
        ],
        dir.path(),
    );
    let artifacts = execute(&plan).unwrap();
    assert_eq!(artifacts.cells.len(), 2);
    let run_dir = plan.run_dir();
    let mt = CellPaths::new(&run_dir, "mock", "multi_turn", "doc000");
    let transcript = load_transcript(&mt, Mode::MultiTurn).unwrap();
    assert_eq!(transcript.exchanges.len(), 4);
    let requests: Vec<_> = transcript
        .exchanges
        .iter()
        .map(|e| e.request.messages.clone())
        .collect();
    let replies: Vec<_> = transcript
        .exchanges
        .iter()
        .map(|e| e.response.content.clone())
        .collect();
    assert!(prefix_stable(&requests, &replies));
    let sl = CellPaths::new(&run_dir, "mock", "segment_level", "doc000");
    assert_eq!(
        load_transcript(&sl, Mode::SegmentLevel)
            .unwrap()
            .exchanges
            .len(),
        4
    );
    for cell in &artifacts.cells {
        assert!(cell.translation.alignment_ok);
        assert_eq!(cell.ledgers.turns, 4);
    }
}

#[test]
fn interrupt_then_resume_reuses_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let ts = synthetic_testset(2, 2, 3..=3);
    let plan = identity_plan(
        "resume",
        ts,
        vec![
            strategy(Mode::SegmentLevel, false),
            strategy(Mode::MultiTurn, false),
        ],
        dir.path(),
    );
    let first = Arc::new(Scripted::identity());
    let err = Executor::new(&plan)
        .unwrap()
        .with_gateway("mock", Gateway::from_backend("mock", first.clone()))
        .unwrap()
        .interrupt_after(1)
        .run()
        .unwrap_err();
    assert!(
        matches!(
            err,
            RunError::Interrupted {
                completed: 1,
                pending: 3
            }
        ),
        "{err}"
    );
    assert_eq!(first.calls(), 3);
    assert_eq!(load_artifacts(&plan).unwrap().cells.len(), 1);

    let second = Arc::new(Scripted::identity());
    let artifacts = Executor::new(&plan)
        .unwrap()
        .with_gateway("mock", Gateway::from_backend("mock", second.clone()))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(artifacts.cells.len(), 4);
    assert_eq!(
        second.calls(),
        9,
        "only the three unfinished cells are sent"
    );
    assert_eq!(artifacts.manifest.cells_completed, 4);
}

#[test]
fn half_finished_session_replays_persisted_turns() {
    let dir = tempfile::tempdir().unwrap();
    let ts = synthetic_testset(3, 1, 5..=5);
    let plan = identity_plan(
        "replay",
        ts,
        vec![strategy(Mode::MultiTurnSourcePrimed, true)],
        dir.path(),
    );
    let full = execute(&plan).unwrap();
    let paths = CellPaths::new(&plan.run_dir(), "mock", "multi_turn_sp_icl", "doc000");
    fs::remove_file(&paths.translation).unwrap();
    fs::remove_file(&paths.ledger).unwrap();
    fs::remove_file(paths.turn(4)).unwrap();
    fs::remove_file(paths.turn(3)).unwrap();

    let backend = Arc::new(Scripted::identity());
    let resumed = Executor::new(&plan)
        .unwrap()
        .with_gateway("mock", Gateway::from_backend("mock", backend.clone()))
        .unwrap()
        .run()
        .unwrap();
    assert_eq!(backend.calls(), 2);
    assert_eq!(resumed.cells, full.cells);
}

#[test]
fn tampered_turn_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let plan = identity_plan(
        "tamper",
        synthetic_testset(4, 1, 3..=3),
        vec![strategy(Mode::MultiTurn, false)],
        dir.path(),
    );
    execute(&plan).unwrap();
    let paths = CellPaths::new(&plan.run_dir(), "mock", "multi_turn", "doc000");
    fs::remove_file(&paths.translation).unwrap();
    let turn = paths.turn(1);
    let text = fs::read_to_string(&turn)
        .unwrap()
        .replacen("Translate", "Translat", 1);
    fs::write(&turn, text).unwrap();
    let err = execute(&plan).unwrap_err();
    assert!(matches!(err, RunError::ReplayMismatch { .. }), "{err}");
}

#[test]
fn skip_and_report_records_exclusion() {
    let dir = tempfile::tempdir().unwrap();
    let ts = synthetic_testset(5, 3, 2..=4);
    let mut plan = identity_plan(
        "skip",
        ts,
        vec![
            strategy(Mode::SingleTurn, false),
            strategy(Mode::MultiTurn, false),
        ],
        dir.path(),
    );
    plan.max_concurrent_documents = 2;
    let backend = Arc::new(Scripted::failing(&["doc001#"]));
    let artifacts = Executor::new(&plan)
        .unwrap()
        .with_gateway("mock", Gateway::from_backend("mock", backend))
        .unwrap()
        .run()
        .unwrap();
    let ex = &artifacts.manifest.exclusions;
    assert_eq!(ex.len(), 2);
    assert!(ex
        .iter()
        .all(|e| e.doc_id == "doc001" && e.reason.contains("HTTP 400")));
    assert_eq!(ex[0].strategy, "single_turn");
    assert_eq!(artifacts.cells.len(), 2 * 3 - ex.len());
    assert_eq!(artifacts.manifest.cells_total, 6);

    let reports = emit_reports(&plan, &artifacts).unwrap();
    let exclusions = reports
        .iter()
        .find(|p| p.ends_with("exclusions.csv"))
        .unwrap();
    let text = fs::read_to_string(exclusions).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("doc001"));
}

#[test]
fn halt_policy_stops_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = identity_plan(
        "halt",
        synthetic_testset(6, 3, 2..=2),
        vec![strategy(Mode::SegmentLevel, false)],
        dir.path(),
    );
    plan.fail_policy = FailPolicy::Halt;
    let backend = Arc::new(Scripted::failing(&["doc000#"]));
    let err = Executor::new(&plan)
        .unwrap()
        .with_gateway("mock", Gateway::from_backend("mock", backend))
        .unwrap()
        .run()
        .unwrap_err();
    match err {
        RunError::Halted { doc_id, .. } => assert_eq!(doc_id, "doc000"),
        other => panic!("{other}"),
    }
}

#[test]
fn changed_config_is_not_silently_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let plan = identity_plan(
        "clash",
        synthetic_testset(7, 2, 2..=2),
        vec![strategy(Mode::MultiTurn, false)],
        dir.path(),
    );
    execute(&plan).unwrap();
    let other = identity_plan(
        "clash",
        synthetic_testset(8, 2, 2..=2),
        vec![strategy(Mode::MultiTurn, false)],
        dir.path(),
    );
    assert!(matches!(
        execute(&other),
        Err(RunError::ManifestMismatch { .. })
    ));
}

#[test]
fn unwritable_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let plan = identity_plan(
        "x",
        synthetic_testset(9, 1, 1..=1),
        vec![strategy(Mode::MultiTurn, false)],
        &blocker,
    );
    assert!(matches!(
        execute(&plan),
        Err(RunError::OutputNotWritable { .. })
    ));
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = identity_plan(
        "key",
        synthetic_testset(10, 1, 1..=1),
        vec![strategy(Mode::MultiTurn, false)],
        dir.path(),
    );
    let mut cfg = BackendConfig::mock("api", BackendKind::OpenaiCompatible);
    cfg.base_url = Some("http://127.0.0.1:9".into());
    cfg.model = "m".into();
    cfg.api_key_env = Some("DOCMT_TEST_KEY_THAT_IS_NOT_SET".into());
    plan.backends = vec![cfg];
    let err = execute(&plan).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(err.to_string().contains("DOCMT_TEST_KEY_THAT_IS_NOT_SET"));
    assert!(!plan.run_dir().exists());
}

#[test]
fn context_limit_excludes_long_documents() {
    let dir = tempfile::tempdir().unwrap();
    let short = echo_doc("short", "news", vec!["one two".into(), "three".into()]);
    let long = echo_doc("long", "news", vec!["w ".repeat(40).trim().to_string(); 3]);
    let ts = docmt_core::corpus::TestSet::new("t", vec![short, long]).unwrap();
    let mut plan = identity_plan(
        "ctx",
        ts,
        vec![strategy(Mode::SingleTurn, false)],
        dir.path(),
    );
    plan.backends[0].context_limit = Some(100);
    let artifacts = execute(&plan).unwrap();
    assert_eq!(artifacts.cells.len(), 1);
    let ex = &artifacts.manifest.exclusions[0];
    assert_eq!(ex.doc_id, "long");
    assert!(ex.reason.starts_with("context_overflow"), "{}", ex.reason);
}

#[test]
fn identity_reports() {
    let dir = tempfile::tempdir().unwrap();
    let plan = identity_plan(
        "ident",
        synthetic_testset(11, 4, 2..=6),
        all_strategies(),
        dir.path(),
    );
    let artifacts = execute(&plan).unwrap();
    assert_eq!(artifacts.cells.len(), 8 * 4);
    emit_reports(&plan, &artifacts).unwrap();
    let main = fs::read_to_string(plan.run_dir().join("reports/main.csv")).unwrap();
    let mut lines = main.lines();
    assert_eq!(
        lines.next().unwrap(),
        "backend,strategy,dbleu,blonde,segment_mean,documents,excluded"
    );
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2], "100.00", "{line}");
        if cols[1].starts_with("single_turn") {
            assert_eq!(cols[4], "-", "{line}");
        } else {
            assert_eq!(cols[4], "100.00", "{line}");
        }
    }
}
