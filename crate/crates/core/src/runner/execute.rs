use std::fs;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rayon::prelude::*;

use super::artifacts::{
    load_artifacts, read_json, write_json_atomic, CellLedgers, CellPaths, Exclusion, Manifest,
    RunArtifacts, MANIFEST,
};
use super::config::{FailPolicy, RunPlan, StrategyPlan};
use super::RunError;
use crate::corpus::Document;
use crate::costing::{count_tokens, ledger_for_session, CacheMode, Exchange, Transcript};
use crate::gateway::{BackendConfig, Gateway};
use crate::strategy::{init_session, FailReason, NextRequest, SessionError, SessionStatus};

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

enum Outcome {
    Reused,
    Completed,
    Failed(FailReason),
    /// Not started: interrupted or halted.
    Skipped,
}

struct Cell<'p> {
    backend: usize,
    strategy: &'p StrategyPlan,
    doc: Arc<Document>,
}

/// Shared stop signals for one execution.
#[derive(Default)]
struct Control {
    halted: AtomicBool,
    interrupted: AtomicBool,
    started: AtomicUsize,
    fatal: Mutex<Option<RunError>>,
}

/// Executes a [`RunPlan`], resuming from whatever a previous execution of
/// the same plan left on disk.
pub struct Executor<'p> {
    plan: &'p RunPlan,
    gateways: Vec<Gateway>,
    cell_limit: Option<usize>,
}

/// Runs every cell of the plan and returns the completed artifacts.
pub fn execute(plan: &RunPlan) -> Result<RunArtifacts, RunError> {
    Executor::new(plan)?.run()
}

impl<'p> Executor<'p> {
    /// Validates the plan and connects every backend; missing API keys are
    /// reported here, before any request.
    pub fn new(plan: &'p RunPlan) -> Result<Self, RunError> {
        plan.validate()?;
        let gateways = plan
            .backends
            .iter()
            .map(Gateway::connect)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            plan,
            gateways,
            cell_limit: None,
        })
    }

    /// Replaces the connected backend named `name`.
    pub fn with_gateway(mut self, name: &str, gateway: Gateway) -> Result<Self, RunError> {
        let idx = self
            .plan
            .backends
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| RunError::Invalid(format!("no backend named {name}")))?;
        self.gateways[idx] = gateway;
        Ok(self)
    }

    /// Stops after `cells` newly computed cells, leaving the rest for a
    /// later resume. Reused cells do not count.
    pub fn interrupt_after(mut self, cells: usize) -> Self {
        self.cell_limit = Some(cells);
        self
    }

    pub fn run(&self) -> Result<RunArtifacts, RunError> {
        let plan = self.plan;
        let run_dir = plan.run_dir();
        fs::create_dir_all(&run_dir).map_err(|source| RunError::OutputNotWritable {
            path: run_dir.display().to_string(),
            source,
        })?;
        let mut manifest =
            Manifest::load_for(plan)?.unwrap_or_else(|| Manifest::fresh(plan, now()));
        manifest.updated_at = now();
        write_json_atomic(&run_dir.join(MANIFEST), &manifest).map_err(|e| match e {
            RunError::Io { path, source } => RunError::OutputNotWritable { path, source },
            other => other,
        })?;

        let docs: Vec<Arc<Document>> = plan.documents().cloned().map(Arc::new).collect();
        let per_backend: Vec<Vec<Cell<'_>>> = (0..plan.backends.len())
            .map(|backend| {
                plan.strategies
                    .iter()
                    .flat_map(|strategy| {
                        docs.iter().map(move |doc| Cell {
                            backend,
                            strategy,
                            doc: Arc::clone(doc),
                        })
                    })
                    .collect()
            })
            .collect();

        let control = Control::default();
        let outcomes: Vec<Vec<Outcome>> = std::thread::scope(|scope| {
            let handles: Vec<_> = per_backend
                .iter()
                .map(|cells| scope.spawn(|| self.run_backend(cells, &control)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("backend worker panicked"))
                .collect()
        });
        if let Some(err) = control.fatal.into_inner().expect("lock") {
            return Err(err);
        }

        let mut exclusions = Vec::new();
        let (mut new_cells, mut skipped) = (0, 0);
        for (cells, results) in per_backend.iter().zip(&outcomes) {
            for (cell, outcome) in cells.iter().zip(results) {
                match outcome {
                    Outcome::Failed(reason) => exclusions.push(Exclusion {
                        backend: plan.backends[cell.backend].name.clone(),
                        strategy: cell.strategy.slug(),
                        doc_id: cell.doc.id.clone(),
                        reason: reason.to_string(),
                    }),
                    Outcome::Completed => new_cells += 1,
                    Outcome::Skipped => skipped += 1,
                    Outcome::Reused => {}
                }
            }
        }
        let completed = outcomes
            .iter()
            .flatten()
            .filter(|o| matches!(o, Outcome::Reused | Outcome::Completed))
            .count();
        manifest.cells_completed = completed;
        manifest.exclusions = exclusions;
        manifest.updated_at = now();
        write_json_atomic(&run_dir.join(MANIFEST), &manifest)?;
        info!(
            "run {}: {completed}/{} cells complete, {} excluded",
            plan.run_id,
            manifest.cells_total,
            manifest.exclusions.len()
        );

        if control.halted.load(Ordering::SeqCst) {
            let first = manifest
                .exclusions
                .first()
                .cloned()
                .expect("halt records a failure");
            return Err(RunError::Halted {
                backend: first.backend,
                strategy: first.strategy,
                doc_id: first.doc_id,
                reason: first.reason,
            });
        }
        if control.interrupted.load(Ordering::SeqCst) && skipped > 0 {
            return Err(RunError::Interrupted {
                completed: new_cells,
                pending: skipped + manifest.exclusions.len(),
            });
        }
        load_artifacts(plan)
    }

    fn run_backend(&self, cells: &[Cell<'_>], control: &Control) -> Vec<Outcome> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.plan.max_concurrent_documents)
            .build()
            .expect("thread pool");
        pool.install(|| {
            cells
                .par_iter()
                .map(|cell| match self.run_cell(cell, control) {
                    Ok(outcome) => outcome,
                    Err(err) => {
                        control.halted.store(true, Ordering::SeqCst);
                        let mut fatal = control.fatal.lock().expect("lock");
                        fatal.get_or_insert(err);
                        Outcome::Skipped
                    }
                })
                .collect()
        })
    }

    fn claim(&self, control: &Control) -> bool {
        if control.halted.load(Ordering::SeqCst) {
            return false;
        }
        let Some(limit) = self.cell_limit else {
            return true;
        };
        if control.started.fetch_add(1, Ordering::SeqCst) < limit {
            true
        } else {
            control.interrupted.store(true, Ordering::SeqCst);
            false
        }
    }

    fn run_cell(&self, cell: &Cell<'_>, control: &Control) -> Result<Outcome, RunError> {
        let plan = self.plan;
        let backend_cfg: &BackendConfig = &plan.backends[cell.backend];
        let slug = cell.strategy.slug();
        let paths = CellPaths::new(&plan.run_dir(), &backend_cfg.name, &slug, &cell.doc.id);
        if paths.translation.exists() {
            return Ok(Outcome::Reused);
        }
        if !self.claim(control) {
            return Ok(Outcome::Skipped);
        }
        let gateway = &self.gateways[cell.backend];
        let spec = plan.tokenizer.spec_for(&cell.doc);
        let config = cell.strategy.config_for(&cell.doc.direction())?;
        let mut session = init_session(
            Arc::new(config),
            Arc::clone(&cell.strategy.templates),
            Arc::clone(&cell.doc),
        )?;
        let mut exchanges: Vec<Exchange> = Vec::new();
        loop {
            let request = match session.next_request()? {
                NextRequest::Done => break,
                NextRequest::Request(r) => r,
            };
            let turn_path = paths.turn(exchanges.len());
            let exchange = if turn_path.exists() {
                let stored: Exchange = read_json(&turn_path)?;
                if stored.request != request {
                    return Err(RunError::ReplayMismatch {
                        path: turn_path.display().to_string(),
                    });
                }
                stored
            } else {
                if let Some(limit) = backend_cfg.context_limit {
                    let mut tokens = 0;
                    for m in &request.messages {
                        tokens += count_tokens(&m.content, &spec)?;
                    }
                    if tokens > limit {
                        session.fail(FailReason::ContextOverflow {
                            turn: session.cursor(),
                            tokens,
                            limit,
                        });
                        break;
                    }
                }
                match gateway.complete(&request) {
                    Ok(response) => {
                        let exchange = Exchange { request, response };
                        write_json_atomic(&turn_path, &exchange)?;
                        exchange
                    }
                    Err(e) => {
                        session.fail(FailReason::Backend {
                            turn: session.cursor(),
                            message: e.to_string(),
                        });
                        break;
                    }
                }
            };
            let ingested = session.ingest_chat_response(&exchange.response);
            exchanges.push(exchange);
            match ingested {
                Ok(()) => {}
                Err(SessionError::Failed(_)) => break,
                Err(e) => return Err(e.into()),
            }
        }

        match session.status().clone() {
            SessionStatus::Done => {}
            SessionStatus::Failed(reason) => {
                warn!("{}/{}/{}: {reason}", backend_cfg.name, slug, cell.doc.id);
                if plan.fail_policy == FailPolicy::Halt {
                    control.halted.store(true, Ordering::SeqCst);
                }
                return Ok(Outcome::Failed(reason));
            }
            SessionStatus::InProgress => unreachable!("driver loop exits only when done or failed"),
        }
        let transcript = Transcript {
            mode: cell.strategy.mode,
            exchanges,
        };
        let ledgers = CellLedgers {
            turns: transcript.exchanges.len(),
            uncached: ledger_for_session(&transcript, CacheMode::Uncached, &spec)?,
            cached: ledger_for_session(&transcript, CacheMode::Cached, &spec)?,
        };
        write_json_atomic(&paths.ledger, &ledgers)?;
        // translation last: its presence marks the cell complete
        write_json_atomic(&paths.translation, &session.assemble_hypothesis()?)?;
        Ok(Outcome::Completed)
    }
}
