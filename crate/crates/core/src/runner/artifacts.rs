use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{is_safe_name, RunPlan};
use super::RunError;
use crate::costing::{CostLedger, Exchange, Transcript};
use crate::strategy::{DocumentTranslation, Mode};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub backend: String,
    pub strategy: String,
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub tokenizer: String,
    pub created_at: String,
    pub updated_at: String,
    pub cells_total: usize,
    pub cells_completed: usize,
    pub exclusions: Vec<Exclusion>,
}

impl Manifest {
    pub(crate) fn fresh(plan: &RunPlan, now: String) -> Self {
        Self {
            run_id: plan.run_id.clone(),
            config_hash: plan.config_hash(),
            template_hashes: plan.template_hashes(),
            tokenizer: plan.tokenizer.id(),
            created_at: now.clone(),
            updated_at: now,
            cells_total: plan.backends.len() * plan.strategies.len() * plan.documents().count(),
            cells_completed: 0,
            exclusions: Vec::new(),
        }
    }

    /// Reads the manifest and checks it belongs to `plan`.
    pub(crate) fn load_for(plan: &RunPlan) -> Result<Option<Self>, RunError> {
        let path = plan.run_dir().join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let manifest: Manifest = read_json(&path)?;
        let expected = plan.config_hash();
        if manifest.config_hash != expected {
            return Err(RunError::ManifestMismatch {
                path: path.display().to_string(),
                expected,
                found: manifest.config_hash,
            });
        }
        Ok(Some(manifest))
    }
}

/// Both cost views of one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLedgers {
    pub turns: usize,
    pub uncached: CostLedger,
    pub cached: CostLedger,
}

/// One completed (backend, strategy, document) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub backend: String,
    pub strategy: String,
    pub mode: Mode,
    pub icl: bool,
    pub doc_id: String,
    pub translation: DocumentTranslation,
    pub ledgers: CellLedgers,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    /// Completed cells in plan order (backend, strategy, document).
    pub cells: Vec<CellRecord>,
}

impl RunArtifacts {
    pub fn cells_for<'a>(
        &'a self,
        backend: &'a str,
        strategy: &'a str,
    ) -> impl Iterator<Item = &'a CellRecord> + 'a {
        self.cells
            .iter()
            .filter(move |c| c.backend == backend && c.strategy == strategy)
    }
}

/// Directory name for a document id: the id itself when filesystem-safe,
/// otherwise a sanitized form with a hash suffix.
pub fn doc_dir_name(doc_id: &str) -> String {
    if is_safe_name(doc_id) && doc_id.len() <= 100 {
        return doc_id.to_string();
    }
    let cleaned: String = doc_id
        .chars()
        .take(60)
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    let digest = hex::encode(Sha256::digest(doc_id.as_bytes()));
    format!("{cleaned}-{}", &digest[..12])
}

/// Where one cell's files live inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPaths {
    pub raw_dir: PathBuf,
    pub translation: PathBuf,
    pub ledger: PathBuf,
}

impl CellPaths {
    pub fn new(run_dir: &Path, backend: &str, strategy: &str, doc_id: &str) -> Self {
        let doc = doc_dir_name(doc_id);
        Self {
            raw_dir: run_dir.join("raw").join(backend).join(strategy).join(&doc),
            translation: run_dir
                .join("translations")
                .join(backend)
                .join(strategy)
                .join(format!("{doc}.json")),
            ledger: run_dir
                .join("ledgers")
                .join(backend)
                .join(strategy)
                .join(format!("{doc}.json")),
        }
    }

    pub fn turn(&self, index: usize) -> PathBuf {
        self.raw_dir.join(format!("turn_{index}.json"))
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| RunError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes pretty JSON through a temporary file and a rename, so readers
/// never observe a partial file.
pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

/// Reads the persisted exchanges of one cell, in turn order.
pub fn load_transcript(paths: &CellPaths, mode: Mode) -> Result<Transcript, RunError> {
    let mut exchanges = Vec::new();
    loop {
        let p = paths.turn(exchanges.len());
        if !p.exists() {
            break;
        }
        exchanges.push(read_json::<Exchange>(&p)?);
    }
    Ok(Transcript { mode, exchanges })
}

/// Loads every completed cell of a run, in plan order.
pub fn load_artifacts(plan: &RunPlan) -> Result<RunArtifacts, RunError> {
    let run_dir = plan.run_dir();
    let manifest = Manifest::load_for(plan)?
        .ok_or_else(|| RunError::NoRun(run_dir.join(MANIFEST).display().to_string()))?;
    let mut cells = Vec::new();
    for backend in &plan.backends {
        for strategy in &plan.strategies {
            let slug = strategy.slug();
            for doc in plan.documents() {
                let paths = CellPaths::new(&run_dir, &backend.name, &slug, &doc.id);
                if !paths.translation.exists() {
                    continue;
                }
                cells.push(CellRecord {
                    backend: backend.name.clone(),
                    strategy: slug.clone(),
                    mode: strategy.mode,
                    icl: strategy.icl,
                    doc_id: doc.id.clone(),
                    translation: read_json(&paths.translation)?,
                    ledgers: read_json(&paths.ledger)?,
                });
            }
        }
    }
    Ok(RunArtifacts {
        run_dir,
        manifest,
        cells,
    })
}
