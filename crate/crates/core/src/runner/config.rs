use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::corpus::{
    filter_testset, load_corpus, load_exemplars, CorpusFormat, DocFilter, Document, Exemplar,
    TestSet,
};
use crate::costing::{ExternalCounts, TokenizerSpec};
use crate::gateway::BackendConfig;
use crate::metrics::{
    BlondeResources, CommandScorer, ScoreFileScorer, SegmentScorer, SentenceBleuScorer,
};
use crate::strategy::{
    strategy_display_name, strategy_slug, Mode, PromptTemplateSet, StrategyConfig,
    DEFAULT_TEMPLATE_SET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    Halt,
    #[default]
    SkipAndReport,
}

/// Token unit for ledgers and length reports.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerChoice {
    /// Whitespace, or characters for zh/ja targets.
    #[default]
    Auto,
    Whitespace,
    Char,
    /// JSON object of pre-computed counts.
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentScorerConfig {
    SentenceBleu,
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    ScoreFile {
        input: PathBuf,
        output: PathBuf,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    #[serde(default = "yes")]
    pub dbleu: bool,
    #[serde(default = "yes")]
    pub blonde: bool,
    /// Directory with `<lang>/` marker lists; built-in lists otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blonde_resources: Option<PathBuf>,
    #[serde(default = "default_scorer")]
    pub segment_scorer: Option<SegmentScorerConfig>,
}

fn default_scorer() -> Option<SegmentScorerConfig> {
    Some(SegmentScorerConfig::SentenceBleu)
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            dbleu: true,
            blonde: true,
            blonde_resources: None,
            segment_scorer: default_scorer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub mode: Mode,
    #[serde(default)]
    pub icl: bool,
    /// JSONL exemplar file; exactly 3 per language direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    /// Built-in template set id or a path to a template file.
    #[serde(default = "default_templates")]
    pub templates: String,
}

fn default_templates() -> String {
    DEFAULT_TEMPLATE_SET.to_string()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_concurrency() -> usize {
    1
}

fn default_top_n() -> usize {
    10
}

/// The run config file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub testsets: Vec<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub max_concurrent_documents: usize,
    #[serde(default)]
    pub fail_policy: FailPolicy,
    #[serde(default)]
    pub tokenizer: TokenizerChoice,
    /// Documents in the longest-documents length report.
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<DocFilter>,
    pub backends: Vec<BackendConfig>,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            RunError::Schema {
                key,
                message: e.into_inner().message().trim().to_string(),
            }
        })
    }
}

/// One strategy with its exemplars grouped by direction.
#[derive(Debug, Clone)]
pub struct StrategyPlan {
    pub mode: Mode,
    pub icl: bool,
    pub exemplars: BTreeMap<String, Vec<Exemplar>>,
    pub templates: Arc<PromptTemplateSet>,
}

impl StrategyPlan {
    pub fn new(mode: Mode, icl: bool, exemplars: Vec<Exemplar>) -> Self {
        let mut grouped: BTreeMap<String, Vec<Exemplar>> = BTreeMap::new();
        for ex in exemplars {
            grouped.entry(ex.direction()).or_default().push(ex);
        }
        Self {
            mode,
            icl,
            exemplars: grouped,
            templates: Arc::new(PromptTemplateSet::default_set()),
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn slug(&self) -> String {
        strategy_slug(self.mode, self.icl)
    }

    pub fn display_name(&self) -> String {
        strategy_display_name(self.mode, self.icl)
    }

    /// The validated strategy for one direction such as `en-de`.
    pub fn config_for(&self, direction: &str) -> Result<StrategyConfig, RunError> {
        let exemplars = self.exemplars.get(direction).cloned().unwrap_or_default();
        let cfg = StrategyConfig {
            mode: self.mode,
            icl: self.icl,
            exemplars,
            templates: self.templates.id().to_string(),
        };
        cfg.validate().map_err(|source| RunError::Strategy {
            strategy: self.slug(),
            direction: direction.to_string(),
            source,
        })?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub enum TokenizerPolicy {
    Auto,
    Fixed(TokenizerSpec),
}

impl TokenizerPolicy {
    pub fn spec_for(&self, doc: &Document) -> Cow<'_, TokenizerSpec> {
        match self {
            TokenizerPolicy::Auto => Cow::Owned(TokenizerSpec::for_language(&doc.tgt_lang)),
            TokenizerPolicy::Fixed(spec) => Cow::Borrowed(spec),
        }
    }

    pub fn id(&self) -> String {
        match self {
            TokenizerPolicy::Auto => "auto".into(),
            TokenizerPolicy::Fixed(spec) => spec.id(),
        }
    }
}

/// Scoring settings with resources resolved.
#[derive(Clone)]
pub struct ScoringPlan {
    pub dbleu: bool,
    pub blonde: bool,
    pub blonde_resources: Option<PathBuf>,
    pub segment_scorer: Option<Arc<dyn SegmentScorer>>,
}

impl std::fmt::Debug for ScoringPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoringPlan")
            .field("dbleu", &self.dbleu)
            .field("blonde", &self.blonde)
            .field("blonde_resources", &self.blonde_resources)
            .field(
                "segment_scorer",
                &self.segment_scorer.as_ref().map(|s| s.name().to_string()),
            )
            .finish()
    }
}

impl Default for ScoringPlan {
    fn default() -> Self {
        Self {
            dbleu: true,
            blonde: true,
            blonde_resources: None,
            segment_scorer: Some(Arc::new(SentenceBleuScorer::default())),
        }
    }
}

impl ScoringPlan {
    pub fn segment_scorer_name(&self) -> Option<&str> {
        self.segment_scorer.as_ref().map(|s| s.name())
    }

    /// BlonDE-lite lists for a target language, if any exist.
    pub fn blonde_for(&self, lang: &str) -> Result<Option<BlondeResources>, RunError> {
        if !self.blonde {
            return Ok(None);
        }
        Ok(BlondeResources::resolve(
            self.blonde_resources.as_deref(),
            lang,
        )?)
    }
}

/// A validated, fully loaded run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub run_id: String,
    pub testsets: Vec<TestSet>,
    pub backends: Vec<BackendConfig>,
    pub strategies: Vec<StrategyPlan>,
    pub tokenizer: TokenizerPolicy,
    pub scoring: ScoringPlan,
    pub output_dir: PathBuf,
    pub max_concurrent_documents: usize,
    pub fail_policy: FailPolicy,
    pub top_n: usize,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn invalid(message: impl Into<String>) -> RunError {
    RunError::Invalid(message.into())
}

/// Reads, parses and validates a run config. Relative paths are resolved
/// against the config file's directory.
pub fn load_run_config(path: &Path) -> Result<RunPlan, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = RunConfig::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    RunPlan::from_config(cfg, base)
}

impl RunPlan {
    /// Minimal plan for programmatic use; validate with [`RunPlan::validate`].
    pub fn new(
        run_id: &str,
        testsets: Vec<TestSet>,
        backends: Vec<BackendConfig>,
        strategies: Vec<StrategyPlan>,
        output_dir: &Path,
    ) -> Self {
        Self {
            run_id: run_id.to_string(),
            testsets,
            backends,
            strategies,
            tokenizer: TokenizerPolicy::Auto,
            scoring: ScoringPlan::default(),
            output_dir: output_dir.to_path_buf(),
            max_concurrent_documents: 1,
            fail_policy: FailPolicy::default(),
            top_n: default_top_n(),
        }
    }

    pub fn from_config(cfg: RunConfig, base: &Path) -> Result<Self, RunError> {
        let mut testsets = Vec::with_capacity(cfg.testsets.len());
        for p in &cfg.testsets {
            let ts = load_corpus(&resolve(base, p), CorpusFormat::Jsonl)?;
            testsets.push(match &cfg.filter {
                Some(f) => filter_testset(&ts, |k| f.matches(k)),
                None => ts,
            });
        }
        let mut strategies = Vec::with_capacity(cfg.strategies.len());
        for entry in &cfg.strategies {
            let exemplars = match &entry.exemplars {
                Some(p) => load_exemplars(&resolve(base, p))?,
                None => Vec::new(),
            };
            let templates = if Path::new(&entry.templates).extension().is_some() {
                PromptTemplateSet::load(&resolve(base, Path::new(&entry.templates)))?
            } else {
                PromptTemplateSet::resolve(&entry.templates)?
            };
            strategies.push(
                StrategyPlan::new(entry.mode, entry.icl, exemplars).with_templates(templates),
            );
        }
        let tokenizer = match &cfg.tokenizer {
            TokenizerChoice::Auto => TokenizerPolicy::Auto,
            TokenizerChoice::Whitespace => TokenizerPolicy::Fixed(TokenizerSpec::Whitespace),
            TokenizerChoice::Char => TokenizerPolicy::Fixed(TokenizerSpec::Char),
            TokenizerChoice::External(p) => TokenizerPolicy::Fixed(TokenizerSpec::External(
                ExternalCounts::load(&resolve(base, p))?,
            )),
        };
        let segment_scorer: Option<Arc<dyn SegmentScorer>> = match &cfg.scoring.segment_scorer {
            None => None,
            Some(SegmentScorerConfig::SentenceBleu) => {
                Some(Arc::new(SentenceBleuScorer::default()))
            }
            Some(SegmentScorerConfig::Command { program, args }) => Some(Arc::new(CommandScorer {
                name: Path::new(program)
                    .file_name()
                    .map_or_else(|| program.clone(), |n| n.to_string_lossy().into_owned()),
                program: program.clone(),
                args: args.clone(),
            })),
            Some(SegmentScorerConfig::ScoreFile { input, output }) => {
                Some(Arc::new(ScoreFileScorer {
                    name: "score_file".into(),
                    input: resolve(base, input),
                    output: resolve(base, output),
                }))
            }
        };
        let plan = Self {
            run_id: cfg.run_id,
            testsets,
            backends: cfg.backends,
            strategies,
            tokenizer,
            scoring: ScoringPlan {
                dbleu: cfg.scoring.dbleu,
                blonde: cfg.scoring.blonde,
                blonde_resources: cfg.scoring.blonde_resources.map(|p| resolve(base, &p)),
                segment_scorer,
            },
            output_dir: resolve(base, &cfg.output_dir),
            max_concurrent_documents: cfg.max_concurrent_documents,
            fail_policy: cfg.fail_policy,
            top_n: cfg.top_n,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if !is_safe_name(&self.run_id) {
            return Err(invalid(format!(
                "run_id {:?} must be non-empty, use only [A-Za-z0-9._-] and not start with '.'",
                self.run_id
            )));
        }
        if self.max_concurrent_documents == 0 {
            return Err(invalid("max_concurrent_documents must be at least 1"));
        }
        if self.testsets.is_empty() || self.backends.is_empty() || self.strategies.is_empty() {
            return Err(invalid(
                "at least one testset, backend and strategy are required",
            ));
        }
        let mut ids = HashSet::new();
        for doc in self.documents() {
            if !ids.insert(doc.id.as_str()) {
                return Err(invalid(format!(
                    "document id {} appears in more than one testset",
                    doc.id
                )));
            }
        }
        let mut names = HashSet::new();
        for b in &self.backends {
            b.validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(invalid(format!("backend name {} is used twice", b.name)));
            }
        }
        let mut slugs = HashSet::new();
        let directions = self.directions();
        for s in &self.strategies {
            if !slugs.insert(s.slug()) {
                return Err(invalid(format!("strategy {} is listed twice", s.slug())));
            }
            for dir in s.exemplars.keys().chain(&directions) {
                s.config_for(dir)?;
            }
        }
        Ok(())
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.testsets.iter().flat_map(|t| &t.documents)
    }

    pub fn directions(&self) -> BTreeSet<String> {
        self.documents().map(Document::direction).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Hash of everything that determines the artifacts: documents,
    /// backends, strategies (with exemplars and templates) and tokenizer.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Strategy<'a> {
            slug: String,
            exemplars: &'a BTreeMap<String, Vec<Exemplar>>,
            templates: &'a str,
            template_hash: &'a str,
        }
        #[derive(Serialize)]
        struct Hashed<'a> {
            run_id: &'a str,
            testsets: Vec<(&'a str, &'a [Document])>,
            backends: &'a [BackendConfig],
            strategies: Vec<Strategy<'a>>,
            tokenizer: String,
        }
        let hashed = Hashed {
            run_id: &self.run_id,
            testsets: self
                .testsets
                .iter()
                .map(|t| (t.name.as_str(), t.documents.as_slice()))
                .collect(),
            backends: &self.backends,
            strategies: self
                .strategies
                .iter()
                .map(|s| Strategy {
                    slug: s.slug(),
                    exemplars: &s.exemplars,
                    templates: s.templates.id(),
                    template_hash: s.templates.content_hash(),
                })
                .collect(),
            tokenizer: self.tokenizer.id(),
        };
        let bytes = serde_json::to_vec(&hashed).expect("plan serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Template-set id to content hash, for every set in use.
    pub fn template_hashes(&self) -> BTreeMap<String, String> {
        self.strategies
            .iter()
            .map(|s| {
                (
                    s.templates.id().to_string(),
                    s.templates.content_hash().to_string(),
                )
            })
            .collect()
    }
}

pub(crate) fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}
