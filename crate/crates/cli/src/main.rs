//! `docmt`: run, score and report document-level translation experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use docmt_core::corpus::{load_corpus_with_warnings, CorpusFormat};
use docmt_core::costing::{compare_strategies, comparison_csv, DocStats, Overheads, TokenizerSpec};
use docmt_core::runner::{
    emit_reports, execute, load_artifacts, load_run_config, score_translations, RunError,
    ScoringPlan, TokenizerPolicy,
};
use docmt_core::strategy::DocumentTranslation;
use log::{info, warn};

#[derive(Parser)]
#[command(
    name = "docmt",
    version,
    about = "Document-level MT experiments with chat LLMs"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that corpus files parse and every document is aligned.
    ValidateCorpus {
        /// JSONL corpus files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Execute (or resume) the run described by a config file, then write reports.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Only execute; skip report generation.
        #[arg(long)]
        no_reports: bool,
    },
    /// Score a JSONL file of translations against a corpus and print JSON metrics.
    Score(ScoreArgs),
    /// Re-generate reports for an existing run.
    Report {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Simulate cached and uncached token costs for uniform documents.
    SimulateCost(SimulateArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Corpus with references.
    #[arg(long)]
    corpus: PathBuf,
    /// JSONL, one translated document per line.
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long, value_enum, default_value_t = TokenizerArg::Auto)]
    tokenizer: TokenizerArg,
    /// Skip BlonDE-lite discourse scoring.
    #[arg(long)]
    no_blonde: bool,
    /// Skip the per-segment sentence-BLEU mean.
    #[arg(long)]
    no_segment_scorer: bool,
    /// Write the JSON here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Auto,
    Whitespace,
    Char,
}

#[derive(Args)]
struct SimulateArgs {
    /// Segment counts to simulate, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    segments: Vec<usize>,
    /// Tokens per source segment.
    #[arg(long)]
    seg_tokens: usize,
    /// Tokens per translated segment.
    #[arg(long)]
    out_tokens: usize,
    /// Per-segment instruction tokens.
    #[arg(long, default_value_t = 0)]
    instruction_tokens: usize,
    /// Whole-document instruction tokens (single-turn).
    #[arg(long, default_value_t = 0)]
    doc_instruction_tokens: usize,
    /// Primer tokens around the full source (source-primed).
    #[arg(long, default_value_t = 0)]
    primer_tokens: usize,
    /// Shared exemplar prefix tokens; 0 disables ICL.
    #[arg(long, default_value_t = 0)]
    icl_tokens: usize,
}

/// Exit status classes.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Validation(anyhow!(
            "{}: no such file",
            path.display()
        )))
    }
}

fn validate_corpus(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut bad = 0;
    for path in paths {
        match load_corpus_with_warnings(path, CorpusFormat::Jsonl) {
            Ok((ts, warnings)) => {
                for w in &warnings {
                    warn!("{}:{}: {}", path.display(), w.line, w.message);
                }
                let dirs: Vec<_> = ts.directions().into_iter().collect();
                let domains: Vec<_> = ts.domains().into_iter().collect();
                let refs = ts.documents.iter().filter(|d| d.has_reference()).count();
                println!(
                    "{}: ok, {} documents ({} with references), directions {}, domains {}",
                    path.display(),
                    ts.len(),
                    refs,
                    dirs.join(" "),
                    domains.join(" ")
                );
            }
            Err(e) => {
                bad += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if bad > 0 {
        return Err(Failure::Validation(anyhow!(
            "{bad} corpus file(s) failed validation"
        )));
    }
    Ok(())
}

fn run(config: &Path, no_reports: bool) -> Result<(), Failure> {
    require_file(config)?;
    let plan = load_run_config(config)?;
    let artifacts = execute(&plan)?;
    println!(
        "{}: {}/{} cells complete, {} excluded",
        artifacts.run_dir.display(),
        artifacts.manifest.cells_completed,
        artifacts.manifest.cells_total,
        artifacts.manifest.exclusions.len()
    );
    for e in &artifacts.manifest.exclusions {
        println!(
            "excluded {}/{}/{}: {}",
            e.backend, e.strategy, e.doc_id, e.reason
        );
    }
    if !no_reports {
        let written = emit_reports(&plan, &artifacts)?;
        info!("wrote {} report files", written.len());
        println!("reports: {}", artifacts.run_dir.join("reports").display());
    }
    Ok(())
}

fn report(config: &Path) -> Result<(), Failure> {
    require_file(config)?;
    let plan = load_run_config(config)?;
    let artifacts = load_artifacts(&plan)?;
    let written = emit_reports(&plan, &artifacts)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn read_translations(path: &Path) -> Result<Vec<DocumentTranslation>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Validation)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}", path.display(), i + 1))
                .map_err(Failure::Validation)
        })
        .collect()
}

fn score(args: &ScoreArgs) -> Result<(), Failure> {
    let (testset, _) = load_corpus_with_warnings(&args.corpus, CorpusFormat::Jsonl)
        .map_err(|e| Failure::Validation(e.into()))?;
    let translations = read_translations(&args.hyp)?;
    let mut scoring = ScoringPlan {
        blonde: !args.no_blonde,
        ..ScoringPlan::default()
    };
    if args.no_segment_scorer {
        scoring.segment_scorer = None;
    }
    let tokenizer = match args.tokenizer {
        TokenizerArg::Auto => TokenizerPolicy::Auto,
        TokenizerArg::Whitespace => TokenizerPolicy::Fixed(TokenizerSpec::Whitespace),
        TokenizerArg::Char => TokenizerPolicy::Fixed(TokenizerSpec::Char),
    };
    let reports = score_translations(&testset, &translations, &scoring, &tokenizer)?;
    let mut json =
        serde_json::to_string_pretty(&reports).map_err(|e| Failure::Runtime(e.into()))?;
    json.push('\n');
    match &args.out {
        Some(path) => fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::Runtime)?,
        None => print!("{json}"),
    }
    Ok(())
}

/// The CSV printed by `simulate-cost`.
fn simulate_cost(args: &SimulateArgs) -> Result<String, Failure> {
    if args.segments.contains(&0) {
        return Err(Failure::Validation(anyhow!(
            "--segments values must be positive"
        )));
    }
    let blocks: Vec<_> = args
        .segments
        .iter()
        .map(|&k| {
            let mut stats = DocStats::uniform(k, args.seg_tokens, args.out_tokens);
            stats.overheads = Overheads {
                instruction: args.instruction_tokens,
                document_instruction: args.doc_instruction_tokens,
                primer: args.primer_tokens,
                icl_prefix: args.icl_tokens,
            };
            (k, compare_strategies(&stats))
        })
        .collect();
    Ok(comparison_csv(&blocks))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::ValidateCorpus { paths } => validate_corpus(paths),
        Command::Run { config, no_reports } => run(config, *no_reports),
        Command::Score(args) => score(args),
        Command::Report { config } => report(config),
        Command::SimulateCost(args) => {
            print!("{}", simulate_cost(args)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
