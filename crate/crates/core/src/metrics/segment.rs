//! Segment-mean scoring through an external scorer.
//!
//! The adapter contract is line-aligned: the scorer receives UTF-8 TSV with
//! columns `src\thyp\tref` (one segment per line; tabs and newlines inside
//! a field are replaced by spaces) and returns one decimal score per line.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::bleu::{bleu_from_stats, BleuConfig, BleuStats, Smoothing};
use super::MetricError;
use crate::corpus::Document;
use crate::strategy::DocumentTranslation;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTriple {
    pub src: String,
    pub hyp: String,
    pub reference: String,
}

pub trait SegmentScorer: Send + Sync {
    /// Short label used in report headers.
    fn name(&self) -> &str;
    fn score(&self, triples: &[SegmentTriple]) -> Result<Vec<f64>, MetricError>;
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Renders triples in the adapter's TSV input format.
pub fn scorer_input_tsv(triples: &[SegmentTriple]) -> String {
    let mut out = String::new();
    for t in triples {
        out.push_str(&clean_field(&t.src));
        out.push('\t');
        out.push_str(&clean_field(&t.hyp));
        out.push('\t');
        out.push_str(&clean_field(&t.reference));
        out.push('\n');
    }
    out
}

/// Parses scorer output; trailing blank lines are ignored.
pub fn parse_scores(text: &str, expected: usize) -> Result<Vec<f64>, MetricError> {
    let lines: Vec<&str> = text.trim_end().lines().collect();
    let lines = if text.trim().is_empty() {
        Vec::new()
    } else {
        lines
    };
    if lines.len() != expected {
        return Err(MetricError::ScoreCount {
            expected,
            got: lines.len(),
        });
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MetricError::NonNumericScore {
                    line: i + 1,
                    value: l.to_string(),
                })
        })
        .collect()
}

/// Runs a command that reads TSV on stdin and writes scores on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandScorer {
    pub name: String,
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl SegmentScorer for CommandScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, triples: &[SegmentTriple]) -> Result<Vec<f64>, MetricError> {
        let fail = |message: String| MetricError::Scorer {
            scorer: self.name.clone(),
            message,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program)))?;
        let input = scorer_input_tsv(triples);
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        writer
            .join()
            .expect("stdin writer")
            .map_err(|e| fail(format!("writing input: {e}")))?;
        if !output.status.success() {
            return Err(fail(format!("exited with {}", output.status)));
        }
        parse_scores(&String::from_utf8_lossy(&output.stdout), triples.len())
    }
}

/// Exchanges files with a scorer run outside this process: the TSV input is
/// written to `input`, scores are read from `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFileScorer {
    pub name: String,
    pub input: PathBuf,
    pub output: PathBuf,
}

impl SegmentScorer for ScoreFileScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, triples: &[SegmentTriple]) -> Result<Vec<f64>, MetricError> {
        let fail = |message: String| MetricError::Scorer {
            scorer: self.name.clone(),
            message,
        };
        fs::write(&self.input, scorer_input_tsv(triples))
            .map_err(|e| fail(format!("{}: {e}", self.input.display())))?;
        let text = fs::read_to_string(&self.output)
            .map_err(|e| fail(format!("{}: {e}", self.output.display())))?;
        parse_scores(&text, triples.len())
    }
}

/// Built-in stand-in scorer: add-one smoothed sentence BLEU on a 0..1 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceBleuScorer {
    pub cfg: BleuConfig,
}

impl Default for SentenceBleuScorer {
    fn default() -> Self {
        Self {
            cfg: BleuConfig {
                smoothing: Smoothing::AddK(1.0),
                ..BleuConfig::default()
            },
        }
    }
}

impl SegmentScorer for SentenceBleuScorer {
    fn name(&self) -> &str {
        "sentence_bleu"
    }

    fn score(&self, triples: &[SegmentTriple]) -> Result<Vec<f64>, MetricError> {
        Ok(triples
            .iter()
            .map(|t| {
                let stats = BleuStats::from_tokens(
                    &self.cfg.tokenize(&t.hyp),
                    &self.cfg.tokenize(&t.reference),
                    self.cfg.max_n,
                );
                bleu_from_stats(&stats, &self.cfg).score / 100.0
            })
            .collect())
    }
}

/// Arithmetic mean of the adapter's scores; `None` for no segments.
pub fn segment_mean(
    adapter: &dyn SegmentScorer,
    triples: &[SegmentTriple],
) -> Result<Option<f64>, MetricError> {
    if triples.is_empty() {
        return Ok(None);
    }
    let scores = adapter.score(triples)?;
    if scores.len() != triples.len() {
        return Err(MetricError::ScoreCount {
            expected: triples.len(),
            got: scores.len(),
        });
    }
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeanReport {
    pub mean: Option<f64>,
    pub segments: usize,
    /// Documents left out because their segments are not aligned.
    pub skipped: Vec<String>,
}

/// Triples for the aligned documents; misaligned or reference-less
/// documents are returned separately.
pub fn aligned_triples(
    docs: &[(&DocumentTranslation, &Document)],
) -> (Vec<SegmentTriple>, Vec<String>) {
    let mut triples = Vec::new();
    let mut skipped = Vec::new();
    for (hyp, doc) in docs {
        match &doc.reference_segments {
            Some(reference)
                if hyp.alignment_ok && hyp.hypothesis_segments.len() == reference.len() =>
            {
                for ((src, h), r) in doc
                    .source_segments
                    .iter()
                    .zip(&hyp.hypothesis_segments)
                    .zip(reference)
                {
                    triples.push(SegmentTriple {
                        src: src.clone(),
                        hyp: h.clone(),
                        reference: r.clone(),
                    });
                }
            }
            _ => skipped.push(doc.id.clone()),
        }
    }
    (triples, skipped)
}

/// Segment-mean score over aligned documents.
pub fn segment_mean_score(
    adapter: &dyn SegmentScorer,
    docs: &[(&DocumentTranslation, &Document)],
) -> Result<SegmentMeanReport, MetricError> {
    let (triples, skipped) = aligned_triples(docs);
    Ok(SegmentMeanReport {
        mean: segment_mean(adapter, &triples)?,
        segments: triples.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl SegmentScorer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn score(&self, triples: &[SegmentTriple]) -> Result<Vec<f64>, MetricError> {
            Ok(self.0.iter().copied().cycle().take(triples.len()).collect())
        }
    }

    fn triple(i: usize) -> SegmentTriple {
        SegmentTriple {
            src: format!("s{i}"),
            hyp: format!("h{i}"),
            reference: format!("r{i}"),
        }
    }

    #[test]
    fn means() {
        let four: Vec<_> = (0..4).map(triple).collect();
        assert_eq!(segment_mean(&Fixed(vec![0.5]), &four).unwrap(), Some(0.5));
        let three: Vec<_> = (0..3).map(triple).collect();
        let m = segment_mean(&Fixed(vec![0.2, 0.4, 0.6]), &three)
            .unwrap()
            .unwrap();
        assert!((m - 0.4).abs() < 1e-12);
        assert_eq!(segment_mean(&Fixed(vec![1.0]), &[]).unwrap(), None);
    }

    #[test]
    fn misaligned_documents_are_skipped() {
        let doc = Document {
            id: "d".into(),
            src_lang: "en".into(),
            tgt_lang: "de".into(),
            domain: "news".into(),
            source_segments: vec!["a".into(), "b".into()],
            reference_segments: Some(vec!["A".into(), "B".into()]),
        };
        let good = DocumentTranslation {
            doc_id: "d".into(),
            hypothesis_segments: vec!["A".into(), "B".into()],
            alignment_ok: true,
            raw_output: None,
            warnings: vec![],
        };
        let bad = DocumentTranslation {
            hypothesis_segments: vec!["A B".into()],
            alignment_ok: false,
            ..good.clone()
        };
        let r = segment_mean_score(&Fixed(vec![1.0]), &[(&bad, &doc)]).unwrap();
        assert_eq!(r.mean, None);
        assert_eq!(r.skipped, ["d"]);
        let r = segment_mean_score(&Fixed(vec![1.0]), &[(&good, &doc)]).unwrap();
        assert_eq!((r.mean, r.segments), (Some(1.0), 2));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_scores("0.1\n0.2\n\n", 2).unwrap(), [0.1, 0.2]);
        assert_eq!(
            parse_scores("0.1\n", 2),
            Err(MetricError::ScoreCount {
                expected: 2,
                got: 1
            })
        );
        assert!(matches!(
            parse_scores("0.1\nabc\n", 2),
            Err(MetricError::NonNumericScore { line: 2, .. })
        ));
        assert_eq!(parse_scores("", 0).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn tsv_fields_are_flattened() {
        let t = SegmentTriple {
            src: "a\tb".into(),
            hyp: "c\nd".into(),
            reference: "e".into(),
        };
        assert_eq!(scorer_input_tsv(&[t]), "a b\tc d\te\n");
    }

    #[cfg(unix)]
    #[test]
    fn command_scorer_round_trip() {
        // awk prints the number of hypothesis characters as the score
        let scorer = CommandScorer {
            name: "len".into(),
            program: "awk".into(),
            args: vec!["-F\t".into(), "{ print length($2) }".into()],
        };
        let triples = vec![
            SegmentTriple {
                src: "x".into(),
                hyp: "abc".into(),
                reference: "y".into(),
            },
            SegmentTriple {
                src: "x".into(),
                hyp: "a".into(),
                reference: "y".into(),
            },
        ];
        assert_eq!(scorer.score(&triples).unwrap(), [3.0, 1.0]);
        assert_eq!(segment_mean(&scorer, &triples).unwrap(), Some(2.0));
    }

    #[test]
    fn score_file_scorer() {
        let dir = tempfile::tempdir().unwrap();
        let scorer = ScoreFileScorer {
            name: "comet".into(),
            input: dir.path().join("in.tsv"),
            output: dir.path().join("out.txt"),
        };
        fs::write(&scorer.output, "0.8\n0.6\n").unwrap();
        let triples: Vec<_> = (0..2).map(triple).collect();
        assert_eq!(scorer.score(&triples).unwrap(), [0.8, 0.6]);
        assert_eq!(
            fs::read_to_string(&scorer.input).unwrap(),
            "s0\th0\tr0\ns1\th1\tr1\n"
        );
    }

    #[test]
    fn sentence_bleu_identity() {
        let t = SegmentTriple {
            src: "x".into(),
            hyp: "the cat sat on the mat".into(),
            reference: "the cat sat on the mat".into(),
        };
        assert_eq!(SentenceBleuScorer::default().score(&[t]).unwrap(), [1.0]);
    }
}
