use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cleanup::{split_single_turn_output, strip_wrapping};
use super::template::{render_prompt, PromptTemplateSet, PromptVars, Slot, TemplateError};
use super::{Message, Mode, StrategyConfig, StrategyError};
use crate::corpus::Document;
use crate::gateway::{ChatRequest, ChatResponse, FinishReason};

/// Joiner used when a whole document is placed in one message.
pub const DOCUMENT_JOINER: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailReason {
    EmptyOutput {
        doc_id: String,
        turn: usize,
    },
    ContextOverflow {
        turn: usize,
        tokens: usize,
        limit: usize,
    },
    Backend {
        turn: usize,
        message: String,
    },
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::EmptyOutput { doc_id, turn } => {
                write!(f, "empty_output (doc {doc_id}, turn {turn})")
            }
            FailReason::ContextOverflow {
                turn,
                tokens,
                limit,
            } => write!(
                f,
                "context_overflow (turn {turn}: {tokens} tokens > limit {limit})"
            ),
            FailReason::Backend { turn, message } => write!(f, "backend (turn {turn}): {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionStatus {
    InProgress,
    Done,
    Failed(FailReason),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] StrategyError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("session for {doc_id} is {state}; {op} is not allowed")]
    ContractViolation {
        doc_id: String,
        state: &'static str,
        op: &'static str,
    },
    #[error("session failed: {0}")]
    Failed(FailReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextRequest {
    Request(ChatRequest),
    Done,
}

/// The translated document produced by a finished session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentTranslation {
    pub doc_id: String,
    pub hypothesis_segments: Vec<String>,
    pub alignment_ok: bool,
    /// Full cleaned model output; single-turn only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DocumentTranslation {
    /// Segments joined by a single space, the unit scored by document BLEU.
    pub fn joined(&self) -> String {
        self.hypothesis_segments.join(" ")
    }
}

/// Per-document state machine for one strategy.
///
/// `conversation` holds the growing history in multi-turn modes, and only the
/// shared exemplar prefix otherwise. `pending` is the user message for the
/// current cursor.
#[derive(Debug, Clone)]
pub struct SessionState {
    config: Arc<StrategyConfig>,
    templates: Arc<PromptTemplateSet>,
    document: Arc<Document>,
    cursor: usize,
    conversation: Vec<Message>,
    pending: Option<Message>,
    outputs: Vec<String>,
    raw_output: Option<String>,
    status: SessionStatus,
    warnings: Vec<String>,
}

/// Builds the initial session for a document.
pub fn init_session(
    config: Arc<StrategyConfig>,
    templates: Arc<PromptTemplateSet>,
    document: Arc<Document>,
) -> Result<SessionState, SessionError> {
    config.validate()?;
    let direction = document.direction();
    for (index, ex) in config.exemplars.iter().enumerate() {
        if ex.direction() != direction {
            return Err(StrategyError::ExemplarDirection {
                index,
                expected: direction,
                got: ex.direction(),
            }
            .into());
        }
    }
    let conversation = exemplar_prefix(&config, &templates, &document)?;
    let mut session = SessionState {
        config,
        templates,
        document,
        cursor: 0,
        conversation,
        pending: None,
        outputs: Vec::new(),
        raw_output: None,
        status: SessionStatus::InProgress,
        warnings: Vec::new(),
    };
    session.pending = Some(session.user_message(0)?);
    Ok(session)
}

fn exemplar_prefix(
    config: &StrategyConfig,
    templates: &PromptTemplateSet,
    doc: &Document,
) -> Result<Vec<Message>, TemplateError> {
    if !config.icl {
        return Ok(Vec::new());
    }
    let template = templates.get(config.mode, true, Slot::Exemplar)?;
    let mut prefix = Vec::with_capacity(2 * config.exemplars.len());
    for ex in &config.exemplars {
        let vars = PromptVars::for_direction(&doc.src_lang, &doc.tgt_lang)
            .with_segment(&ex.source)
            .with_domain(&doc.domain);
        prefix.push(Message::user(render_prompt(template, &vars)?));
        prefix.push(Message::assistant(ex.target.clone()));
    }
    Ok(prefix)
}

impl SessionState {
    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn document(&self) -> &Document {
        &self.document
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn conversation(&self) -> &[Message] {
        &self.conversation
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn status(&self) -> &SessionStatus {
        &self.status
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of requests this session issues in total.
    pub fn total_turns(&self) -> usize {
        match self.config.mode {
            Mode::SingleTurn => 1,
            _ => self.document.segment_count(),
        }
    }

    fn vars(&self) -> PromptVars {
        PromptVars::for_direction(&self.document.src_lang, &self.document.tgt_lang)
            .with_domain(&self.document.domain)
    }

    fn user_message(&self, index: usize) -> Result<Message, TemplateError> {
        let mode = self.config.mode;
        let icl = self.config.icl;
        let doc = &self.document;
        let text = match mode {
            Mode::SingleTurn => {
                let whole = doc.source_segments.join(DOCUMENT_JOINER);
                render_prompt(
                    self.templates.get(mode, icl, Slot::Document)?,
                    &self.vars().with_document(&whole),
                )?
            }
            Mode::SegmentLevel | Mode::MultiTurn => render_prompt(
                self.templates.get(mode, icl, Slot::Segment)?,
                &self.vars().with_segment(&doc.source_segments[index]),
            )?,
            Mode::MultiTurnSourcePrimed => {
                let instruction = render_prompt(
                    self.templates.get(mode, icl, Slot::Segment)?,
                    &self.vars().with_segment(&doc.source_segments[index]),
                )?;
                if index == 0 {
                    let whole = doc.source_segments.join(DOCUMENT_JOINER);
                    let primer = render_prompt(
                        self.templates.get(mode, icl, Slot::Primer)?,
                        &self.vars().with_document(&whole),
                    )?;
                    format!("{primer}{DOCUMENT_JOINER}{instruction}")
                } else {
                    instruction
                }
            }
        };
        Ok(Message::user(text))
    }

    fn request_tag(&self) -> String {
        format!("{}#{}", self.document.id, self.cursor)
    }

    fn source_for_cursor(&self) -> Vec<String> {
        match self.config.mode {
            Mode::SingleTurn => self.document.source_segments.clone(),
            _ => vec![self.document.source_segments[self.cursor].clone()],
        }
    }

    fn state_name(&self) -> &'static str {
        match self.status {
            SessionStatus::InProgress => "in progress",
            SessionStatus::Done => "done",
            SessionStatus::Failed(_) => "failed",
        }
    }

    fn violation(&self, op: &'static str) -> SessionError {
        SessionError::ContractViolation {
            doc_id: self.document.id.clone(),
            state: self.state_name(),
            op,
        }
    }

    /// The request for the current cursor: the conversation so far plus the
    /// new user message, at temperature 0.
    pub fn next_request(&self) -> Result<NextRequest, SessionError> {
        match &self.status {
            SessionStatus::Done => return Ok(NextRequest::Done),
            SessionStatus::Failed(_) => return Err(self.violation("next_request")),
            SessionStatus::InProgress => {}
        }
        let pending = self
            .pending
            .clone()
            .expect("in-progress session has a pending message");
        let mut messages = Vec::with_capacity(self.conversation.len() + 1);
        messages.extend_from_slice(&self.conversation);
        messages.push(pending);
        Ok(NextRequest::Request(
            ChatRequest::greedy(self.request_tag(), messages).with_source(self.source_for_cursor()),
        ))
    }

    /// Records the assistant reply for the outstanding request.
    ///
    /// In multi-turn modes the raw reply is appended to the conversation
    /// unchanged, so the next request extends exactly what the model saw and
    /// produced; the stored hypothesis segment is the cleaned text.
    pub fn ingest_response(&mut self, assistant_text: &str) -> Result<(), SessionError> {
        if self.status != SessionStatus::InProgress {
            return Err(self.violation("ingest_response"));
        }
        let cleaned = strip_wrapping(assistant_text);
        if cleaned.is_empty() {
            let reason = FailReason::EmptyOutput {
                doc_id: self.document.id.clone(),
                turn: self.cursor,
            };
            self.status = SessionStatus::Failed(reason.clone());
            return Err(SessionError::Failed(reason));
        }
        let pending = self.pending.take().expect("pending message");
        match self.config.mode {
            Mode::SingleTurn => {
                self.raw_output = Some(cleaned);
                self.cursor = 1;
                self.status = SessionStatus::Done;
                return Ok(());
            }
            Mode::SegmentLevel => {}
            Mode::MultiTurn | Mode::MultiTurnSourcePrimed => {
                self.conversation.push(pending);
                self.conversation.push(Message::assistant(assistant_text));
            }
        }
        self.outputs.push(cleaned);
        self.cursor += 1;
        if self.cursor == self.document.segment_count() {
            self.status = SessionStatus::Done;
        } else {
            self.pending = Some(self.user_message(self.cursor)?);
        }
        Ok(())
    }

    /// Like [`Self::ingest_response`], also recording truncation warnings.
    pub fn ingest_chat_response(&mut self, response: &ChatResponse) -> Result<(), SessionError> {
        if response.finish_reason == FinishReason::Length {
            self.warnings.push(format!(
                "turn {}: output truncated (finish_reason=length)",
                self.cursor
            ));
        }
        self.ingest_response(&response.content)
    }

    /// Marks the session failed, e.g. on context overflow or backend errors.
    pub fn fail(&mut self, reason: FailReason) {
        self.pending = None;
        self.status = SessionStatus::Failed(reason);
    }

    pub fn assemble_hypothesis(&self) -> Result<DocumentTranslation, SessionError> {
        if self.status != SessionStatus::Done {
            return Err(self.violation("assemble_hypothesis"));
        }
        let k = self.document.segment_count();
        let (hypothesis_segments, alignment_ok, raw_output) = match self.config.mode {
            Mode::SingleTurn => {
                let raw = self.raw_output.clone().unwrap_or_default();
                let (segs, ok) = split_single_turn_output(&raw, k);
                (segs, ok, Some(raw))
            }
            _ => (self.outputs.clone(), true, None),
        };
        Ok(DocumentTranslation {
            doc_id: self.document.id.clone(),
            hypothesis_segments,
            alignment_ok,
            raw_output,
            warnings: self.warnings.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Exemplar;
    use crate::strategy::Role;

    fn document(k: usize) -> Arc<Document> {
        Arc::new(Document {
            id: "doc".into(),
            src_lang: "en".into(),
            tgt_lang: "de".into(),
            domain: "news".into(),
            source_segments: (0..k).map(|i| format!("Source paragraph {i}.")).collect(),
            reference_segments: None,
        })
    }

    fn exemplars() -> Vec<Exemplar> {
        (0..3)
            .map(|i| Exemplar {
                source: format!("Example {i}."),
                target: format!("Beispiel {i}."),
                src_lang: "en".into(),
                tgt_lang: "de".into(),
            })
            .collect()
    }

    fn session(config: StrategyConfig, k: usize) -> SessionState {
        init_session(
            Arc::new(config),
            Arc::new(PromptTemplateSet::default_set()),
            document(k),
        )
        .unwrap()
    }

    fn request(s: &SessionState) -> ChatRequest {
        match s.next_request().unwrap() {
            NextRequest::Request(r) => r,
            NextRequest::Done => panic!("unexpected done"),
        }
    }

    #[test]
    fn multi_turn_starts_with_one_user_message() {
        let s = session(StrategyConfig::new(Mode::MultiTurn), 3);
        let r = request(&s);
        assert_eq!(r.messages.len(), 1);
        assert_eq!(r.messages[0].role, Role::User);
        assert!(r.messages[0].content.contains("Source paragraph 0."));
        assert_eq!(r.temperature, 0.0);
    }

    #[test]
    fn icl_prepends_three_exemplar_pairs() {
        let s = session(
            StrategyConfig::new(Mode::MultiTurn).with_icl(exemplars()),
            3,
        );
        let r = request(&s);
        assert_eq!(r.messages.len(), 7);
        for (i, m) in r.messages[..6].iter().enumerate() {
            let want = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            assert_eq!(m.role, want);
        }
        assert_eq!(r.messages[1].content, "Beispiel 0.");
        assert!(r.messages[6].content.contains("Source paragraph 0."));
    }

    #[test]
    fn source_primed_first_message_embeds_document() {
        let s = session(StrategyConfig::new(Mode::MultiTurnSourcePrimed), 3);
        let first = &request(&s).messages[0].content;
        let mut from = 0;
        for i in 0..3 {
            let seg = format!("Source paragraph {i}.");
            let at = first[from..].find(&seg).expect("segment present in order");
            from += at + seg.len();
        }
        // the per-segment instruction follows the primer
        assert!(first[from..].contains("Source paragraph 0."));
    }

    #[test]
    fn multi_turn_history_at_cursor_two() {
        let mut s = session(StrategyConfig::new(Mode::MultiTurn), 3);
        s.ingest_response("Absatz 0.").unwrap();
        s.ingest_response("Translation: Absatz 1.").unwrap();
        let r = request(&s);
        assert_eq!(r.messages.len(), 5);
        assert_eq!(r.messages[..4], s.conversation()[..]);
        assert_eq!(r.messages[3].content, "Translation: Absatz 1.");
        assert!(r.messages[4].content.contains("Source paragraph 2."));
        assert_eq!(s.outputs(), ["Absatz 0.", "Absatz 1."]);
        assert_eq!(r.request_tag, "doc#2");
    }

    #[test]
    fn single_turn_is_one_request_then_done() {
        let mut s = session(StrategyConfig::new(Mode::SingleTurn), 3);
        let r = request(&s);
        assert_eq!(r.messages.len(), 1);
        assert_eq!(r.source_segments.len(), 3);
        s.ingest_response("A\n\nB\n\nC").unwrap();
        assert_eq!(s.next_request().unwrap(), NextRequest::Done);
        let t = s.assemble_hypothesis().unwrap();
        assert!(t.alignment_ok);
        assert_eq!(t.hypothesis_segments, ["A", "B", "C"]);
    }

    #[test]
    fn single_turn_misaligned_output() {
        let mut s = session(StrategyConfig::new(Mode::SingleTurn), 3);
        s.ingest_response("A\n\nB").unwrap();
        let t = s.assemble_hypothesis().unwrap();
        assert!(!t.alignment_ok);
        assert_eq!(t.raw_output.as_deref(), Some("A\n\nB"));
    }

    #[test]
    fn segment_level_requests_share_no_history() {
        let mut s = session(StrategyConfig::new(Mode::SegmentLevel), 4);
        let mut n = 0;
        while let NextRequest::Request(r) = s.next_request().unwrap() {
            assert_eq!(r.messages.len(), 1);
            assert!(r.messages[0]
                .content
                .contains(&format!("Source paragraph {n}.")));
            s.ingest_response(&format!("out {n}")).unwrap();
            n += 1;
        }
        assert_eq!(n, 4);
        assert!(s.assemble_hypothesis().unwrap().alignment_ok);
    }

    #[test]
    fn empty_output_fails_session() {
        let mut s = session(StrategyConfig::new(Mode::MultiTurn), 3);
        s.ingest_response("ok").unwrap();
        let err = s.ingest_response("   ").unwrap_err();
        assert_eq!(
            err,
            SessionError::Failed(FailReason::EmptyOutput {
                doc_id: "doc".into(),
                turn: 1
            })
        );
        assert!(matches!(s.status(), SessionStatus::Failed(_)));
        assert!(matches!(
            s.next_request(),
            Err(SessionError::ContractViolation { .. })
        ));
        assert!(s.ingest_response("late").is_err());
    }

    #[test]
    fn assemble_requires_done() {
        let s = session(StrategyConfig::new(Mode::MultiTurn), 2);
        assert!(s.assemble_hypothesis().is_err());
    }

    #[test]
    fn exemplar_direction_must_match() {
        let mut ex = exemplars();
        ex[1].tgt_lang = "fr".into();
        let err = init_session(
            Arc::new(StrategyConfig::new(Mode::SegmentLevel).with_icl(ex)),
            Arc::new(PromptTemplateSet::default_set()),
            document(2),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SessionError::Config(StrategyError::ExemplarDirection { index: 1, .. })
        ));
    }

    #[test]
    fn truncation_is_recorded_as_warning() {
        let mut s = session(StrategyConfig::new(Mode::MultiTurn), 1);
        let resp = ChatResponse {
            content: "x".into(),
            prompt_tokens: 1,
            completion_tokens: 1,
            finish_reason: FinishReason::Length,
            latency_ms: 0.0,
            retries: 0,
        };
        s.ingest_chat_response(&resp).unwrap();
        let t = s.assemble_hypothesis().unwrap();
        assert_eq!(t.warnings.len(), 1);
    }
}
