//! Deterministic mock backends. Each is a pure function of the request.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{ChatBackend, ChatRequest, ChatResponse, FinishReason, GatewayError};
use crate::costing::whitespace_tokens;

const SEGMENT_JOINER: &str = "\n\n";

fn respond(req: &ChatRequest, content: String) -> ChatResponse {
    let prompt_tokens = req
        .messages
        .iter()
        .map(|m| whitespace_tokens(&m.content))
        .sum::<usize>() as u64;
    ChatResponse {
        completion_tokens: whitespace_tokens(&content) as u64,
        content,
        prompt_tokens,
        finish_reason: FinishReason::Stop,
        latency_ms: 0.0,
        retries: 0,
    }
}

/// Returns the source text unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockIdentity;

impl ChatBackend for MockIdentity {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Ok(respond(
            req,
            req.source_text_segments().join(SEGMENT_JOINER),
        ))
    }
}

/// Replaces whitespace-delimited tokens found in a dictionary; everything
/// else (including whitespace) is kept.
#[derive(Debug, Clone, Default)]
pub struct MockDictionary {
    entries: HashMap<String, String>,
}

impl MockDictionary {
    pub fn new(entries: HashMap<String, String>) -> Self {
        Self { entries }
    }

    /// Loads a JSON object of `source -> target` entries.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let config_err = |message: String| GatewayError::Config {
            name: "mock_dictionary".into(),
            message,
        };
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let entries: HashMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn translate(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut word_start = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(start) = word_start.take() {
                    out.push_str(self.lookup(&text[start..i]));
                }
                out.push(c);
            } else if word_start.is_none() {
                word_start = Some(i);
            }
        }
        if let Some(start) = word_start {
            out.push_str(self.lookup(&text[start..]));
        }
        out
    }

    fn lookup<'a>(&'a self, word: &'a str) -> &'a str {
        self.entries.get(word).map(String::as_str).unwrap_or(word)
    }
}

impl ChatBackend for MockDictionary {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let out: Vec<String> = req
            .source_text_segments()
            .iter()
            .map(|s| self.translate(s))
            .collect();
        Ok(respond(req, out.join(SEGMENT_JOINER)))
    }
}

/// Simulates omissions on long single-turn outputs.
///
/// A request asking for two or more segments at once has the trailing
/// `drop_fraction` of its whitespace tokens deleted (rounded down); any other
/// request is echoed like [`MockIdentity`].
#[derive(Debug, Clone, Copy)]
pub struct MockTailDropper {
    drop_fraction: f64,
}

impl MockTailDropper {
    pub fn new(drop_fraction: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&drop_fraction),
            "drop_fraction must be in [0, 1)"
        );
        Self { drop_fraction }
    }

    pub fn truncate(&self, text: &str) -> String {
        let spans: Vec<(usize, usize)> = token_spans(text);
        let total = spans.len();
        // small epsilon guards products such as 0.2 * 100 landing just below an integer
        let dropped = ((total as f64) * self.drop_fraction + 1e-9).floor() as usize;
        let keep = total - dropped.min(total);
        if keep == total {
            return text.to_string();
        }
        if keep == 0 {
            return String::new();
        }
        text[..spans[keep - 1].1].to_string()
    }
}

fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

impl ChatBackend for MockTailDropper {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let segments = req.source_text_segments();
        let joined = segments.join(SEGMENT_JOINER);
        let content = if segments.len() >= 2 {
            self.truncate(&joined)
        } else {
            joined
        };
        Ok(respond(req, content))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::Message;
    use proptest::prelude::*;

    fn single_turn_request(segments: Vec<String>) -> ChatRequest {
        let body = segments.join("\n\n");
        ChatRequest::greedy("d#0", vec![Message::user(format!("Translate:\n\n{body}"))])
            .with_source(segments)
    }

    #[test]
    fn dictionary_lookup() {
        let dict = MockDictionary::new(HashMap::from([("chat".to_string(), "cat".to_string())]));
        let r = ChatRequest::greedy("t", vec![Message::user("chat")]);
        assert_eq!(dict.complete(&r).unwrap().content, "cat");
        assert_eq!(dict.translate("le chat  noir"), "le cat  noir");
    }

    #[test]
    fn tail_dropper_drops_twenty_percent_of_hundred_tokens() {
        // 4 segments x 25 tokens
        let segments: Vec<String> = (0..4)
            .map(|s| {
                (0..25)
                    .map(|t| format!("w{s}_{t}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let before: usize = segments.iter().map(|s| s.split_whitespace().count()).sum();
        assert_eq!(before, 100);
        let out = MockTailDropper::new(0.2)
            .complete(&single_turn_request(segments))
            .unwrap();
        assert_eq!(out.content.split_whitespace().count(), 80);
        assert!(out.content.ends_with("w3_4"));
    }

    #[test]
    fn tail_dropper_echoes_per_segment_requests() {
        let r = ChatRequest::greedy("d#3", vec![Message::user("Translate: one two three")])
            .with_source(vec!["one two three".into()]);
        assert_eq!(
            MockTailDropper::new(0.5).complete(&r).unwrap().content,
            "one two three"
        );
    }

    #[test]
    fn zero_drop_fraction_is_identity() {
        let r = single_turn_request(vec!["a b c".into(), "d e".into()]);
        assert_eq!(
            MockTailDropper::new(0.0).complete(&r).unwrap().content,
            MockIdentity.complete(&r).unwrap().content
        );
    }

    proptest! {
        #[test]
        fn mocks_are_pure(
            segs in prop::collection::vec("[a-z ]{1,30}", 1..5),
            frac in 0.0f64..0.99,
        ) {
            let r = single_turn_request(segs);
            let backends: Vec<Box<dyn ChatBackend>> = vec![
                Box::new(MockIdentity),
                Box::new(MockTailDropper::new(frac)),
                Box::new(MockDictionary::new(HashMap::from([("a".into(), "b".into())]))),
            ];
            for b in backends {
                prop_assert_eq!(b.complete(&r).unwrap(), b.complete(&r).unwrap());
            }
        }

        #[test]
        fn tail_dropper_token_count(n in 2usize..300, frac in 0.0f64..0.99) {
            let text: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let out = MockTailDropper::new(frac).truncate(&text.join(" "));
            let expected = n - ((n as f64) * frac + 1e-9).floor() as usize;
            prop_assert_eq!(out.split_whitespace().count(), expected);
        }
    }
}
