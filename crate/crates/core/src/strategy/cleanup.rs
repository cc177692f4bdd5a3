use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::{split_into_segments, SplitRule};

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:Translation|翻译|Übersetzung)\s*[:：]\s*").unwrap())
}

/// Removes model wrapping from an assistant reply.
///
/// Only two things are removed: a fence of triple backticks when it encloses
/// the whole reply (an info string on the opening fence is dropped with it),
/// then a single leading `Translation:`-style label. Outer whitespace is
/// trimmed.
pub fn strip_wrapping(text: &str) -> String {
    let mut s = text.trim();
    if s.len() >= 6 && s.starts_with("```") && s.ends_with("```") {
        let inner = &s[3..s.len() - 3];
        // the opening fence line may carry an info string such as ```text
        s = match inner.split_once('\n') {
            Some((info, body)) if !info.contains(char::is_whitespace) || info.trim().is_empty() => {
                body
            }
            _ => inner,
        }
        .trim();
    }
    let s = match label_re().find(s) {
        Some(m) => &s[m.end()..],
        None => s,
    };
    s.trim().to_string()
}

/// Splits a single-turn reply into `k` segments when possible.
///
/// Blank-line blocks are tried first, then single lines. Returns the segments
/// and whether their count equals `k`; on mismatch the blank-line split is
/// returned.
pub fn split_single_turn_output(text: &str, k: usize) -> (Vec<String>, bool) {
    let blocks = split_into_segments(text, SplitRule::BlankLine);
    if blocks.len() == k {
        return (blocks, true);
    }
    let lines = split_into_segments(text, SplitRule::SingleNewline);
    if lines.len() == k {
        return (lines, true);
    }
    (blocks, false)
}
