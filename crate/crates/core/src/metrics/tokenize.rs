use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// BLEU tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuTokenizer {
    /// Unicode-aware punctuation and symbol splitting (13a-like, international).
    Intl13aLike,
    /// Every non-whitespace character is a token.
    Char,
}

impl BleuTokenizer {
    /// Character tokens for Chinese and Japanese targets, punctuation splitting otherwise.
    pub fn for_language(lang: &str) -> Self {
        if crate::costing::is_unsegmented_language(lang) {
            BleuTokenizer::Char
        } else {
            BleuTokenizer::Intl13aLike
        }
    }

    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            BleuTokenizer::Intl13aLike => tokenize_intl(text),
            BleuTokenizer::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }
}

struct IntlRules {
    punct_after_non_digit: Regex,
    punct_before_non_digit: Regex,
    symbol: Regex,
}

fn intl_rules() -> &'static IntlRules {
    static RULES: OnceLock<IntlRules> = OnceLock::new();
    RULES.get_or_init(|| IntlRules {
        punct_after_non_digit: Regex::new(r"(\P{N})(\p{P})").unwrap(),
        punct_before_non_digit: Regex::new(r"(\p{P})(\P{N})").unwrap(),
        symbol: Regex::new(r"(\p{S})").unwrap(),
    })
}

/// Splits punctuation not between digits, and every symbol, off into
/// separate tokens. Numbers like `3.14` and `1,000` stay intact.
pub fn tokenize_intl(text: &str) -> Vec<String> {
    let rules = intl_rules();
    let s = rules.punct_after_non_digit.replace_all(text, "$1 $2 ");
    let s = rules.punct_before_non_digit.replace_all(&s, " $1 $2");
    let s = rules.symbol.replace_all(&s, " $1 ");
    s.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_but_not_numbers() {
        assert_eq!(
            tokenize_intl("Hello, world! It costs $3.50 (or 1,000 yen)."),
            [
                "Hello", ",", "world", "!", "It", "costs", "$", "3.50", "(", "or", "1,000", "yen",
                ")", "."
            ]
        );
    }

    #[test]
    fn unicode_punctuation() {
        assert_eq!(
            tokenize_intl("«Ja»\u{2014}sagte er."),
            ["«", "Ja", "»", "\u{2014}", "sagte", "er", "."]
        );
    }

    #[test]
    fn char_tokens() {
        assert_eq!(
            BleuTokenizer::Char.tokenize("你好 世界"),
            ["你", "好", "世", "界"]
        );
        assert_eq!(BleuTokenizer::for_language("ja"), BleuTokenizer::Char);
        assert_eq!(
            BleuTokenizer::for_language("de"),
            BleuTokenizer::Intl13aLike
        );
    }
}
