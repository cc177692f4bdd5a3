//! Prompting strategies for document translation.
//!
//! Four modes are supported, each with or without a fixed in-context
//! exemplar prefix:
//!
//! * [`Mode::SingleTurn`]: the whole document in one request.
//! * [`Mode::SegmentLevel`]: one independent request per segment.
//! * [`Mode::MultiTurn`]: one growing conversation, one segment per turn.
//! * [`Mode::MultiTurnSourcePrimed`]: like `MultiTurn`, but the first user
//!   message opens with the complete source document.
//!
//! In the multi-turn modes the conversation is append-only, so every request
//! is an exact message-wise prefix of the next one. That is what makes
//! attention KV caches of earlier turns reusable (see [`crate::costing`]).

mod cleanup;
mod session;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Exemplar;

pub use cleanup::{split_single_turn_output, strip_wrapping};
pub use session::{
    init_session, DocumentTranslation, FailReason, NextRequest, SessionError, SessionState,
    SessionStatus, DOCUMENT_JOINER,
};
pub use template::{
    language_name, render_prompt, IclKey, PromptTemplateSet, PromptVars, Slot, TemplateError,
    DEFAULT_TEMPLATE_SET,
};

/// Number of in-context exemplars used when ICL is enabled.
pub const ICL_EXEMPLARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "single_turn")]
    SingleTurn,
    #[serde(rename = "segment_level")]
    SegmentLevel,
    #[serde(rename = "multi_turn")]
    MultiTurn,
    #[serde(rename = "multi_turn_sp")]
    MultiTurnSourcePrimed,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::SingleTurn,
        Mode::SegmentLevel,
        Mode::MultiTurn,
        Mode::MultiTurnSourcePrimed,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Mode::SingleTurn => "single_turn",
            Mode::SegmentLevel => "segment_level",
            Mode::MultiTurn => "multi_turn",
            Mode::MultiTurnSourcePrimed => "multi_turn_sp",
        }
    }

    pub fn from_key(key: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.key() == key)
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Mode::SingleTurn => "Single-turn",
            Mode::SegmentLevel => "Segment-level",
            Mode::MultiTurn => "Multi-turn",
            Mode::MultiTurnSourcePrimed => "Multi-turn sp",
        }
    }

    /// Modes whose requests share one growing conversation.
    pub fn is_multi_turn(self) -> bool {
        matches!(self, Mode::MultiTurn | Mode::MultiTurnSourcePrimed)
    }

    /// Whether per-segment alignment is guaranteed by construction.
    pub fn is_segment_aligned(self) -> bool {
        self != Mode::SingleTurn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("icl requires exactly {expected} exemplars, got {got}")]
    ExemplarCount { expected: usize, got: usize },
    #[error("exemplars given but icl is disabled")]
    UnexpectedExemplars,
    #[error("exemplar {index} is for {got}, expected {expected}")]
    ExemplarDirection {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("exemplar {0} has an empty side")]
    EmptyExemplar(usize),
}

/// A strategy for one language direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub mode: Mode,
    pub icl: bool,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    #[serde(default = "default_template_id")]
    pub templates: String,
}

fn default_template_id() -> String {
    DEFAULT_TEMPLATE_SET.to_string()
}

impl StrategyConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            icl: false,
            exemplars: Vec::new(),
            templates: default_template_id(),
        }
    }

    pub fn with_icl(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.icl = true;
        self.exemplars = exemplars;
        self
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        if self.icl {
            if self.exemplars.len() != ICL_EXEMPLARS {
                return Err(StrategyError::ExemplarCount {
                    expected: ICL_EXEMPLARS,
                    got: self.exemplars.len(),
                });
            }
        } else if !self.exemplars.is_empty() {
            return Err(StrategyError::UnexpectedExemplars);
        }
        for (i, ex) in self.exemplars.iter().enumerate() {
            if ex.source.trim().is_empty() || ex.target.trim().is_empty() {
                return Err(StrategyError::EmptyExemplar(i));
            }
        }
        Ok(())
    }

    /// Filesystem-safe identifier, e.g. `multi_turn_sp_icl`.
    pub fn slug(&self) -> String {
        strategy_slug(self.mode, self.icl)
    }

    /// Human label, e.g. `Multi-turn sp + ICL`.
    pub fn display_name(&self) -> String {
        strategy_display_name(self.mode, self.icl)
    }
}

pub fn strategy_slug(mode: Mode, icl: bool) -> String {
    if icl {
        format!("{}_icl", mode.key())
    } else {
        mode.key().to_string()
    }
}

pub fn strategy_display_name(mode: Mode, icl: bool) -> String {
    if icl {
        format!("{} + ICL", mode.display_name())
    } else {
        mode.display_name().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(i: usize) -> Exemplar {
        Exemplar {
            source: format!("s{i}"),
            target: format!("t{i}"),
            src_lang: "en".into(),
            tgt_lang: "de".into(),
        }
    }

    #[test]
    fn icl_requires_three_exemplars() {
        let two = StrategyConfig::new(Mode::MultiTurn).with_icl(vec![ex(0), ex(1)]);
        assert_eq!(
            two.validate(),
            Err(StrategyError::ExemplarCount {
                expected: 3,
                got: 2
            })
        );
        let three = StrategyConfig::new(Mode::MultiTurn).with_icl(vec![ex(0), ex(1), ex(2)]);
        assert!(three.validate().is_ok());
    }

    #[test]
    fn labels() {
        let c = StrategyConfig::new(Mode::MultiTurnSourcePrimed).with_icl(vec![]);
        assert_eq!(c.slug(), "multi_turn_sp_icl");
        assert_eq!(c.display_name(), "Multi-turn sp + ICL");
        assert_eq!(Mode::from_key("segment_level"), Some(Mode::SegmentLevel));
    }
}
