//! Document-level machine translation evaluation: corpus handling, prompting
//! strategies, an LLM gateway, KV-cache cost accounting, metrics and a
//! resumable experiment runner.

pub mod corpus;
pub mod costing;
pub mod gateway;
pub mod metrics;
pub mod runner;
pub mod strategy;

pub use corpus::{load_corpus, CorpusError, CorpusFormat, Document, Exemplar, TestSet};
pub use costing::{CacheMode, CostLedger, CostTotals, TokenizerSpec, TurnCost};
pub use gateway::{
    BackendConfig, BackendKind, ChatBackend, ChatRequest, ChatResponse, FinishReason, Gateway,
    GatewayError,
};
pub use metrics::{doc_bleu, BleuConfig, BleuScore, BlondeScore, MetricError};
pub use strategy::{
    init_session, DocumentTranslation, Message, Mode, PromptTemplateSet, Role, SessionState,
    StrategyConfig,
};
