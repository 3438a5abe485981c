//! Fairness-aware retrieval orchestration.
//!
//! A run retrieves candidate documents for a query, annotates them with a
//! bias label and a confidence in that label, selects a single source under
//! a strict or relaxed policy (retrying with an expanded query when every
//! candidate is rejected), and answers from the selected source only.
//!
//! Three modes are supported: no source selection (the most relevant
//! document is used as is), zero-shot rule-based selection and few-shot
//! exemplar-guided selection. The [`eval`] module runs query sets through
//! each mode and reports bias rate, retry rate and relevance, bias
//! confidence and latency statistics.
//!
//! Everything runs offline by default: a seeded hashing embedder, a lexicon
//! bias detector and an extractive template writer. Remote embedding,
//! classifier and chat-completion endpoints can be swapped in through
//! [`Config`].

pub mod chat;
pub mod config;
pub mod detector;
pub mod embed;
pub mod error;
pub mod eval;
pub mod index;
pub mod knowledge;
pub mod orchestrator;
pub mod selector;
pub mod state;
pub mod synth;
pub mod text;
pub mod writer;

pub use chat::{ChatClient, ChatConfig, ChatError, ChatMessage, OpenAiChatClient};
pub use config::{Config, Routing};
pub use detector::{annotate, BiasDetector, DetectorConfig, LexiconDetector, NoisyDetector, RemoteDetector};
pub use embed::{EmbedderSpec, EmbeddingProvider, HashEmbedder, RemoteEmbedder};
pub use error::{Error, Result};
pub use eval::{evaluate, load_dataset, relative_reduction, EvalReport, ModeReport, QueryRecord, Stats};
pub use index::{cosine, CorpusRecord, Index};
pub use knowledge::{expand_query, retrieve};
pub use orchestrator::{system_prompt, Engine, RunFailure, RunOutcome, RunSettings, TraceEvent, TraceStep};
pub use selector::{select_few_shot, select_zero_shot, FewShotExample, SelectionOutcome, SelectionPolicy};
pub use state::{BiasAssessment, BiasLabel, Document, Mode, PipelineState, Rejection, RejectionKind};
pub use writer::{compose, Answer};
