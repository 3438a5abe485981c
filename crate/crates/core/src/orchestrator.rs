//! The manager: sequences retrieval, bias annotation, selection and
//! answer composition, owns the retry loop, and records a trace.
//!
//! Flow per run:
//!
//! ```text
//! query -> init state -> retrieve -> annotate -+-> (no selection) ---------> write -> answer
//!                          ^                   |
//!                          |                   +-> select -> selected? -yes-> write -> answer
//!                          |                                   | no
//!                          +------ expand query <- reject <----+
//! ```
//!
//! The loop body runs at most `max_retries + 1` times; the last attempt uses
//! relaxed selection, which cannot reject.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{ChatClient, ChatMessage, OpenAiChatClient};
use crate::config::{Config, Routing};
use crate::detector::{annotate, BiasDetector};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::index::Index;
use crate::knowledge::{expand_query, retrieve};
use crate::selector::{select_few_shot, select_zero_shot, SelectionOutcome, SelectionPolicy};
use crate::state::{BiasLabel, Document, Mode, PipelineState};
use crate::writer::{compose, Answer};

const SUPERVISOR_PREAMBLE: &str = "You are a Supervisor Agent responsible for coordinating multiple \
specialized agents in a multi-agent system. Your primary goal is to answer user queries using the \
knowledge provided only and try to minimize bias as much as possible.";

/// Supervisor system prompt for LLM-mediated routing.
pub fn system_prompt(mode: Mode) -> String {
    let handoffs = if mode.selects_source() {
        "Hand off to the knowledge_agent to gather information.\n\
         Hand off to the bias_detector_agent to measure bias inside the retrieved documents.\n\
         Hand off to the selector to select a source using relevance and bias scores.\n\
         Hand off to the writer to answer the query based on the selected source.\n\
         If this is the final answer, return __end__ to finish execution."
    } else {
        "Hand off to the knowledge_agent to gather source candidates.\n\
         Hand off to the bias_detector_agent to measure bias of the retrieved document.\n\
         Hand off to the writer to answer the query based on the selected source.\n\
         If this is the final answer, return __end__ to finish execution."
    };
    format!("{SUPERVISOR_PREAMBLE}\n\n{handoffs}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agent {
    Knowledge,
    BiasDetector,
    Selector,
    Writer,
    End,
}

impl Agent {
    pub fn name(self) -> &'static str {
        match self {
            Agent::Knowledge => "knowledge_agent",
            Agent::BiasDetector => "bias_detector_agent",
            Agent::Selector => "selector",
            Agent::Writer => "writer",
            Agent::End => "__end__",
        }
    }

    fn parse(reply: &str) -> Option<Agent> {
        let reply = reply.to_lowercase();
        [Agent::BiasDetector, Agent::Knowledge, Agent::Selector, Agent::Writer, Agent::End]
            .into_iter()
            .find(|a| reply.contains(a.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessedId {
    pub id: String,
    pub bias_label: BiasLabel,
    pub bias_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step")]
pub enum TraceStep {
    QueryReceived { query: String, mode: Mode },
    Retrieved { query: String, candidates: Vec<ScoredId> },
    Annotated { assessments: Vec<AssessedId> },
    SelectionAttempt { attempt: u32, final_attempt: bool },
    Rejected { reason: String },
    QueryExpanded { query: String },
    Selected { id: String },
    AnswerProduced { source_id: String, grounded: bool },
    RunFailed { error: String },
}

impl TraceStep {
    pub fn name(&self) -> &'static str {
        match self {
            TraceStep::QueryReceived { .. } => "QueryReceived",
            TraceStep::Retrieved { .. } => "Retrieved",
            TraceStep::Annotated { .. } => "Annotated",
            TraceStep::SelectionAttempt { .. } => "SelectionAttempt",
            TraceStep::Rejected { .. } => "Rejected",
            TraceStep::QueryExpanded { .. } => "QueryExpanded",
            TraceStep::Selected { .. } => "Selected",
            TraceStep::AnswerProduced { .. } => "AnswerProduced",
            TraceStep::RunFailed { .. } => "RunFailed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    #[serde(flatten)]
    pub step: TraceStep,
    /// Seconds since the run started.
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub answer: Answer,
    pub selected: Document,
    pub mode: Mode,
    pub retries_used: u32,
    pub trace: Vec<TraceEvent>,
    pub wall_time_secs: f64,
}

impl RunOutcome {
    /// Copy with every timing field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.wall_time_secs = 0.0;
        for ev in &mut out.trace {
            ev.elapsed_secs = 0.0;
        }
        out
    }

    pub fn count(&self, step: &str) -> usize {
        self.trace.iter().filter(|e| e.step.name() == step).count()
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("run failed after {retries_used} retries: {error}")]
pub struct RunFailure {
    #[serde(serialize_with = "serialize_display")]
    pub error: Error,
    pub mode: Mode,
    pub retries_used: u32,
    pub trace: Vec<TraceEvent>,
    pub wall_time_secs: f64,
}

fn serialize_display<S: serde::Serializer>(err: &Error, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(err)
}

/// Resolved per-run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub k: usize,
    pub max_retries: u32,
    pub policy: SelectionPolicy,
    pub exclude_rejected: bool,
    pub answer_sentences: usize,
    pub routing: Routing,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self::from_config(&Config::default()).expect("default config is valid")
    }
}

impl RunSettings {
    pub fn from_config(config: &Config) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            k: config.k,
            max_retries: config.max_retries,
            policy: config.selection_policy()?,
            exclude_rejected: config.exclude_rejected,
            answer_sentences: config.answer_sentences,
            routing: config.routing,
        })
    }
}

/// Everything a run needs. Immutable and `Sync`, so one engine can serve
/// many concurrent runs.
pub struct Engine {
    index: Index,
    embedder: Box<dyn EmbeddingProvider>,
    detector: Box<dyn BiasDetector>,
    chat: Option<Box<dyn ChatClient>>,
    settings: RunSettings,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("index_len", &self.index.len())
            .field("has_chat", &self.chat.is_some())
            .field("settings", &self.settings)
            .finish()
    }
}

struct Trace {
    start: Instant,
    events: Vec<TraceEvent>,
}

impl Trace {
    fn push(&mut self, step: TraceStep) {
        self.events.push(TraceEvent {
            step,
            elapsed_secs: self.start.elapsed().as_secs_f64(),
        });
    }
}

impl Engine {
    pub fn new(
        index: Index,
        embedder: Box<dyn EmbeddingProvider>,
        detector: Box<dyn BiasDetector>,
        chat: Option<Box<dyn ChatClient>>,
        settings: RunSettings,
    ) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if embedder.dimension() != index.dimension() {
            return Err(Error::DimensionMismatch {
                expected: index.dimension(),
                actual: embedder.dimension(),
            });
        }
        if settings.max_retries == 0 || settings.k == 0 || settings.answer_sentences == 0 {
            return Err(Error::InvalidConfig("k, max_retries and answer_sentences must be positive".into()));
        }
        if settings.routing == Routing::Llm && chat.is_none() {
            return Err(Error::InvalidConfig("llm routing requires a chat client".into()));
        }
        settings.policy.validate()?;
        Ok(Self {
            index,
            embedder,
            detector,
            chat,
            settings,
        })
    }

    /// Builds the embedder from the index snapshot (so queries land in the
    /// same space as documents) and everything else from `config`.
    pub fn from_config(config: &Config, index: Index) -> Result<Self> {
        let settings = RunSettings::from_config(config)?;
        let embedder = index.embedder_spec().build()?;
        let detector = config.detector.build()?;
        let chat: Option<Box<dyn ChatClient>> = match &config.chat {
            Some(c) => Some(Box::new(
                OpenAiChatClient::new(c.clone()).map_err(|e| Error::InvalidConfig(e.to_string()))?,
            )),
            None => None,
        };
        Self::new(index, embedder, detector, chat, settings)
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    fn chat(&self) -> Option<&dyn ChatClient> {
        self.chat.as_deref()
    }

    pub fn run(&self, query: &str, mode: Mode) -> std::result::Result<RunOutcome, RunFailure> {
        let mut trace = Trace {
            start: Instant::now(),
            events: Vec::new(),
        };
        trace.push(TraceStep::QueryReceived {
            query: query.to_string(),
            mode,
        });
        let mut retries_used = 0;
        match self.drive(query, mode, &mut trace, &mut retries_used) {
            Ok((answer, selected)) => Ok(RunOutcome {
                answer,
                selected,
                mode,
                retries_used,
                wall_time_secs: trace.start.elapsed().as_secs_f64(),
                trace: trace.events,
            }),
            Err(error) => {
                trace.push(TraceStep::RunFailed {
                    error: error.to_string(),
                });
                Err(RunFailure {
                    error,
                    mode,
                    retries_used,
                    wall_time_secs: trace.start.elapsed().as_secs_f64(),
                    trace: trace.events,
                })
            }
        }
    }

    fn drive(
        &self,
        query: &str,
        mode: Mode,
        trace: &mut Trace,
        retries_used: &mut u32,
    ) -> Result<(Answer, Document)> {
        let s = &self.settings;
        let mut state = PipelineState::new(query, s.max_retries)?;
        let mut seen: HashSet<String> = HashSet::new();
        loop {
            self.route(mode, &state, Agent::Knowledge);
            state = retrieve(&self.index, self.embedder.as_ref(), state, mode, s.k, &seen)?;
            trace.push(TraceStep::Retrieved {
                query: state.query().to_string(),
                candidates: state
                    .candidates()
                    .iter()
                    .map(|d| ScoredId {
                        id: d.id.clone(),
                        relevance: d.relevance,
                    })
                    .collect(),
            });

            self.route(mode, &state, Agent::BiasDetector);
            state = annotate(self.detector.as_ref(), state, mode)?;
            let assessed: Vec<&Document> = if mode.selects_source() {
                state.candidates().iter().collect()
            } else {
                state.selected().into_iter().collect()
            };
            trace.push(TraceStep::Annotated {
                assessments: assessed
                    .into_iter()
                    .filter_map(|d| {
                        d.bias.map(|b| AssessedId {
                            id: d.id.clone(),
                            bias_label: b.label,
                            bias_confidence: b.confidence,
                        })
                    })
                    .collect(),
            });

            if !mode.selects_source() {
                // the top document is used as is; no selection event is recorded
                break;
            }
            if s.exclude_rejected {
                seen.extend(state.candidates().iter().map(|d| d.id.clone()));
            }

            self.route(mode, &state, Agent::Selector);
            let attempt = state.retry_count();
            trace.push(TraceStep::SelectionAttempt {
                attempt,
                final_attempt: state.is_final_attempt(),
            });
            let outcome = match mode {
                Mode::ZeroShot => select_zero_shot(state.candidates(), attempt, s.max_retries, &s.policy)?,
                _ => select_few_shot(state.candidates(), attempt, s.max_retries, &s.policy, self.chat())?,
            };
            match outcome {
                SelectionOutcome::Selected { id } => {
                    state = state.record_selection(&id)?;
                    trace.push(TraceStep::Selected { id });
                    break;
                }
                SelectionOutcome::Rejected { reason } => {
                    let reason = reason.to_string();
                    trace.push(TraceStep::Rejected { reason: reason.clone() });
                    state = state.record_rejection(reason.clone())?;
                    *retries_used = state.retry_count();
                    let expanded = expand_query(state.original_query(), &reason, self.chat());
                    trace.push(TraceStep::QueryExpanded { query: expanded.clone() });
                    state = state.with_query(expanded);
                }
            }
        }

        self.route(mode, &state, Agent::Writer);
        let selected = state.selected().ok_or(Error::NoSelection)?;
        let answer = compose(state.original_query(), Some(selected), self.chat(), s.answer_sentences)?;
        trace.push(TraceStep::AnswerProduced {
            source_id: answer.source_id.clone(),
            grounded: answer.grounded,
        });
        Ok((answer, selected.clone()))
    }

    /// With LLM routing, asks the supervisor model for the next hand-off.
    /// The execution flow is fixed, so the model's answer is advisory: a
    /// disagreement is logged and `next` is used regardless.
    fn route(&self, mode: Mode, state: &PipelineState, next: Agent) -> Agent {
        if self.settings.routing != Routing::Llm {
            return next;
        }
        let Some(chat) = self.chat() else {
            return next;
        };
        let status = format!(
            "Query: {}\nCandidates retrieved: {}\nSelected source: {}\nRetries used: {} of {}\n\
             Reply with the name of the agent to hand off to next.",
            state.query(),
            state.candidates().len(),
            state.selected().map_or("none", |d| d.id.as_str()),
            state.retry_count(),
            state.max_retries(),
        );
        let messages = [ChatMessage::system(system_prompt(mode)), ChatMessage::user(status)];
        match chat.complete(&messages).map(|r| Agent::parse(&r)) {
            Ok(Some(agent)) if agent == next => {}
            Ok(proposed) => log::warn!(
                "supervisor proposed {:?}; following execution flow to {}",
                proposed.map(Agent::name),
                next.name()
            ),
            Err(err) => log::warn!("supervisor unavailable ({err}); routing to {}", next.name()),
        }
        next
    }
}
