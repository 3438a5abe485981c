//! Candidate retrieval and retry-time query expansion.

use std::collections::HashSet;

use crate::chat::{ChatClient, ChatMessage};
use crate::embed::EmbeddingProvider;
use crate::error::Result;
use crate::index::Index;
use crate::state::{Mode, PipelineState, RejectionKind};
use crate::text;

pub const NEUTRALITY_TERMS: &str = "factual report neutral coverage";

/// Retrieves candidates for `state.query()`.
///
/// Without source selection the single most relevant document becomes both
/// the only candidate and the selection. Selection modes get the top `k`
/// candidates and no selection. Ids in `exclude` are skipped unless that
/// would leave nothing to retrieve.
pub fn retrieve(
    index: &Index,
    embedder: &dyn EmbeddingProvider,
    state: PipelineState,
    mode: Mode,
    k: usize,
    exclude: &HashSet<String>,
) -> Result<PipelineState> {
    let query = embedder.embed(state.query())?;
    let k = if mode.selects_source() { k } else { 1 };
    let mut docs = index.top_k_excluding(&query, k, exclude)?;
    if docs.is_empty() {
        docs = index.top_k(&query, k)?;
    }
    let state = state.with_candidates(docs)?;
    if mode.selects_source() {
        Ok(state)
    } else {
        let id = state.candidates()[0].id.clone();
        state.record_selection(&id)
    }
}

const EXPANSION_SYSTEM_PROMPT: &str = "You rewrite search queries for a news retrieval system. \
The previous candidate documents for the query were rejected for the stated reason. Produce one \
improved query that keeps the user's intent and is more likely to retrieve relevant, neutral, \
factual sources. Reply with the rewritten query on a single line and nothing else.";

/// Rewrites the original query given the latest rejection reason. The result
/// always differs from `query`. With a chat client the model's one-line
/// rewrite is used when it is usable; otherwise a deterministic rule keyed
/// on the reason prefix applies.
pub fn expand_query(query: &str, rejection_reason: &str, chat: Option<&dyn ChatClient>) -> String {
    if let Some(chat) = chat {
        let messages = [
            ChatMessage::system(EXPANSION_SYSTEM_PROMPT),
            ChatMessage::user(format!("Query: {query}\nRejection reason: {rejection_reason}")),
        ];
        match chat.complete(&messages) {
            Ok(reply) => {
                let line = reply
                    .lines()
                    .map(|l| l.trim().trim_matches(|c| c == '"' || c == '\''))
                    .find(|l| !l.is_empty())
                    .unwrap_or("");
                if !line.is_empty() && line != query {
                    return line.to_string();
                }
                log::warn!("unusable expansion reply {reply:?}; using rule-based rewrite");
            }
            Err(err) => log::warn!("query expansion falling back to rules: {err}"),
        }
    }
    rule_based_expansion(query, rejection_reason)
}

fn with_neutrality(query: &str) -> String {
    format!("{} {NEUTRALITY_TERMS}", query.trim_end())
}

fn rule_based_expansion(query: &str, reason: &str) -> String {
    let expanded = match RejectionKind::from_reason(reason) {
        Some(RejectionKind::LowRelevance) => {
            let mut seen = HashSet::new();
            let salient: Vec<String> = text::content_tokens(query)
                .into_iter()
                .filter(|t| seen.insert(t.clone()))
                .collect();
            if salient.is_empty() {
                with_neutrality(query)
            } else {
                format!("{} {}", query.trim_end(), salient.join(" "))
            }
        }
        Some(RejectionKind::EmptyRetrieval) => {
            let unquoted: String = query
                .chars()
                .filter(|c| !matches!(c, '"' | '\'' | '`' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}'))
                .collect();
            let kept: Vec<&str> = unquoted
                .split_whitespace()
                .filter(|w| w.chars().any(char::is_alphabetic) && !w.chars().any(|c| c.is_ascii_digit()))
                .collect();
            kept.join(" ")
        }
        Some(RejectionKind::AllBiased) | None => with_neutrality(query),
    };
    if expanded.trim().is_empty() || expanded == query {
        with_neutrality(query)
    } else {
        expanded
    }
}
