//! Answer composition from the selected document only.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatMessage};
use crate::error::{Error, Result};
use crate::state::Document;
use crate::text;

pub const TEMPLATE_FRAME: &str = "Based on the selected source: ";
pub const DEFAULT_MAX_SENTENCES: usize = 3;

pub const WRITER_SYSTEM_PROMPT: &str = "Answer the user's query using ONLY the source document \
provided. Do not use outside knowledge. If the source does not answer the query, say so.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub source_id: String,
    /// True for template answers, and for model answers whose every sentence
    /// occurs verbatim in the source.
    pub grounded: bool,
}

/// Extractive answer: the first `max_sentences` sentences of the source that
/// share a content token with the query, or the leading sentences if none do.
pub fn template_answer(query: &str, source: &Document, max_sentences: usize) -> Answer {
    let query_terms: HashSet<String> = text::content_tokens(query).into_iter().collect();
    let sentences = text::sentences(&source.content);
    let mut picked: Vec<&str> = sentences
        .iter()
        .copied()
        .filter(|s| text::content_tokens(s).iter().any(|t| query_terms.contains(t)))
        .take(max_sentences)
        .collect();
    if picked.is_empty() {
        picked = sentences.iter().copied().take(max_sentences).collect();
    }
    Answer {
        text: format!("{TEMPLATE_FRAME}{}", picked.join(" ")),
        source_id: source.id.clone(),
        grounded: true,
    }
}

/// True when every sentence of `answer` occurs verbatim in `source`.
pub fn is_extractive(answer: &str, source: &str) -> bool {
    let sentences = text::sentences(answer);
    !sentences.is_empty() && sentences.iter().all(|s| source.contains(s))
}

pub fn compose(
    query: &str,
    selected: Option<&Document>,
    chat: Option<&dyn ChatClient>,
    max_sentences: usize,
) -> Result<Answer> {
    let source = selected.ok_or(Error::NoSelection)?;
    if source.content.trim().is_empty() {
        return Err(Error::InvalidDocument(format!("selected document {:?} is empty", source.id)));
    }
    let Some(chat) = chat else {
        return Ok(template_answer(query, source, max_sentences));
    };
    let messages = [
        ChatMessage::system(WRITER_SYSTEM_PROMPT),
        ChatMessage::user(format!("Query: {query}\n\nSource document:\n{}", source.content)),
    ];
    match chat.complete(&messages) {
        Ok(reply) if !reply.trim().is_empty() => {
            let text = reply.trim().to_string();
            let grounded = is_extractive(&text, &source.content);
            Ok(Answer {
                text,
                source_id: source.id.clone(),
                grounded,
            })
        }
        Ok(_) => {
            log::warn!("writer model returned an empty answer; using template");
            Ok(template_answer(query, source, max_sentences))
        }
        Err(err) => {
            log::warn!("writer falling back to template: {err}");
            Ok(template_answer(query, source, max_sentences))
        }
    }
}
