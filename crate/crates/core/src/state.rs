//! Pipeline state and the document model carried through a run.
//!
//! A [`PipelineState`] is a plain value: every transition consumes the old
//! state and returns the next one, so a run can be replayed step by step and
//! many runs can proceed independently on different threads.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary bias label. Serialized as `0` (unbiased) or `1` (biased).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BiasLabel {
    Unbiased,
    Biased,
}

impl BiasLabel {
    pub fn is_biased(self) -> bool {
        self == BiasLabel::Biased
    }

    pub fn as_u8(self) -> u8 {
        match self {
            BiasLabel::Unbiased => 0,
            BiasLabel::Biased => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BiasLabel::Unbiased => BiasLabel::Biased,
            BiasLabel::Biased => BiasLabel::Unbiased,
        }
    }
}

impl From<BiasLabel> for u8 {
    fn from(label: BiasLabel) -> u8 {
        label.as_u8()
    }
}

impl TryFrom<u8> for BiasLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(BiasLabel::Unbiased),
            1 => Ok(BiasLabel::Biased),
            other => Err(format!("bias label must be 0 or 1, got {other}")),
        }
    }
}

/// Output of a bias detector for one document: the label and the
/// detector's confidence in that label (not a probability of bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasAssessment {
    pub label: BiasLabel,
    pub confidence: f64,
}

impl BiasAssessment {
    pub fn new(label: BiasLabel, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidDocument(format!(
                "bias confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { label, confidence })
    }
}

/// A retrieved document with its relevance to the query and, once
/// annotated, its bias assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub content: String,
    /// Cosine similarity to the query used for retrieval, in [-1, 1].
    pub relevance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasAssessment>,
}

impl Document {
    pub fn new(id: impl Into<String>, content: impl Into<String>, relevance: f64) -> Self {
        Self {
            id: id.into(),
            content: content.into(),
            relevance,
            bias: None,
        }
    }

    pub fn annotated(&self) -> bool {
        self.bias.is_some()
    }

    pub fn with_bias(mut self, bias: BiasAssessment) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn bias_label(&self) -> Option<BiasLabel> {
        self.bias.map(|b| b.label)
    }

    pub fn bias_confidence(&self) -> Option<f64> {
        self.bias.map(|b| b.confidence)
    }

    fn validate(&self) -> Result<()> {
        if self.content.trim().is_empty() {
            return Err(Error::InvalidDocument(format!("document {:?} has empty content", self.id)));
        }
        if !(-1.0..=1.0).contains(&self.relevance) {
            return Err(Error::InvalidDocument(format!(
                "document {:?} relevance {} outside [-1, 1]",
                self.id, self.relevance
            )));
        }
        Ok(())
    }
}

/// Candidate order: relevance descending, then id ascending.
pub fn candidate_order(a: &Document, b: &Document) -> Ordering {
    b.relevance
        .total_cmp(&a.relevance)
        .then_with(|| a.id.cmp(&b.id))
}

/// Operating mode of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "no-select")]
    NoSourceSelection,
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "few-shot")]
    FewShot,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::NoSourceSelection, Mode::ZeroShot, Mode::FewShot];

    pub fn selects_source(self) -> bool {
        self != Mode::NoSourceSelection
    }

    /// Short name used on the command line and in serialized output.
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoSourceSelection => "no-select",
            Mode::ZeroShot => "zero-shot",
            Mode::FewShot => "few-shot",
        }
    }

    /// Human-facing name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::NoSourceSelection => "No Source Selection",
            Mode::ZeroShot => "Zero-Shot",
            Mode::FewShot => "Few-Shot",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-select" | "no-source-selection" | "NoSourceSelection" => Ok(Mode::NoSourceSelection),
            "zero-shot" | "ZeroShot" => Ok(Mode::ZeroShot),
            "few-shot" | "FewShot" => Ok(Mode::FewShot),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// Machine-readable category of a rejected selection attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionKind {
    AllBiased,
    LowRelevance,
    EmptyRetrieval,
}

impl RejectionKind {
    pub fn prefix(self) -> &'static str {
        match self {
            RejectionKind::AllBiased => "ALL_BIASED",
            RejectionKind::LowRelevance => "LOW_RELEVANCE",
            RejectionKind::EmptyRetrieval => "EMPTY_RETRIEVAL",
        }
    }

    /// Recognizes the prefix of a `"PREFIX: detail"` reason string.
    pub fn from_reason(reason: &str) -> Option<Self> {
        let head = reason.split(':').next().unwrap_or("").trim();
        [Self::AllBiased, Self::LowRelevance, Self::EmptyRetrieval]
            .into_iter()
            .find(|k| k.prefix() == head)
    }
}

/// A rejection reason: standardized prefix plus free-text detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RejectionKind,
    pub detail: String,
}

impl Rejection {
    pub fn new(kind: RejectionKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.prefix(), self.detail)
    }
}

/// State of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineState {
    candidates: Vec<Document>,
    selected: Option<Document>,
    retry_count: u32,
    max_retries: u32,
    rejection_reason: Option<String>,
    query: String,
    original_query: String,
}

impl PipelineState {
    pub fn new(query: &str, max_retries: u32) -> Result<Self> {
        if query.trim().is_empty() {
            return Err(Error::InvalidQuery);
        }
        if max_retries == 0 {
            return Err(Error::InvalidConfig("max_retries must be at least 1".into()));
        }
        Ok(Self {
            candidates: Vec::new(),
            selected: None,
            retry_count: 0,
            max_retries,
            rejection_reason: None,
            query: query.to_string(),
            original_query: query.to_string(),
        })
    }

    pub fn candidates(&self) -> &[Document] {
        &self.candidates
    }

    pub fn selected(&self) -> Option<&Document> {
        self.selected.as_ref()
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    /// True when the current attempt is the last one allowed.
    pub fn is_final_attempt(&self) -> bool {
        self.retry_count == self.max_retries
    }

    pub fn rejection_reason(&self) -> Option<&str> {
        self.rejection_reason.as_deref()
    }

    /// Query used for the next retrieval (possibly an expansion).
    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn original_query(&self) -> &str {
        &self.original_query
    }

    /// Replaces the candidate set. Documents are validated and sorted into
    /// candidate order; any previous selection is dropped.
    pub fn with_candidates(mut self, mut docs: Vec<Document>) -> Result<Self> {
        for doc in &docs {
            doc.validate()?;
        }
        docs.sort_by(candidate_order);
        self.candidates = docs;
        self.selected = None;
        Ok(self)
    }

    /// Replaces the candidates' bias assessments, one per candidate in order.
    pub fn with_candidate_bias(mut self, assessments: Vec<BiasAssessment>) -> Result<Self> {
        if assessments.len() != self.candidates.len() {
            return Err(Error::InvalidTransition("one assessment per candidate required"));
        }
        for (doc, bias) in self.candidates.iter_mut().zip(assessments) {
            doc.bias = Some(bias);
        }
        if let Some(sel) = &mut self.selected {
            if let Some(doc) = self.candidates.iter().find(|d| d.id == sel.id) {
                sel.bias = doc.bias;
            }
        }
        Ok(self)
    }

    /// Sets the bias assessment of the selected document (and of its
    /// candidate entry).
    pub fn with_selected_bias(mut self, bias: BiasAssessment) -> Result<Self> {
        let sel = self.selected.as_mut().ok_or(Error::NoSelection)?;
        sel.bias = Some(bias);
        let id = sel.id.clone();
        if let Some(doc) = self.candidates.iter_mut().find(|d| d.id == id) {
            doc.bias = Some(bias);
        }
        Ok(self)
    }

    pub fn with_query(mut self, query: impl Into<String>) -> Self {
        self.query = query.into();
        self
    }

    /// Records a rejected selection attempt: stores the reason, bumps the
    /// retry counter and clears the candidates for a fresh retrieval.
    pub fn record_rejection(mut self, reason: impl Into<String>) -> Result<Self> {
        if self.selected.is_some() {
            return Err(Error::InvalidTransition("cannot reject after a selection was made"));
        }
        if self.retry_count >= self.max_retries {
            return Err(Error::RetriesExhausted {
                max_retries: self.max_retries,
            });
        }
        self.retry_count += 1;
        self.rejection_reason = Some(reason.into());
        self.candidates.clear();
        Ok(self)
    }

    pub fn record_selection(mut self, doc_id: &str) -> Result<Self> {
        let doc = self
            .candidates
            .iter()
            .find(|d| d.id == doc_id)
            .cloned()
            .ok_or_else(|| Error::SelectionNotInCandidates(doc_id.to_string()))?;
        self.selected = Some(doc);
        self.rejection_reason = None;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(ids: &[(&str, f64)]) -> Vec<Document> {
        ids.iter()
            .map(|(id, rho)| Document::new(*id, format!("text of {id}"), *rho))
            .collect()
    }

    #[test]
    fn new_state_initialization() {
        let s = PipelineState::new("who won the debate", 3).unwrap();
        assert_eq!(s.retry_count(), 0);
        assert_eq!(s.max_retries(), 3);
        assert!(s.candidates().is_empty());
        assert!(s.selected().is_none());
        assert!(s.rejection_reason().is_none());
        assert_eq!(s.query(), "who won the debate");
        assert_eq!(s.original_query(), "who won the debate");
    }

    #[test]
    fn new_state_rejects_bad_input() {
        assert_eq!(PipelineState::new("", 3), Err(Error::InvalidQuery));
        assert_eq!(PipelineState::new("   ", 3), Err(Error::InvalidQuery));
        assert!(matches!(PipelineState::new("q", 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn single_retry_budget_exhausts_after_one_rejection() {
        let s = PipelineState::new("q", 1).unwrap();
        let s = s.record_rejection("ALL_BIASED: x").unwrap();
        assert_eq!(s.retry_count(), 1);
        assert!(s.is_final_attempt());
        assert_eq!(
            s.record_rejection("ALL_BIASED: y"),
            Err(Error::RetriesExhausted { max_retries: 1 })
        );
    }

    #[test]
    fn rejection_counter_semantics() {
        let s = PipelineState::new("q", 3)
            .unwrap()
            .with_candidates(docs(&[("d1", 0.3)]))
            .unwrap();
        let s = s.record_rejection("all candidates biased").unwrap();
        assert_eq!(s.retry_count(), 1);
        assert_eq!(s.rejection_reason(), Some("all candidates biased"));
        assert!(s.candidates().is_empty());
        let s = s.record_rejection("r").unwrap().record_rejection("r").unwrap();
        assert_eq!(s.retry_count(), 3);
        assert_eq!(s.record_rejection("r"), Err(Error::RetriesExhausted { max_retries: 3 }));
    }

    #[test]
    fn selection_membership() {
        let s = PipelineState::new("q", 3)
            .unwrap()
            .with_candidates(docs(&[("d1", 0.5), ("d2", 0.4)]))
            .unwrap();
        let chosen = s.clone().record_selection("d2").unwrap();
        assert_eq!(chosen.selected().unwrap().id, "d2");
        assert_eq!(
            s.record_selection("dX"),
            Err(Error::SelectionNotInCandidates("dX".into()))
        );
    }

    #[test]
    fn selection_clears_prior_rejection_reason() {
        let s = PipelineState::new("q", 3)
            .unwrap()
            .record_rejection("ALL_BIASED: none")
            .unwrap()
            .with_candidates(docs(&[("d1", 0.5), ("d2", 0.4)]))
            .unwrap();
        assert!(s.rejection_reason().is_some());
        let s = s.record_selection("d1").unwrap();
        assert!(s.rejection_reason().is_none());
        assert_eq!(s.selected().unwrap().id, "d1");
    }

    #[test]
    fn candidates_sorted_by_relevance_then_id() {
        let s = PipelineState::new("q", 2)
            .unwrap()
            .with_candidates(docs(&[("b", 0.2), ("c", 0.9), ("a", 0.2), ("d", -0.1)]))
            .unwrap();
        let ids: Vec<_> = s.candidates().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b", "d"]);
    }

    #[test]
    fn candidates_reject_empty_content_and_bad_relevance() {
        let s = PipelineState::new("q", 2).unwrap();
        let empty = vec![Document::new("x", "  ", 0.1)];
        assert!(matches!(s.clone().with_candidates(empty), Err(Error::InvalidDocument(_))));
        let out_of_range = vec![Document::new("x", "ok", 1.5)];
        assert!(matches!(s.with_candidates(out_of_range), Err(Error::InvalidDocument(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("no-select".parse::<Mode>().unwrap(), Mode::NoSourceSelection);
        assert_eq!("ZeroShot".parse::<Mode>().unwrap(), Mode::ZeroShot);
        assert_eq!("few-shot".parse::<Mode>().unwrap(), Mode::FewShot);
        assert_eq!("fewshot".parse::<Mode>(), Err(Error::UnknownMode("fewshot".into())));
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn rejection_prefixes_round_trip() {
        let r = Rejection::new(RejectionKind::LowRelevance, "best rho 0.01");
        assert_eq!(r.to_string(), "LOW_RELEVANCE: best rho 0.01");
        assert_eq!(RejectionKind::from_reason(&r.to_string()), Some(RejectionKind::LowRelevance));
        assert_eq!(RejectionKind::from_reason("all candidates biased"), None);
    }

    #[test]
    fn bias_label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&BiasLabel::Biased).unwrap(), "1");
        assert_eq!(serde_json::from_str::<BiasLabel>("0").unwrap(), BiasLabel::Unbiased);
        assert!(serde_json::from_str::<BiasLabel>("2").is_err());
    }
}
