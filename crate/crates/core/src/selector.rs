//! Source selection.
//!
//! Zero-shot selection keeps only candidates confidently labeled unbiased
//! (`label == Unbiased && confidence >= beta_min`) and picks the most
//! relevant of them. When nothing survives the filter the attempt is
//! rejected, except on the final attempt where a relaxed cascade always
//! picks something:
//!
//! 1. any unbiased candidate regardless of confidence, most relevant first;
//! 2. otherwise the candidate with the lowest confidence in its biased
//!    label, then highest relevance, then lowest id.
//!
//! Few-shot selection scores candidates against labeled exemplars. Offline it
//! uses the surrogate `relevance - lambda * biased * confidence`; with a chat
//! client the exemplars are rendered into a prompt and the model chooses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatMessage};
use crate::error::{Error, Result};
use crate::state::{BiasLabel, Document, Rejection, RejectionKind};

const DEFAULT_EXEMPLARS: &str = include_str!("../data/exemplars.json");

pub const DEFAULT_BETA_MIN: f64 = 0.7;

/// Bias and relevance summary of one candidate, as shown in exemplars and
/// prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub beta: f64,
    pub gamma: BiasLabel,
    pub rho: f64,
}

/// A demonstration of a selection decision. `chosen = None` demonstrates a
/// rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub candidates: Vec<CandidateSummary>,
    pub chosen: Option<usize>,
    pub rationale: String,
}

impl FewShotExample {
    fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidConfig("exemplar has no candidates".into()));
        }
        if let Some(i) = self.chosen {
            if i >= self.candidates.len() {
                return Err(Error::InvalidConfig(format!(
                    "exemplar chooses index {i} of {} candidates",
                    self.candidates.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_exemplars(json: &str) -> Result<Vec<FewShotExample>> {
    let exemplars: Vec<FewShotExample> = serde_json::from_str(json).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("invalid exemplar file: {e}"),
    })?;
    for ex in &exemplars {
        ex.validate()?;
    }
    Ok(exemplars)
}

pub fn load_exemplars(path: &Path) -> Result<Vec<FewShotExample>> {
    parse_exemplars(&std::fs::read_to_string(path)?)
}

pub fn default_exemplars() -> Vec<FewShotExample> {
    parse_exemplars(DEFAULT_EXEMPLARS).expect("bundled exemplars are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPolicy {
    pub beta_min: f64,
    /// Weight of the bias penalty in the offline few-shot scorer.
    pub lambda_penalty: f64,
    /// When set, zero-shot also rejects non-final attempts whose best
    /// surviving candidate falls below this relevance.
    pub min_relevance: Option<f64>,
    pub exemplars: Vec<FewShotExample>,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            lambda_penalty: 1.0,
            min_relevance: None,
            exemplars: default_exemplars(),
        }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta_min) {
            return Err(Error::InvalidConfig(format!("beta_min {} outside [0, 1]", self.beta_min)));
        }
        if !(self.lambda_penalty.is_finite() && self.lambda_penalty >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_penalty {} must be a non-negative number",
                self.lambda_penalty
            )));
        }
        for ex in &self.exemplars {
            ex.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SelectionOutcome {
    Selected { id: String },
    Rejected { reason: Rejection },
}

impl SelectionOutcome {
    fn selected(doc: &Document) -> Self {
        SelectionOutcome::Selected { id: doc.id.clone() }
    }

    fn rejected(kind: RejectionKind, detail: impl Into<String>) -> Self {
        SelectionOutcome::Rejected {
            reason: Rejection::new(kind, detail),
        }
    }

    pub fn selected_id(&self) -> Option<&str> {
        match self {
            SelectionOutcome::Selected { id } => Some(id),
            SelectionOutcome::Rejected { .. } => None,
        }
    }
}

struct Annotated<'a> {
    doc: &'a Document,
    label: BiasLabel,
    beta: f64,
}

fn annotated(candidates: &[Document]) -> Result<Vec<Annotated<'_>>> {
    if candidates.is_empty() {
        return Err(Error::InvalidTransition("selection requires at least one candidate"));
    }
    candidates
        .iter()
        .map(|doc| {
            let bias = doc.bias.ok_or_else(|| Error::NotAnnotated(doc.id.clone()))?;
            Ok(Annotated {
                doc,
                label: bias.label,
                beta: bias.confidence,
            })
        })
        .collect()
}

/// Max by `score`, ties to the lowest id.
fn argmax_by<'a, 'b, F>(items: impl IntoIterator<Item = &'b Annotated<'a>>, score: F) -> Option<&'b Annotated<'a>>
where
    'a: 'b,
    F: Fn(&Annotated<'a>) -> f64,
{
    items.into_iter().max_by(|a, b| {
        score(a)
            .total_cmp(&score(b))
            .then_with(|| b.doc.id.cmp(&a.doc.id))
    })
}

pub fn select_zero_shot(
    candidates: &[Document],
    attempt: u32,
    max_retries: u32,
    policy: &SelectionPolicy,
) -> Result<SelectionOutcome> {
    let cands = annotated(candidates)?;
    if attempt >= max_retries {
        return Ok(relaxed(&cands));
    }
    let strict = cands
        .iter()
        .filter(|c| c.label == BiasLabel::Unbiased && c.beta >= policy.beta_min);
    let Some(best) = argmax_by(strict, |c| c.doc.relevance) else {
        return Ok(SelectionOutcome::rejected(
            RejectionKind::AllBiased,
            format!("no unbiased candidate with confidence >= {}", policy.beta_min),
        ));
    };
    if let Some(min) = policy.min_relevance {
        if best.doc.relevance < min {
            return Ok(SelectionOutcome::rejected(
                RejectionKind::LowRelevance,
                format!(
                    "best unbiased candidate {} has relevance {:.4} < {min}",
                    best.doc.id, best.doc.relevance
                ),
            ));
        }
    }
    Ok(SelectionOutcome::selected(best.doc))
}

fn relaxed(cands: &[Annotated<'_>]) -> SelectionOutcome {
    let unbiased = cands.iter().filter(|c| c.label == BiasLabel::Unbiased);
    if let Some(best) = argmax_by(unbiased, |c| c.doc.relevance) {
        return SelectionOutcome::selected(best.doc);
    }
    let least_confident = cands
        .iter()
        .min_by(|a, b| {
            a.beta
                .total_cmp(&b.beta)
                .then_with(|| b.doc.relevance.total_cmp(&a.doc.relevance))
                .then_with(|| a.doc.id.cmp(&b.doc.id))
        })
        .expect("candidates are non-empty");
    SelectionOutcome::selected(least_confident.doc)
}

/// Offline few-shot score: relevance minus a penalty proportional to the
/// confidence of a biased label.
pub fn few_shot_score(rho: f64, label: BiasLabel, beta: f64, lambda: f64) -> f64 {
    let gamma = if label.is_biased() { 1.0 } else { 0.0 };
    rho - lambda * gamma * beta
}

fn select_few_shot_offline(cands: &[Annotated<'_>], is_final: bool, lambda: f64) -> SelectionOutcome {
    let best = argmax_by(cands, |c| few_shot_score(c.doc.relevance, c.label, c.beta, lambda))
        .expect("candidates are non-empty");
    let score = few_shot_score(best.doc.relevance, best.label, best.beta, lambda);
    if score >= 0.0 || is_final {
        SelectionOutcome::selected(best.doc)
    } else {
        SelectionOutcome::rejected(
            RejectionKind::AllBiased,
            format!("best few-shot score negative ({score:.4})"),
        )
    }
}

pub fn select_few_shot(
    candidates: &[Document],
    attempt: u32,
    max_retries: u32,
    policy: &SelectionPolicy,
    chat: Option<&dyn ChatClient>,
) -> Result<SelectionOutcome> {
    let cands = annotated(candidates)?;
    let is_final = attempt >= max_retries;
    let offline = || select_few_shot_offline(&cands, is_final, policy.lambda_penalty);
    let Some(chat) = chat else {
        return Ok(offline());
    };
    let messages = few_shot_messages(&cands, &policy.exemplars, is_final);
    let reply = match chat.complete(&messages) {
        Ok(reply) => reply,
        Err(err) => {
            log::warn!("few-shot selector falling back to offline scorer: {err}");
            return Ok(offline());
        }
    };
    match parse_choice(&reply, cands.len()) {
        Some(ModelChoice::Pick(i, _)) => Ok(SelectionOutcome::selected(cands[i].doc)),
        Some(ModelChoice::Reject(_)) if is_final => Ok(offline()),
        Some(ModelChoice::Reject(reason)) => {
            let detail = if reason.trim().is_empty() {
                "model rejected every candidate".to_string()
            } else {
                reason
            };
            Ok(SelectionOutcome::rejected(RejectionKind::AllBiased, detail))
        }
        None => {
            log::warn!("unusable few-shot reply {reply:?}; using offline scorer");
            Ok(offline())
        }
    }
}

const FEW_SHOT_SYSTEM_PROMPT: &str = "You are a source selection agent. From the numbered candidate \
documents, choose the single source that best combines high relevance (rho, cosine similarity to \
the query) with minimal bias. gamma = 1 means the document was labeled biased and gamma = 0 \
unbiased; beta is the classifier's confidence in that label. Follow the decision pattern shown in \
the examples. Reply with only a JSON object {\"choice\": <candidate index, or -1 to reject all \
candidates>, \"reason\": <one line>}.";

fn summary_line(i: usize, c: &CandidateSummary) -> String {
    format!("  [{i}] beta={:.3} gamma={} rho={:.3}", c.beta, c.gamma.as_u8(), c.rho)
}

fn few_shot_messages(cands: &[Annotated<'_>], exemplars: &[FewShotExample], is_final: bool) -> Vec<ChatMessage> {
    let mut user = String::new();
    for (n, ex) in exemplars.iter().enumerate() {
        user.push_str(&format!("Example {}:\n", n + 1));
        for (i, c) in ex.candidates.iter().enumerate() {
            user.push_str(&summary_line(i, c));
            user.push('\n');
        }
        let choice = ex.chosen.map_or(-1, |i| i as i64);
        user.push_str(&format!("  -> {{\"choice\": {choice}, \"reason\": {:?}}}\n\n", ex.rationale));
    }
    user.push_str("Candidates:\n");
    for (i, c) in cands.iter().enumerate() {
        let summary = CandidateSummary {
            beta: c.beta,
            gamma: c.label,
            rho: c.doc.relevance,
        };
        user.push_str(&summary_line(i, &summary));
        user.push('\n');
    }
    if is_final {
        user.push_str("\nThis is the final attempt: you must choose a candidate; -1 is not allowed.\n");
    }
    vec![ChatMessage::system(FEW_SHOT_SYSTEM_PROMPT), ChatMessage::user(user)]
}

#[derive(Debug, PartialEq)]
enum ModelChoice {
    Pick(usize, String),
    Reject(String),
}

#[derive(Deserialize)]
struct RawChoice {
    choice: i64,
    #[serde(default)]
    reason: String,
}

/// Extracts the outermost JSON object from a model reply. Anything that does
/// not parse, or names an index out of range, yields `None`.
fn parse_choice(reply: &str, n: usize) -> Option<ModelChoice> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let raw: RawChoice = serde_json::from_str(&reply[start..=end]).ok()?;
    match raw.choice {
        -1 => Some(ModelChoice::Reject(raw.reason)),
        i if i >= 0 && (i as usize) < n => Some(ModelChoice::Pick(i as usize, raw.reason)),
        _ => None,
    }
}
