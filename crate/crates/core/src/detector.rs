//! Bias detectors and candidate annotation.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::fnv1a;
use crate::error::{Error, Result};
use crate::state::{BiasAssessment, BiasLabel, Mode, PipelineState};
use crate::text;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.txt");

/// Assigns a label and a confidence in that label to a piece of text.
pub trait BiasDetector: Send + Sync {
    fn classify(&self, text: &str) -> Result<BiasAssessment>;
}

impl<T: BiasDetector + ?Sized> BiasDetector for Box<T> {
    fn classify(&self, text: &str) -> Result<BiasAssessment> {
        (**self).classify(text)
    }
}

fn default_threshold() -> f64 {
    0.02
}

fn default_slope() -> f64 {
    25.0
}

fn default_detector_timeout() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DetectorConfig {
    Lexicon {
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default = "default_slope")]
        slope: f64,
        #[serde(default)]
        lexicon_path: Option<PathBuf>,
    },
    Remote {
        /// Base URL; requests go to `{endpoint}/classify`.
        endpoint: String,
        #[serde(default = "default_detector_timeout")]
        timeout_secs: u64,
    },
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::Lexicon {
            threshold: default_threshold(),
            slope: default_slope(),
            lexicon_path: None,
        }
    }
}

impl DetectorConfig {
    pub fn build(&self) -> Result<Box<dyn BiasDetector>> {
        match self {
            DetectorConfig::Lexicon {
                threshold,
                slope,
                lexicon_path,
            } => {
                let det = match lexicon_path {
                    Some(path) => LexiconDetector::from_file(path)?,
                    None => LexiconDetector::default(),
                };
                Ok(Box::new(det.with_threshold(*threshold)?.with_slope(*slope)?))
            }
            DetectorConfig::Remote {
                endpoint,
                timeout_secs,
            } => Ok(Box::new(RemoteDetector::new(
                endpoint,
                Duration::from_secs(*timeout_secs),
            )?)),
        }
    }
}

/// Scores text by the fraction `r` of its tokens found in a lexicon of
/// loaded terms. The label is biased iff `r >= threshold`; confidence is
/// `0.5 + min(0.49, |r - threshold| * slope)`, so it grows with the distance
/// from the decision boundary and stays in [0.5, 0.99].
#[derive(Debug, Clone)]
pub struct LexiconDetector {
    terms: HashSet<String>,
    threshold: f64,
    slope: f64,
}

impl LexiconDetector {
    pub const CONFIDENCE_CAP: f64 = 0.49;

    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            terms: terms.into_iter().map(|t| t.as_ref().to_lowercase()).collect(),
            threshold: default_threshold(),
            slope: default_slope(),
        }
    }

    pub fn from_lexicon_text(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::from_lexicon_text(&std::fs::read_to_string(path)?))
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!("lexicon threshold {threshold} outside [0, 1]")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_slope(mut self, slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(Error::InvalidConfig(format!("confidence slope {slope} must be >= 0")));
        }
        self.slope = slope;
        Ok(self)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains(token)
    }

    /// Fraction of tokens that are lexicon terms.
    pub fn hit_rate(&self, text: &str) -> f64 {
        let toks = text::tokens(text);
        if toks.is_empty() {
            return 0.0;
        }
        let hits = toks.iter().filter(|t| self.terms.contains(t.as_str())).count();
        hits as f64 / toks.len() as f64
    }
}

impl Default for LexiconDetector {
    fn default() -> Self {
        Self::from_lexicon_text(DEFAULT_LEXICON)
    }
}

impl BiasDetector for LexiconDetector {
    fn classify(&self, text: &str) -> Result<BiasAssessment> {
        if text.trim().is_empty() {
            return Err(Error::InvalidDocument("cannot classify empty text".into()));
        }
        let r = self.hit_rate(text);
        let label = if r >= self.threshold {
            BiasLabel::Biased
        } else {
            BiasLabel::Unbiased
        };
        let confidence = 0.5 + Self::CONFIDENCE_CAP.min((r - self.threshold).abs() * self.slope);
        Ok(BiasAssessment { label, confidence })
    }
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    label: String,
    score: f64,
}

/// Client for a classifier service exposing `POST /classify`.
#[derive(Debug)]
pub struct RemoteDetector {
    client: reqwest::blocking::Client,
    url: String,
}

impl RemoteDetector {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::DetectorUnavailable(format!("failed to build http client: {e}")))?;
        Ok(Self {
            client,
            url: format!("{}/classify", endpoint.trim_end_matches('/')),
        })
    }
}

impl BiasDetector for RemoteDetector {
    fn classify(&self, text: &str) -> Result<BiasAssessment> {
        if text.trim().is_empty() {
            return Err(Error::InvalidDocument("cannot classify empty text".into()));
        }
        let resp = self
            .client
            .post(&self.url)
            .json(&ClassifyRequest { text })
            .send()
            .map_err(|e| Error::DetectorUnavailable(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::DetectorUnavailable(format!("{} returned HTTP {status}", self.url)));
        }
        let body: ClassifyResponse = resp
            .json()
            .map_err(|e| Error::DetectorUnavailable(format!("malformed classifier response: {e}")))?;
        let label = match body.label.as_str() {
            "Biased" => BiasLabel::Biased,
            "Non-biased" => BiasLabel::Unbiased,
            other => {
                return Err(Error::DetectorUnavailable(format!("unknown classifier label {other:?}")))
            }
        };
        if !(0.0..=1.0).contains(&body.score) {
            return Err(Error::DetectorUnavailable(format!(
                "classifier score {} outside [0, 1]",
                body.score
            )));
        }
        Ok(BiasAssessment {
            label,
            confidence: body.score,
        })
    }
}

/// Wraps a detector and flips its label for a pseudo-random fraction of
/// texts. The flip decision is a pure function of `(seed, text)`.
#[derive(Debug, Clone)]
pub struct NoisyDetector<D> {
    inner: D,
    flip_rate: f64,
    seed: u64,
}

impl<D: BiasDetector> NoisyDetector<D> {
    pub fn new(inner: D, flip_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_rate) {
            return Err(Error::InvalidConfig(format!("flip rate {flip_rate} outside [0, 1]")));
        }
        Ok(Self {
            inner,
            flip_rate,
            seed,
        })
    }

    fn flips(&self, text: &str) -> bool {
        let h = fnv1a(&[&self.seed.to_le_bytes(), text.as_bytes()]);
        // Top 53 bits as a uniform draw in [0, 1).
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        u < self.flip_rate
    }
}

impl<D: BiasDetector> BiasDetector for NoisyDetector<D> {
    fn classify(&self, text: &str) -> Result<BiasAssessment> {
        let mut out = self.inner.classify(text)?;
        if self.flips(text) {
            out.label = out.label.flipped();
        }
        Ok(out)
    }
}

/// Attaches bias assessments to the state. Selection modes annotate every
/// candidate (order preserved); no-selection mode annotates only the
/// selected document. On any failure the state is returned unchanged inside
/// the error path, i.e. nothing is annotated.
pub fn annotate(detector: &dyn BiasDetector, state: PipelineState, mode: Mode) -> Result<PipelineState> {
    if mode.selects_source() {
        if state.candidates().is_empty() {
            return Err(Error::InvalidTransition("annotate requires candidates"));
        }
        let assessments = state
            .candidates()
            .par_iter()
            .map(|doc| detector.classify(&doc.content))
            .collect::<Result<Vec<_>>>()?;
        state.with_candidate_bias(assessments)
    } else {
        let selected = state.selected().ok_or(Error::NoSelection)?;
        let bias = detector.classify(&selected.content)?;
        state.with_selected_bias(bias)
    }
}
