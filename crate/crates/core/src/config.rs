use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chat::ChatConfig;
use crate::detector::DetectorConfig;
use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::selector::{default_exemplars, load_exemplars, SelectionPolicy, DEFAULT_BETA_MIN};
use crate::writer::DEFAULT_MAX_SENTENCES;

/// How the manager decides the next hand-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// Fixed state machine.
    #[default]
    Deterministic,
    /// Ask the chat model for each hand-off; illegal answers are overridden
    /// by the state machine.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Candidates retrieved per attempt in selection modes.
    pub k: usize,
    pub beta_min: f64,
    pub max_retries: u32,
    pub lambda_penalty: f64,
    pub min_relevance: Option<f64>,
    /// Skip documents already seen in earlier attempts of the same run.
    pub exclude_rejected: bool,
    pub answer_sentences: usize,
    /// Worker threads used by the evaluation harness.
    pub workers: usize,
    /// Opaque label for the reasoning backend, carried into reports.
    pub backend: String,
    pub routing: Routing,
    pub detector: DetectorConfig,
    pub embedder: EmbedderSpec,
    pub chat: Option<ChatConfig>,
    pub exemplar_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            k: 5,
            beta_min: DEFAULT_BETA_MIN,
            max_retries: 2,
            lambda_penalty: 1.0,
            min_relevance: None,
            exclude_rejected: false,
            answer_sentences: DEFAULT_MAX_SENTENCES,
            workers: 4,
            backend: "deterministic".to_string(),
            routing: Routing::Deterministic,
            detector: DetectorConfig::default(),
            embedder: EmbedderSpec::default(),
            chat: None,
            exemplar_path: None,
        }
    }
}

impl Config {
    /// Reads TOML, or JSON when the file extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidConfig("max_retries must be at least 1".into()));
        }
        if self.answer_sentences == 0 {
            return Err(Error::InvalidConfig("answer_sentences must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.routing == Routing::Llm && self.chat.is_none() {
            return Err(Error::InvalidConfig("llm routing requires a [chat] section".into()));
        }
        if let Some(min) = self.min_relevance {
            if !(-1.0..=1.0).contains(&min) {
                return Err(Error::InvalidConfig(format!("min_relevance {min} outside [-1, 1]")));
            }
        }
        if self.embedder.dimension() == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        SelectionPolicy {
            beta_min: self.beta_min,
            lambda_penalty: self.lambda_penalty,
            min_relevance: self.min_relevance,
            exemplars: Vec::new(),
        }
        .validate()
    }

    pub fn selection_policy(&self) -> Result<SelectionPolicy> {
        let exemplars = match &self.exemplar_path {
            Some(path) => load_exemplars(path)?,
            None => default_exemplars(),
        };
        if self.chat.is_some() && exemplars.is_empty() {
            return Err(Error::InvalidConfig("few-shot scoring with a chat model needs exemplars".into()));
        }
        let policy = SelectionPolicy {
            beta_min: self.beta_min,
            lambda_penalty: self.lambda_penalty,
            min_relevance: self.min_relevance,
            exemplars,
        };
        policy.validate()?;
        Ok(policy)
    }
}
