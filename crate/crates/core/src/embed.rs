//! Embedding providers.
//!
//! [`HashEmbedder`] is a seeded feature-hashing projection: fully offline and
//! bitwise reproducible. [`RemoteEmbedder`] talks to an OpenAI-compatible
//! `/embeddings` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const DEFAULT_DIMENSION: usize = 512;
pub const DEFAULT_SEED: u64 = 0x5eed;

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| Error::Embedding("provider returned no vectors".into()))
    }

    /// Serializable description sufficient to rebuild an equivalent provider.
    fn spec(&self) -> EmbedderSpec;
}

/// Provider configuration as stored in config files and index snapshots.
/// Never carries credentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    DeterministicHash {
        dimension: usize,
        seed: u64,
    },
    RemoteApi {
        endpoint: String,
        model: String,
        dimension: usize,
        #[serde(default = "default_api_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_api_key_env() -> String {
    "BIASGUARD_EMBEDDING_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    30
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::DeterministicHash {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_SEED,
        }
    }
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::DeterministicHash { dimension, .. }
            | EmbedderSpec::RemoteApi { dimension, .. } => *dimension,
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            EmbedderSpec::DeterministicHash { dimension, seed } => {
                Ok(Box::new(HashEmbedder::new(*dimension, *seed)?))
            }
            EmbedderSpec::RemoteApi {
                endpoint,
                model,
                dimension,
                api_key_env,
                timeout_secs,
            } => Ok(Box::new(RemoteEmbedder::new(
                endpoint,
                model,
                *dimension,
                std::env::var(api_key_env).ok(),
                Duration::from_secs(*timeout_secs),
            )?)),
        }
    }
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `std`'s
/// default hasher.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &byte in *part {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Signed feature hashing of content tokens into a fixed number of buckets,
/// then L2 normalization.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension, seed })
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut toks = text::content_tokens(text);
        if toks.is_empty() {
            toks = text::tokens(text);
        }
        if toks.is_empty() {
            toks.push(text.trim().to_string());
        }
        let seed = self.seed.to_le_bytes();
        let mut v = vec![0.0f64; self.dimension];
        for tok in &toks {
            let h = fnv1a(&[&seed, tok.as_bytes()]);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        } else {
            // Every token cancelled out; fall back to a single deterministic bucket.
            let h = fnv1a(&[&seed, text.as_bytes()]);
            v[(h % self.dimension as u64) as usize] = 1.0;
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_SEED,
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::DeterministicHash {
            dimension: self.dimension,
            seed: self.seed,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [&'a str],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Client for an OpenAI-compatible embeddings endpoint. `endpoint` is the
/// full URL the request is POSTed to.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    dimension: usize,
    api_key: Option<String>,
    timeout: Duration,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dimension", &self.dimension)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl RemoteEmbedder {
    const BATCH: usize = 64;

    pub fn new(
        endpoint: &str,
        model: &str,
        dimension: usize,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Embedding(format!("failed to build http client: {e}")))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dimension,
            api_key,
            timeout,
        })
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut req = self.client.post(&self.endpoint).json(&EmbeddingRequest {
            input: texts,
            model: &self.model,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Error::Embedding(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Embedding(format!("{} returned HTTP {status}", self.endpoint)));
        }
        let body: EmbeddingResponse = resp
            .json()
            .map_err(|e| Error::Embedding(format!("malformed embedding response: {e}")))?;
        if body.data.len() != texts.len() {
            return Err(Error::Embedding(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() == self.dimension {
                    Ok(d.embedding)
                } else {
                    Err(Error::DimensionMismatch {
                        expected: self.dimension,
                        actual: d.embedding.len(),
                    })
                }
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(Self::BATCH) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::RemoteApi {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            dimension: self.dimension,
            api_key_env: default_api_key_env(),
            timeout_secs: self.timeout.as_secs(),
        }
    }
}
