//! Exact cosine-similarity document index.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedderSpec, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::state::{candidate_order, BiasLabel, Document};

/// One line of a corpus file: `{"id": ..., "text": ..., "label": 0|1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<BiasLabel>,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<BiasLabel>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// Parses JSON Lines, skipping blank lines. Errors carry the 1-based line
/// number.
pub fn parse_jsonl<T: serde::de::DeserializeOwned>(reader: impl Read) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_jsonl(fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub text: String,
    /// Dataset annotation, used only for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<BiasLabel>,
    pub embedding: Vec<f64>,
}

/// Immutable after ingestion; safe to query from many threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    embedder: EmbedderSpec,
    entries: Vec<CorpusEntry>,
}

impl Index {
    pub fn ingest(records: &[CorpusRecord], provider: &dyn EmbeddingProvider) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in records {
            if r.text.trim().is_empty() {
                return Err(Error::InvalidDocument(format!("document {:?} has empty text", r.id)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let embeddings = provider.embed_batch(&texts)?;
        let dim = provider.dimension();
        let entries = records
            .iter()
            .zip(embeddings)
            .map(|(r, embedding)| {
                if embedding.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: embedding.len(),
                    });
                }
                Ok(CorpusEntry {
                    id: r.id.clone(),
                    text: r.text.clone(),
                    gold_label: r.label,
                    embedding,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedder: provider.spec(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn embedder_spec(&self) -> &EmbedderSpec {
        &self.embedder
    }

    pub fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    /// The `k` most similar documents, relevance set, in candidate order.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Document>> {
        self.top_k_excluding(query, k, &HashSet::new())
    }

    /// As [`Index::top_k`], ignoring documents whose id is in `exclude`.
    pub fn top_k_excluding(
        &self,
        query: &[f64],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Document>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut scored = self
            .entries
            .iter()
            .filter(|e| !exclude.contains(&e.id))
            .map(|e| Ok(Document::new(e.id.clone(), e.text.clone(), cosine(query, &e.embedding)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(candidate_order);
        scored.truncate(k);
        Ok(scored)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Io(format!("failed to serialize index: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let index: Index = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("invalid index snapshot: {e}"),
        })?;
        let dim = index.dimension();
        if let Some(bad) = index.entries.iter().find(|e| e.embedding.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.embedding.len(),
            });
        }
        Ok(index)
    }
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}
