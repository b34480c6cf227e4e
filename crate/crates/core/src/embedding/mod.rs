//! Sentence embeddings and exact top-k cosine retrieval.

mod providers;

use std::cmp::Ordering;

use thiserror::Error;

use crate::llm::LlmError;
use crate::model::{EmbeddingVector, ModelError};

pub use providers::{CachedEmbedder, HashEmbedder, HttpEmbedder, TableEmbedder};

/// Model the live embedding provider defaults to.
pub const DEFAULT_EMBEDDING_MODEL: &str = "all-mpnet-base-v2";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cosine similarity is undefined for the zero vector")]
    ZeroVector,
    #[error("duplicate index key {0:?}")]
    DuplicateKey(String),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("embedding cache: {0}")]
    Cache(#[from] std::io::Error),
}

pub trait Embedder: Send + Sync {
    /// Identifies provider and configuration; part of the cache key.
    fn id(&self) -> String;
    fn model_name(&self) -> &str;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    if u.is_zero() || v.is_zero() {
        return Err(EmbedError::ZeroVector);
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.values().iter().zip(v.values()) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub key: String,
    pub vector: EmbeddingVector,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub key: String,
    pub score: f64,
    /// Insertion position in the index.
    pub position: usize,
}

/// Immutable-by-convention list of embedded descriptions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Embeds every `(key, description)` pair in order.
    pub fn build<'a>(
        embedder: &dyn Embedder,
        items: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, EmbedError> {
        let mut index = Self::new();
        for (key, description) in items {
            let vector = embedder.embed(description)?;
            index.insert(key, description, vector)?;
        }
        Ok(index)
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        description: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<(), EmbedError> {
        let key = key.into();
        if self.entries.iter().any(|e| e.key == key) {
            return Err(EmbedError::DuplicateKey(key));
        }
        if self.entries.is_empty() {
            self.dim = vector.dim();
        } else if vector.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        self.entries.push(IndexEntry {
            key,
            vector,
            description: description.into(),
        });
        Ok(())
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Zero for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `min(k, len)` most similar entries, by descending cosine score;
    /// equal scores keep insertion order.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Scored>, EmbedError> {
        if self.entries.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut scored = self
            .entries
            .iter()
            .enumerate()
            .map(|(position, e)| {
                Ok(Scored {
                    key: e.key.clone(),
                    score: cosine(query, &e.vector)?,
                    position,
                })
            })
            .collect::<Result<Vec<_>, EmbedError>>()?;
        scored.sort_by(|a, b| match b.score.total_cmp(&a.score) {
            Ordering::Equal => a.position.cmp(&b.position),
            other => other,
        });
        scored.truncate(k);
        Ok(scored)
    }

    pub fn top_k_text(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<Scored>, EmbedError> {
        if self.entries.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        self.top_k(&embedder.embed(query)?, k)
    }
}
