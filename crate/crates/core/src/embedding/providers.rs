use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::{EmbedError, Embedder, DEFAULT_EMBEDDING_MODEL};
use crate::llm::{LlmError, RetryPolicy};
use crate::model::EmbeddingVector;

/// Deterministic offline embedder: signed feature hashing of lowercase word
/// tokens, L2-normalized. Texts sharing words score higher.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn hash(&self, token: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    fn bump(&self, values: &mut [f64], token: &str) {
        let h = self.hash(token);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[bucket] += sign;
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash:{}:{}", self.dim, self.seed)
    }

    fn model_name(&self) -> &str {
        "feature-hash"
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut values = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for token in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            self.bump(&mut values, token);
        }
        if values.iter().all(|v| *v == 0.0) {
            self.bump(&mut values, &format!("\u{0}{lower}"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector::new(values)?)
    }
}

/// Fixed text-to-vector table, falling back to a [`HashEmbedder`].
///
/// Lets tests pin exact vectors for chosen descriptions so the expected
/// ranking is known in advance.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    table: HashMap<String, EmbeddingVector>,
    fallback: HashEmbedder,
}

impl TableEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            table: HashMap::new(),
            fallback: HashEmbedder::new(dim, 0),
        }
    }

    pub fn with(mut self, text: impl Into<String>, values: Vec<f64>) -> Self {
        let vector = EmbeddingVector::new(values).expect("finite test vector");
        assert_eq!(vector.dim(), self.fallback.dim, "table vector dimension");
        self.table.insert(text.into(), vector);
        self
    }
}

impl Embedder for TableEmbedder {
    fn id(&self) -> String {
        format!("table:{}", self.fallback.dim)
    }

    fn model_name(&self) -> &str {
        "table"
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        match self.table.get(text) {
            Some(v) => Ok(v.clone()),
            None => self.fallback.embed(text),
        }
    }
}

/// OpenAI-compatible `/embeddings` endpoint (e.g. a sentence-transformers
/// server exposing `all-mpnet-base-v2`).
pub struct HttpEmbedder {
    base_url: String,
    api_key: String,
    model: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.unwrap_or_else(|| DEFAULT_EMBEDDING_MODEL.to_string()),
            agent: crate::llm::http_agent(timeout),
            retry,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}:{}", self.base_url, self.model)
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({ "model": self.model, "input": [text] });
        let raw = crate::llm::post_json(&self.agent, &url, &self.api_key, &body, &self.retry)?;
        let values: Vec<f64> = raw
            .pointer("/data/0/embedding")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| LlmError::Decode("response has no data[0].embedding".into()))?;
        Ok(EmbeddingVector::new(values)?)
    }
}

/// Disk cache in front of another embedder: one JSON file per
/// `sha256(provider id, text)`.
pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    dir: PathBuf,
    memory: Mutex<HashMap<String, EmbeddingVector>>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn Embedder>, dir: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        })
    }

    pub fn cache_key(&self, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.inner.id().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn cache_path(&self, text: &str) -> PathBuf {
        self.dir.join(format!("{}.json", self.cache_key(text)))
    }
}

impl Embedder for CachedEmbedder {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let key = self.cache_key(text);
        if let Some(v) = self.memory.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let path = self.dir.join(format!("{key}.json"));
        let cached = fs::read(&path)
            .ok()
            .and_then(|bytes| serde_json::from_slice::<EmbeddingVector>(&bytes).ok());
        let vector = match cached {
            Some(v) => v,
            None => {
                let v = self.inner.embed(text)?;
                let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
                tmp.write_all(&serde_json::to_vec(&v).expect("vector serializes"))?;
                tmp.persist(&path).map_err(|e| e.error)?;
                v
            }
        };
        self.memory.lock().unwrap().insert(key, vector.clone());
        Ok(vector)
    }
}
