use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, Completion, CompletionRequest, LlmError};

/// One replay script line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub tag: String,
    pub ordinal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<CompletionRequest>,
    pub response: Completion,
}

impl ScriptRecord {
    pub fn reply(tag: impl Into<String>, ordinal: usize, content: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            ordinal,
            request: None,
            response: Completion {
                content: content.into(),
                usage: None,
            },
        }
    }
}

/// Reads a JSON-lines replay script. Blank lines are skipped.
pub fn load_script(path: &Path) -> Result<Vec<ScriptRecord>, LlmError> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| LlmError::Decode(format!("{}:{}: {e}", path.display(), n + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_script(path: &Path, records: &[ScriptRecord]) -> Result<(), LlmError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| LlmError::Decode(e.to_string()))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    file.sync_all()?;
    Ok(())
}

/// Replays recorded responses by `(request_tag, per-tag ordinal)`.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    records: HashMap<(String, usize), Completion>,
    ordinals: Mutex<HashMap<String, usize>>,
    mismatches: Mutex<Vec<(String, usize)>>,
}

impl ScriptedProvider {
    pub fn new(records: impl IntoIterator<Item = ScriptRecord>) -> Self {
        let records = records
            .into_iter()
            .map(|r| ((r.tag, r.ordinal), r.response))
            .collect();
        Self {
            records,
            ..Default::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(load_script(path)?))
    }

    /// Builder-style helper: the next reply for `tag`.
    pub fn push(&mut self, tag: &str, content: impl Into<String>) -> &mut Self {
        let ordinal = self.records.keys().filter(|(t, _)| t == tag).count();
        self.records.insert(
            (tag.to_string(), ordinal),
            Completion {
                content: content.into(),
                usage: None,
            },
        );
        self
    }

    /// By-value form of [`push`](Self::push).
    pub fn with(mut self, tag: &str, content: impl Into<String>) -> Self {
        self.push(tag, content);
        self
    }

    /// Keys requested but absent from the script, in call order.
    pub fn mismatches(&self) -> Vec<(String, usize)> {
        self.mismatches.lock().unwrap().clone()
    }

    /// Number of calls served or attempted per tag.
    pub fn calls(&self, tag: &str) -> usize {
        self.ordinals.lock().unwrap().get(tag).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let ordinal = {
            let mut ordinals = self.ordinals.lock().unwrap();
            let slot = ordinals.entry(request.request_tag.clone()).or_insert(0);
            let current = *slot;
            *slot += 1;
            current
        };
        let key = (request.request_tag.clone(), ordinal);
        match self.records.get(&key) {
            Some(c) => Ok(c.clone()),
            None => {
                self.mismatches.lock().unwrap().push(key.clone());
                Err(LlmError::ScriptMismatch {
                    tag: key.0,
                    ordinal,
                })
            }
        }
    }
}
