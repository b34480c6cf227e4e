use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use super::scripted::{save_script, ScriptRecord};
use super::{ChatProvider, Completion, CompletionRequest, LlmError};

/// Wraps a provider and keeps every successful call as a replay record.
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    state: Mutex<RecordState>,
}

#[derive(Default)]
struct RecordState {
    ordinals: HashMap<String, usize>,
    records: Vec<ScriptRecord>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>) -> Self {
        Self {
            inner,
            state: Mutex::new(RecordState::default()),
        }
    }

    pub fn records(&self) -> Vec<ScriptRecord> {
        self.state.lock().unwrap().records.clone()
    }

    /// Persists the session so a scripted run can reproduce it.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        save_script(path, &self.records())
    }
}

impl ChatProvider for RecordingProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let ordinal = {
            let mut state = self.state.lock().unwrap();
            let slot = state
                .ordinals
                .entry(request.request_tag.clone())
                .or_insert(0);
            let current = *slot;
            *slot += 1;
            current
        };
        let response = self.inner.complete(request)?;
        self.state.lock().unwrap().records.push(ScriptRecord {
            tag: request.request_tag.clone(),
            ordinal,
            request: Some(request.clone()),
            response: response.clone(),
        });
        Ok(response)
    }
}
