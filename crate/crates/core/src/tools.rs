//! Tool manifest loading, per-role tool retrieval, and the tool section
//! appended to agent system messages.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, EmbeddingIndex};
use crate::model::{RoleSpec, ToolCategory, ToolRecord};

pub const TOOLS_HEADER: &str = "## Useful tools";
const MODULE_PATH_PREFIX: &str = "Module path: ";

const PREAMBLE: &str = "You can call the functions below from Python code. \
Each one lives in a Python module under the tool directory, which is on the import path of the \
code execution environment. Import the function with the statement shown and write free-form \
code around it: combine several tools, post-process their output, or use them inside larger \
programs. Put the code in a python coding block so the user proxy runs it.";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool manifest does not parse: {0}")]
    ParseFailure(String),
    #[error("tool {0:?} points at a module that does not exist")]
    DanglingModulePath(String),
    #[error("duplicate tool name {0:?}")]
    DuplicateName(String),
    #[error("tool manifest I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub struct ToolRegistry {
    root: PathBuf,
    tools: Vec<ToolRecord>,
    index: EmbeddingIndex,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("root", &self.root)
            .field("len", &self.tools.len())
            .finish()
    }
}

impl ToolRegistry {
    pub fn empty(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            root: PathBuf::new(),
            tools: Vec::new(),
            index: EmbeddingIndex::new(),
            embedder,
        }
    }

    /// Loads a manifest. Module paths resolve against `root`, or against the
    /// manifest's directory when `root` is `None`.
    pub fn load_manifest(
        path: &Path,
        root: Option<&Path>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, ToolError> {
        let text = fs::read_to_string(path)?;
        let records: Vec<ToolRecord> =
            serde_json::from_str(&text).map_err(|e| ToolError::ParseFailure(e.to_string()))?;
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Self::from_records(records, root, embedder)
    }

    pub fn from_records(
        records: Vec<ToolRecord>,
        root: impl Into<PathBuf>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, ToolError> {
        let root = root.into();
        let mut names = HashSet::new();
        for r in &records {
            if !names.insert(r.name.as_str()) {
                return Err(ToolError::DuplicateName(r.name.clone()));
            }
            if !r.resolve(&root).is_file() {
                return Err(ToolError::DanglingModulePath(r.name.clone()));
            }
        }
        let index = EmbeddingIndex::build(
            embedder.as_ref(),
            records
                .iter()
                .map(|r| (r.name.as_str(), r.description.as_str())),
        )?;
        Ok(Self {
            root,
            tools: records,
            index,
            embedder,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tools(&self) -> &[ToolRecord] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn count(&self, category: ToolCategory) -> usize {
        self.tools.iter().filter(|t| t.category == category).count()
    }

    /// The `k2` tools whose descriptions are closest to the role's.
    pub fn tools_for_role(&self, role: &RoleSpec, k2: usize) -> Result<Vec<ToolRecord>, ToolError> {
        let hits = self
            .index
            .top_k_text(self.embedder.as_ref(), &role.description, k2)?;
        Ok(hits
            .into_iter()
            .map(|s| self.tools[s.position].clone())
            .collect())
    }
}

/// Markdown section describing how to use `tools`, one subsection per tool
/// in the given order.
pub fn injection_block(tools: &[ToolRecord]) -> String {
    let mut out = format!("{TOOLS_HEADER}\n{PREAMBLE}\n");
    for t in tools {
        out.push_str(&format!(
            "\n### {name}\n{description}\n{MODULE_PATH_PREFIX}{path}\nImport: from {import} import {name}\nSignature: {signature}\nResponse case:\n{case}\n",
            name = t.name,
            description = t.description,
            path = t.module_path,
            import = t.import_path(),
            signature = t.signature,
            case = t.response_case,
        ));
    }
    out
}

/// Recovers `(name, module_path)` pairs from an injected tools section.
pub fn parse_injection_block(text: &str) -> Vec<(String, String)> {
    let Some(start) = text.find(TOOLS_HEADER) else {
        return Vec::new();
    };
    let mut out: Vec<(String, Option<String>)> = Vec::new();
    for line in text[start..].lines() {
        if let Some(name) = line.strip_prefix("### ") {
            out.push((name.trim().to_string(), None));
        } else if let Some(path) = line.strip_prefix(MODULE_PATH_PREFIX) {
            if let Some(last) = out.last_mut() {
                if last.1.is_none() {
                    last.1 = Some(path.trim().to_string());
                }
            }
        }
    }
    out.into_iter()
        .filter_map(|(n, p)| p.map(|p| (n, p)))
        .collect()
}
