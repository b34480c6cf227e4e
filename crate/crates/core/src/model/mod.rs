//! Shared domain types.
//!
//! Everything here is an immutable value object once constructed. Behavior is
//! limited to validation and the (de)serialization contracts of the on-disk
//! formats: the agent library (an array of four-key records) and the tool
//! manifest (an array of six-key records).

mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{parse_reflection, DoubleCheckFlag, ReflectionParseError, ReflectionReport};

/// Header every agent system message starts its persona section with.
pub const ROLE_HEADER: &str = "## Your role";
/// Header of the task-specific skill section of an agent system message.
pub const SKILL_HEADER: &str = "## Task and skill instructions";
/// Upper bound on the compressed one-sentence agent description.
pub const MAX_DESCRIPTION_CHARS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("agent name is empty")]
    EmptyName,
    #[error("agent name {0:?} is not an identifier (letters, digits, underscore)")]
    InvalidName(String),
    #[error("system message lacks the {0:?} header")]
    MissingHeader(&'static str),
    #[error("description is {0} characters, the limit is {MAX_DESCRIPTION_CHARS}")]
    OverlongDescription(usize),
    #[error("description must be a single line")]
    MultiLineDescription,
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("workdir {path} is not usable: {reason}")]
    WorkdirUnavailable { path: PathBuf, reason: String },
    #[error("role description is empty")]
    EmptyRoleDescription,
    #[error("embedding has no components")]
    EmptyEmbedding,
    #[error("embedding component {0} is not finite")]
    NonFiniteEmbedding(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// True for nonempty strings made only of ASCII letters, digits and `_`.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A user task handed to the Captain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub workdir: PathBuf,
}

impl TaskSpec {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        workdir: impl Into<PathBuf>,
    ) -> Result<Self, ModelError> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err(ModelError::EmptyInstruction);
        }
        Ok(Self {
            id: id.into(),
            instruction,
            workdir: workdir.into(),
        })
    }

    /// Checks that the workdir exists, is a directory and accepts writes.
    pub fn check_workdir(&self) -> Result<(), ModelError> {
        let unavailable = |reason: String| ModelError::WorkdirUnavailable {
            path: self.workdir.clone(),
            reason,
        };
        let meta = std::fs::metadata(&self.workdir).map_err(|e| unavailable(e.to_string()))?;
        if !meta.is_dir() {
            return Err(unavailable("not a directory".into()));
        }
        tempfile::tempfile_in(&self.workdir).map_err(|e| unavailable(e.to_string()))?;
        Ok(())
    }
}

/// One role requested by the Captain for a team.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub index: usize,
    pub description: String,
}

impl RoleSpec {
    pub fn new(index: usize, description: impl Into<String>) -> Result<Self, ModelError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(ModelError::EmptyRoleDescription);
        }
        Ok(Self { index, description })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Library,
    Generated,
}

/// An agent library record.
///
/// Only the four library keys are serialized; `provenance` is an in-memory
/// marker and every record read from disk is `Library`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentProfile {
    pub description: String,
    pub tags: Vec<String>,
    pub name: String,
    pub system_message: String,
    #[serde(skip)]
    pub provenance: Provenance,
}

/// Checks the record shape of an agent profile and hands it back unchanged.
pub fn validate_agent_profile(profile: AgentProfile) -> Result<AgentProfile, ModelError> {
    if profile.name.is_empty() {
        return Err(ModelError::EmptyName);
    }
    if !is_identifier(&profile.name) {
        return Err(ModelError::InvalidName(profile.name));
    }
    for header in [ROLE_HEADER, SKILL_HEADER] {
        if !profile.system_message.contains(header) {
            return Err(ModelError::MissingHeader(header));
        }
    }
    let chars = profile.description.chars().count();
    if chars > MAX_DESCRIPTION_CHARS {
        return Err(ModelError::OverlongDescription(chars));
    }
    if profile.description.contains('\n') {
        return Err(ModelError::MultiLineDescription);
    }
    Ok(profile)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    Math,
    DataAnalysis,
    InformationRetrieval,
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolCategory::Math => "math",
            ToolCategory::DataAnalysis => "data_analysis",
            ToolCategory::InformationRetrieval => "information_retrieval",
        })
    }
}

/// A tool manifest entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolRecord {
    pub name: String,
    pub category: ToolCategory,
    pub description: String,
    /// Path of the tool's source module, relative to the tool tree root.
    pub module_path: String,
    pub signature: String,
    pub response_case: String,
    /// Offline stub standing in for a networked tool.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stub: bool,
}

impl ToolRecord {
    /// Dotted import path derived from `module_path` (`a/b/c.py` -> `a.b.c`).
    pub fn import_path(&self) -> String {
        let trimmed = self.module_path.trim_end_matches(".py");
        trimmed.replace(['/', '\\'], ".")
    }

    pub fn resolve(&self, root: &Path) -> PathBuf {
        root.join(&self.module_path)
    }
}

/// A sentence embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmbedding);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteEmbedding(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
    ToolResult,
}

impl ChatRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
            ChatRole::ToolResult => "tool_result",
        }
    }
}

pub const USER_PROXY: &str = "user_proxy";
pub const MANAGER: &str = "manager";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub sender: String,
    pub role: ChatRole,
    pub content: String,
    pub turn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    TerminateToken,
    MaxRounds,
    Error,
}

/// The messages of one expert group conversation.
///
/// `execution_task` is the opening instruction relayed by the user proxy; it
/// is kept apart from `messages`, which only hold expert turns and execution
/// results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedChatTranscript {
    pub group_name: String,
    pub participants: Vec<String>,
    pub execution_task: String,
    pub messages: Vec<ChatMessage>,
    pub terminated_by: TerminatedBy,
}

impl NestedChatTranscript {
    /// Checks sender membership and strictly increasing turns.
    pub fn check(&self) -> Result<(), String> {
        let mut last: Option<usize> = None;
        for m in &self.messages {
            let known = m.sender == USER_PROXY
                || m.sender == MANAGER
                || self.participants.iter().any(|p| p == &m.sender);
            if !known {
                return Err(format!("sender {:?} is not a participant", m.sender));
            }
            if last.is_some_and(|t| t >= m.turn) {
                return Err(format!("turn {} is out of order", m.turn));
            }
            if m.content.is_empty() && m.role != ChatRole::ToolResult {
                return Err(format!("turn {} has empty content", m.turn));
            }
            last = Some(m.turn);
        }
        Ok(())
    }

    /// JSON lines, one message per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("message serializes"));
            out.push('\n');
        }
        out
    }
}

/// Retrieval and loop bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Agent candidates per role.
    pub k1: usize,
    /// Tools per role.
    pub k2: usize,
    pub max_agent_number: usize,
    pub max_nested_rounds: usize,
    pub max_double_checks: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k1: 3,
            k2: 3,
            max_agent_number: 5,
            max_nested_rounds: 20,
            max_double_checks: 2,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k1 < 1 {
            return Err(ModelError::InvalidConfig("k1 must be at least 1".into()));
        }
        if self.max_agent_number < 2 {
            return Err(ModelError::InvalidConfig(
                "max_agent_number must be at least 2".into(),
            ));
        }
        if self.max_nested_rounds < 1 {
            return Err(ModelError::InvalidConfig(
                "max_nested_rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reference_record() -> AgentProfile {
        let json = include_str!("../../tests/fixtures/python_programming_expert.json");
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn reference_record_is_valid() {
        let p = reference_record();
        assert_eq!(p.name, "PythonProgramming_Expert");
        assert_eq!(p.tags.len(), 13);
        let v = validate_agent_profile(p.clone()).unwrap();
        assert_eq!(v, p);
    }

    #[test]
    fn empty_name_rejected() {
        let mut p = reference_record();
        p.name.clear();
        assert_eq!(validate_agent_profile(p), Err(ModelError::EmptyName));
    }

    #[test]
    fn headerless_message_rejected() {
        let mut p = reference_record();
        p.system_message = "hello".into();
        assert_eq!(
            validate_agent_profile(p),
            Err(ModelError::MissingHeader(ROLE_HEADER))
        );
    }

    #[test]
    fn long_description_rejected() {
        let mut p = reference_record();
        p.description = "a".repeat(513);
        assert_eq!(
            validate_agent_profile(p),
            Err(ModelError::OverlongDescription(513))
        );
    }

    #[test]
    fn record_keys_are_exact() {
        let p = reference_record();
        let value = serde_json::to_value(&p).unwrap();
        let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["description", "tags", "name", "system_message"]);
        let extra = r#"{"description":"d","tags":[],"name":"n","system_message":"s","x":1}"#;
        assert!(serde_json::from_str::<AgentProfile>(extra).is_err());
    }

    #[test]
    fn tool_import_path() {
        let t = ToolRecord {
            name: "sum_of_primes_below".into(),
            category: ToolCategory::Math,
            description: String::new(),
            module_path: "tools/math/sum_of_primes_below.py".into(),
            signature: String::new(),
            response_case: String::new(),
            stub: false,
        };
        assert_eq!(t.import_path(), "tools.math.sum_of_primes_below");
        let json = serde_json::to_value(&t).unwrap();
        assert!(json.get("stub").is_none());
        assert_eq!(json["category"], "math");
    }

    #[test]
    fn embedding_rejects_nan() {
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(ModelError::NonFiniteEmbedding(1))
        );
        assert_eq!(EmbeddingVector::new(vec![]), Err(ModelError::EmptyEmbedding));
    }

    #[test]
    fn config_bounds() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let cfg = RetrievalConfig {
            max_agent_number: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RetrievalConfig {
            k1: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn transcript_check_catches_strangers() {
        let t = NestedChatTranscript {
            group_name: "g".into(),
            participants: vec!["A".into()],
            execution_task: "t".into(),
            messages: vec![ChatMessage {
                sender: "B".into(),
                role: ChatRole::Assistant,
                content: "hi".into(),
                turn: 0,
            }],
            terminated_by: TerminatedBy::MaxRounds,
        };
        assert!(t.check().is_err());
    }

    #[test]
    fn task_workdir_checked() {
        let dir = tempfile::tempdir().unwrap();
        let task = TaskSpec::new("t", "do it", dir.path()).unwrap();
        task.check_workdir().unwrap();
        let missing = TaskSpec::new("t", "do it", dir.path().join("nope")).unwrap();
        assert!(missing.check_workdir().is_err());
        assert_eq!(
            TaskSpec::new("t", "  ", dir.path()),
            Err(ModelError::EmptyInstruction)
        );
    }
}
