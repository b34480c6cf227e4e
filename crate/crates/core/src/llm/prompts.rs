//! Bundled prompt assets and placeholder rendering.
//!
//! Placeholders are `{identifier}` (lowercase ASCII letters, digits and `_`,
//! not starting with a digit). Any other brace text is literal, so JSON
//! examples inside templates need no escaping and rendering is idempotent on
//! text that contains no placeholders.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("placeholder {{{0}}} has no binding")]
    UnboundPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptAsset {
    CaptainSystem,
    SeekExpertsHelpFormat,
    Reflector,
    ReflectionRetry,
    Selector,
    SelectorRetry,
    AgentGeneralInstructions,
    GroupChatInstructions,
    GroupChatManager,
    ManagerRetry,
    AgentGeneration,
    AgentCompression,
    ProxyDefaultReply,
    VerificationNotice,
    StaticBuilder,
    TaskMath,
    TaskProgramming,
    TaskDataAnalysis,
    TaskScience,
    TaskWorldInformation,
}

impl PromptAsset {
    pub const ALL: [PromptAsset; 20] = [
        PromptAsset::CaptainSystem,
        PromptAsset::SeekExpertsHelpFormat,
        PromptAsset::Reflector,
        PromptAsset::ReflectionRetry,
        PromptAsset::Selector,
        PromptAsset::SelectorRetry,
        PromptAsset::AgentGeneralInstructions,
        PromptAsset::GroupChatInstructions,
        PromptAsset::GroupChatManager,
        PromptAsset::ManagerRetry,
        PromptAsset::AgentGeneration,
        PromptAsset::AgentCompression,
        PromptAsset::ProxyDefaultReply,
        PromptAsset::VerificationNotice,
        PromptAsset::StaticBuilder,
        PromptAsset::TaskMath,
        PromptAsset::TaskProgramming,
        PromptAsset::TaskDataAnalysis,
        PromptAsset::TaskScience,
        PromptAsset::TaskWorldInformation,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            PromptAsset::CaptainSystem => "captain_system",
            PromptAsset::SeekExpertsHelpFormat => "seek_experts_help_format",
            PromptAsset::Reflector => "reflector",
            PromptAsset::ReflectionRetry => "reflection_retry",
            PromptAsset::Selector => "selector",
            PromptAsset::SelectorRetry => "selector_retry",
            PromptAsset::AgentGeneralInstructions => "agent_general_instructions",
            PromptAsset::GroupChatInstructions => "group_chat_instructions",
            PromptAsset::GroupChatManager => "group_chat_manager",
            PromptAsset::ManagerRetry => "manager_retry",
            PromptAsset::AgentGeneration => "agent_generation",
            PromptAsset::AgentCompression => "agent_compression",
            PromptAsset::ProxyDefaultReply => "proxy_default_reply",
            PromptAsset::VerificationNotice => "verification_notice",
            PromptAsset::StaticBuilder => "static_builder",
            PromptAsset::TaskMath => "task_math",
            PromptAsset::TaskProgramming => "task_programming",
            PromptAsset::TaskDataAnalysis => "task_data_analysis",
            PromptAsset::TaskScience => "task_science",
            PromptAsset::TaskWorldInformation => "task_world_information",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.id() == id)
    }

    fn raw(&self) -> &'static str {
        match self {
            PromptAsset::CaptainSystem => include_str!("../../assets/captain_system.md"),
            PromptAsset::SeekExpertsHelpFormat => {
                include_str!("../../assets/seek_experts_help_format.md")
            }
            PromptAsset::Reflector => include_str!("../../assets/reflector.md"),
            PromptAsset::ReflectionRetry => include_str!("../../assets/reflection_retry.md"),
            PromptAsset::Selector => include_str!("../../assets/selector.md"),
            PromptAsset::SelectorRetry => include_str!("../../assets/selector_retry.md"),
            PromptAsset::AgentGeneralInstructions => {
                include_str!("../../assets/agent_general_instructions.md")
            }
            PromptAsset::GroupChatInstructions => {
                include_str!("../../assets/group_chat_instructions.md")
            }
            PromptAsset::GroupChatManager => include_str!("../../assets/group_chat_manager.md"),
            PromptAsset::ManagerRetry => include_str!("../../assets/manager_retry.md"),
            PromptAsset::AgentGeneration => include_str!("../../assets/agent_generation.md"),
            PromptAsset::AgentCompression => include_str!("../../assets/agent_compression.md"),
            PromptAsset::ProxyDefaultReply => include_str!("../../assets/proxy_default_reply.md"),
            PromptAsset::VerificationNotice => {
                include_str!("../../assets/verification_notice.md")
            }
            PromptAsset::StaticBuilder => include_str!("../../assets/static_builder.md"),
            PromptAsset::TaskMath => include_str!("../../assets/tasks/math.md"),
            PromptAsset::TaskProgramming => include_str!("../../assets/tasks/programming.md"),
            PromptAsset::TaskDataAnalysis => include_str!("../../assets/tasks/data_analysis.md"),
            PromptAsset::TaskScience => include_str!("../../assets/tasks/science.md"),
            PromptAsset::TaskWorldInformation => {
                include_str!("../../assets/tasks/world_information.md")
            }
        }
    }

    /// Template text without the file's trailing newline.
    pub fn template(&self) -> &'static str {
        let raw = self.raw();
        raw.strip_suffix('\n').unwrap_or(raw)
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for piece in scan(self.template()) {
            if let Piece::Placeholder(name) = piece {
                if !names.iter().any(|n| n == name) {
                    names.push(name.to_string());
                }
            }
        }
        names
    }
}

impl fmt::Display for PromptAsset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn is_placeholder_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn scan(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder_name(&after[..close]) => {
                if open > 0 {
                    pieces.push(Piece::Literal(&rest[..open]));
                }
                pieces.push(Piece::Placeholder(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                pieces.push(Piece::Literal(&rest[..open + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest));
    }
    pieces
}

/// Substitutes every placeholder of `template` from `bindings`.
pub fn render_text(template: &str, bindings: &[(&str, &str)]) -> Result<String, RenderError> {
    let mut out = String::with_capacity(template.len());
    for piece in scan(template) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Placeholder(name) => {
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| RenderError::UnboundPlaceholder(name.to_string()))?;
                out.push_str(value);
            }
        }
    }
    Ok(out)
}

pub fn render(asset: PromptAsset, bindings: &[(&str, &str)]) -> Result<String, RenderError> {
    render_text(asset.template(), bindings)
}
