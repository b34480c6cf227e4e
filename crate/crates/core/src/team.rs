//! Team building: role parsing, agent retrieval, selection with abstention,
//! generation of missing agents and tool binding.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::json::extract_object;
use crate::library::{disambiguate, AgentLibrary, LibraryError};
use crate::llm::{render, tags, Gateway, LlmError, Message, PromptAsset, RenderError};
use crate::model::{
    is_identifier, AgentProfile, ModelError, Provenance, RetrievalConfig, RoleSpec, ToolRecord,
    MAX_DESCRIPTION_CHARS, ROLE_HEADER, SKILL_HEADER,
};
use crate::tools::{injection_block, ToolError, ToolRegistry};

#[derive(Debug, Error)]
pub enum TeamError {
    #[error("building_task contains no role bullets")]
    NoRolesFound,
    #[error("{count} roles requested, at most {max} allowed")]
    TooManyRoles { count: usize, max: usize },
    #[error("{0} role requested, a team needs at least 2 (including a verifier)")]
    TooFewRoles(usize),
    #[error("selector reply is not a JSON object after a retry: {0}")]
    SelectorMalformed(String),
    #[error("generator reply is not a JSON object with name, role and skills: {0}")]
    GeneratorMalformed(String),
    #[error("generated name {0:?} is not an identifier even after sanitizing")]
    InvalidGeneratedName(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Tools(#[from] ToolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// One markdown bullet per role; continuation lines join the bullet above.
pub fn parse_roles(building_task: &str, max_agent_number: usize) -> Result<Vec<RoleSpec>, TeamError> {
    let mut descriptions: Vec<String> = Vec::new();
    for line in building_task.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let bullet = ["- ", "* ", "+ "]
            .iter()
            .find_map(|p| trimmed.strip_prefix(p));
        match (bullet, descriptions.last_mut()) {
            (Some(text), _) => descriptions.push(text.trim().to_string()),
            (None, Some(last)) => {
                last.push(' ');
                last.push_str(trimmed);
            }
            (None, None) => {}
        }
    }
    descriptions.retain(|d| !d.is_empty());
    if descriptions.is_empty() {
        return Err(TeamError::NoRolesFound);
    }
    if descriptions.len() > max_agent_number {
        return Err(TeamError::TooManyRoles {
            count: descriptions.len(),
            max: max_agent_number,
        });
    }
    Ok(descriptions
        .into_iter()
        .enumerate()
        .map(|(i, d)| RoleSpec::new(i, d).expect("nonempty description"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamRequest {
    pub group_name: String,
    pub building_task: String,
    pub execution_task: String,
}

impl TeamRequest {
    /// Parsed roles; a team needs at least two.
    pub fn roles(&self, max_agent_number: usize) -> Result<Vec<RoleSpec>, TeamError> {
        let roles = parse_roles(&self.building_task, max_agent_number)?;
        if roles.len() < 2 {
            return Err(TeamError::TooFewRoles(roles.len()));
        }
        Ok(roles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Selected,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamMember {
    pub role: RoleSpec,
    pub profile: AgentProfile,
    pub tools: Vec<ToolRecord>,
    pub origin: Origin,
}

impl TeamMember {
    pub fn name(&self) -> &str {
        &self.profile.name
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRoster {
    pub group_name: String,
    pub members: Vec<TeamMember>,
}

impl TeamRoster {
    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.profile.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&TeamMember> {
        self.members.iter().find(|m| m.profile.name == name)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.members.is_empty() {
            return Err("roster is empty".into());
        }
        let mut seen = HashSet::new();
        for (i, m) in self.members.iter().enumerate() {
            if m.role.index != i {
                return Err(format!("member {i} fills role {}", m.role.index));
            }
            if !seen.insert(m.profile.name.as_str()) {
                return Err(format!("duplicate member name {:?}", m.profile.name));
            }
        }
        Ok(())
    }
}

fn expert_pool(candidates: &[Vec<AgentProfile>]) -> String {
    let mut seen = HashSet::new();
    let mut lines = Vec::new();
    for p in candidates.iter().flatten() {
        if seen.insert(p.name.as_str()) {
            lines.push(format!("{}: {}", p.name, p.description));
        }
    }
    lines.join("\n")
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// The expert name a selector value refers to, or `None` for abstention.
fn named_expert(value: &Value) -> Option<String> {
    let text = value.as_str()?.trim();
    let name = text.split(':').next().unwrap_or("").trim();
    let name = name.trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c == '*');
    if name.is_empty() || name.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(name.to_string())
    }
}

fn resolve_selection(
    answer: &serde_json::Map<String, Value>,
    roles: &[RoleSpec],
    candidates: &[Vec<AgentProfile>],
) -> Vec<Option<AgentProfile>> {
    roles
        .iter()
        .zip(candidates)
        .map(|(role, slate)| {
            let value = answer.get(&role.description).or_else(|| {
                let wanted = normalize(&role.description);
                answer
                    .iter()
                    .find(|(k, _)| normalize(k) == wanted)
                    .map(|(_, v)| v)
            })?;
            let name = named_expert(value)?;
            slate.iter().find(|p| p.name == name).cloned()
        })
        .collect()
}

/// Asks the selector once for all roles. Roles whose answer is "None",
/// missing, or names an agent outside that role's slate abstain.
pub fn select_agents(
    gateway: &Gateway,
    roles: &[RoleSpec],
    candidates: &[Vec<AgentProfile>],
) -> Result<Vec<Option<AgentProfile>>, TeamError> {
    assert_eq!(roles.len(), candidates.len(), "one slate per role");
    if candidates.iter().all(Vec::is_empty) {
        return Ok(vec![None; roles.len()]);
    }
    let skills = roles
        .iter()
        .map(|r| r.description.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        PromptAsset::Selector,
        &[("skills", &skills), ("expert_pool", &expert_pool(candidates))],
    )?;
    let mut messages = vec![Message::user(prompt)];
    let first = gateway.complete(tags::SELECTOR, messages.clone())?;
    if let Some(answer) = extract_object(&first) {
        return Ok(resolve_selection(&answer, roles, candidates));
    }
    messages.push(Message::assistant(first));
    messages.push(Message::user(PromptAsset::SelectorRetry.template()));
    let second = gateway.complete(tags::SELECTOR, messages)?;
    match extract_object(&second) {
        Some(answer) => Ok(resolve_selection(&answer, roles, candidates)),
        None => Err(TeamError::SelectorMalformed(second)),
    }
}

/// Maps spaces and hyphens to `_` and drops every other character that is
/// not an ASCII letter, digit or underscore.
pub fn sanitize_name(raw: &str) -> String {
    raw.trim()
        .chars()
        .filter_map(|c| match c {
            ' ' | '-' => Some('_'),
            c if c.is_ascii_alphanumeric() || c == '_' => Some(c),
            _ => None,
        })
        .collect()
}

/// The system message of a generated agent, before tools are bound.
pub fn compose_system_message(name: &str, role: &str, skills: &str) -> String {
    let role = role.trim();
    let role_line = if role.is_empty() {
        format!("You are {name}.")
    } else if role.contains(name) {
        role.to_string()
    } else {
        format!("{name}: {role}")
    };
    format!(
        "{ROLE_HEADER}\n{role_line}\n\n{SKILL_HEADER}\n{skills}\n\n{general}\n\n{group}",
        skills = skills.trim(),
        general = PromptAsset::AgentGeneralInstructions.template(),
        group = PromptAsset::GroupChatInstructions.template(),
    )
}

/// Appends the tools section when any tool is bound.
pub fn bind_tools(system_message: &str, tools: &[ToolRecord]) -> String {
    if tools.is_empty() {
        system_message.to_string()
    } else {
        format!("{system_message}\n\n{}", injection_block(tools).trim_end())
    }
}

fn one_line(text: &str, fallback: &str) -> String {
    let mut line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if line.is_empty() {
        line = fallback.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    match line.char_indices().nth(MAX_DESCRIPTION_CHARS) {
        Some((cut, _)) => line[..cut].trim_end().to_string(),
        None => line,
    }
}

fn text_field(map: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match map.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(
            items
                .iter()
                .map(|v| match v {
                    Value::String(s) => format!("- {s}"),
                    other => format!("- {other}"),
                })
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        _ => None,
    }
}

/// Generates an agent for `role`, compresses its description and adds it to
/// the library. The returned profile carries the stored (possibly suffixed)
/// name.
pub fn generate_agent(
    gateway: &Gateway,
    library: &mut AgentLibrary,
    role: &RoleSpec,
    task_context: &str,
) -> Result<AgentProfile, TeamError> {
    let prompt = render(
        PromptAsset::AgentGeneration,
        &[("role", &role.description), ("task_context", task_context)],
    )?;
    let reply = gateway.complete(tags::GENERATOR, vec![Message::user(prompt)])?;
    let fields = extract_object(&reply)
        .and_then(|m| Some((text_field(&m, "name")?, text_field(&m, "role"), text_field(&m, "skills")?)));
    let Some((raw_name, role_text, skills)) = fields else {
        return Err(TeamError::GeneratorMalformed(reply));
    };
    let name = if is_identifier(raw_name.trim()) {
        raw_name.trim().to_string()
    } else {
        let cleaned = sanitize_name(&raw_name);
        if !is_identifier(&cleaned) {
            return Err(TeamError::InvalidGeneratedName(raw_name));
        }
        cleaned
    };
    let role_text = role_text.unwrap_or_default();
    let system_message = compose_system_message(&name, &role_text, &skills);

    let prompt = render(
        PromptAsset::AgentCompression,
        &[("system_message", &system_message)],
    )?;
    let summary = gateway.complete(tags::COMPRESSOR, vec![Message::user(prompt)])?;
    let fallback = if role_text.trim().is_empty() { name.clone() } else { role_text };
    let profile = AgentProfile {
        description: one_line(&summary, &fallback),
        tags: vec!["generated".into(), gateway.models().model_for(&tags::expert(&name)).to_string()],
        name,
        system_message,
        provenance: Provenance::Generated,
    };
    let stored = library.add_generated(profile.clone())?;
    Ok(AgentProfile { name: stored, ..profile })
}

/// Retrieval, selection, generation for abstained roles, then tool binding.
pub fn build_team(
    gateway: &Gateway,
    library: &mut AgentLibrary,
    tools: &ToolRegistry,
    request: &TeamRequest,
    config: &RetrievalConfig,
) -> Result<TeamRoster, TeamError> {
    let roles = request.roles(config.max_agent_number)?;
    let mut slates = Vec::with_capacity(roles.len());
    let mut bound = Vec::with_capacity(roles.len());
    for role in &roles {
        slates.push(library.candidates(&role.description, config.k1)?);
        bound.push(tools.tools_for_role(role, config.k2)?);
    }
    let selection = select_agents(gateway, &roles, &slates)?;

    let mut members: Vec<TeamMember> = Vec::with_capacity(roles.len());
    for ((role, chosen), role_tools) in roles.into_iter().zip(selection).zip(bound) {
        let (mut profile, origin) = match chosen {
            Some(p) => (p, Origin::Selected),
            None => (
                generate_agent(gateway, library, &role, &request.execution_task)?,
                Origin::Generated,
            ),
        };
        profile.name = disambiguate(&profile.name, |n| members.iter().any(|m| m.profile.name == n));
        profile.system_message = bind_tools(&profile.system_message, &role_tools);
        tracing::debug!(role = role.index, name = %profile.name, ?origin, "team member");
        members.push(TeamMember {
            role,
            profile,
            tools: role_tools,
            origin,
        });
    }
    Ok(TeamRoster {
        group_name: request.group_name.clone(),
        members,
    })
}
