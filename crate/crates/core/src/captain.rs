//! The outer loop: the Captain plans, asks expert groups for help, reads
//! their reflection reports, verifies doubtful results and terminates.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{
    execute_blocks, extract_code_blocks, is_terminate, run_group_chat, strip_terminate, ChatError,
    CodeBlock,
};
use crate::library::AgentLibrary;
use crate::llm::{render, tags, Gateway, LlmError, Message, PromptAsset, RenderError};
use crate::model::{
    ChatMessage, ChatRole, NestedChatTranscript, ReflectionReport, RetrievalConfig, TaskSpec,
    USER_PROXY,
};
use crate::reflection::{reflect, DoubleCheckPolicy, ReflectionError};
use crate::sandbox::{open_session, SandboxConfig, SandboxError, Session};
use crate::team::{build_team, parse_roles, TeamError, TeamRequest, TeamRoster};
use crate::tools::ToolRegistry;

pub const CAPTAIN: &str = "captain";

#[derive(Debug, Error)]
pub enum CaptainError {
    #[error("the Captain did not terminate within {0} turns")]
    CaptainExhausted(usize),
    #[error(transparent)]
    Team(#[from] TeamError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeekRequest {
    pub group_name: Option<String>,
    pub building_task: String,
    pub execution_task: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptainTurn {
    SeekExpertsHelp(SeekRequest),
    CodeBlocks(Vec<CodeBlock>),
    Terminate,
    Plain,
    /// The call sections are present but unusable; the reason goes back to
    /// the Captain.
    MalformedTeamRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Seek,
    GroupName,
    BuildingTask,
    ExecutionTask,
}

fn section_header(line: &str) -> Option<Section> {
    let trimmed = line.trim();
    let hashes = trimmed.chars().take_while(|c| *c == '#').count();
    if hashes == 0 {
        return None;
    }
    let name = trimmed[hashes..]
        .trim()
        .trim_matches(|c: char| matches!(c, '*' | '`' | ':' | '"'))
        .trim()
        .to_ascii_lowercase()
        .replace([' ', '-'], "_");
    match name.as_str() {
        "seek_experts_help" => Some(Section::Seek),
        "group_name" => Some(Section::GroupName),
        "building_task" => Some(Section::BuildingTask),
        "execution_task" => Some(Section::ExecutionTask),
        _ => None,
    }
}

/// Classifies a Captain message. A call to seek_experts_help wins over
/// TERMINATE, which wins over code blocks.
pub fn parse_captain_turn(message: &str, max_agent_number: usize) -> CaptainTurn {
    let lines: Vec<&str> = message.lines().collect();
    let mut group_at = Vec::new();
    let mut building_at = Vec::new();
    let mut execution_at = Vec::new();
    let mut in_fence = false;
    for (i, line) in lines.iter().enumerate() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
        }
        if in_fence || !execution_at.is_empty() {
            continue;
        }
        match section_header(line) {
            Some(Section::GroupName) => group_at.push(i),
            Some(Section::BuildingTask) => building_at.push(i),
            Some(Section::ExecutionTask) => execution_at.push(i),
            _ => {}
        }
    }
    let after_execution = execution_at.first().map_or(&lines[..0], |&e| &lines[e + 1..]);
    let extra_calls = after_execution
        .iter()
        .filter(|l| section_header(l) == Some(Section::BuildingTask))
        .count();

    if !building_at.is_empty() || !execution_at.is_empty() {
        if building_at.len() + extra_calls > 1 {
            return CaptainTurn::MalformedTeamRequest(
                "only one group of experts can be requested per reply".into(),
            );
        }
        let (Some(&b), Some(&e)) = (building_at.first(), execution_at.first()) else {
            return CaptainTurn::MalformedTeamRequest(
                "a call needs both a building_task and an execution_task section".into(),
            );
        };
        if e < b {
            return CaptainTurn::MalformedTeamRequest(
                "the building_task section must come before the execution_task section".into(),
            );
        }
        let building_end = group_at.iter().copied().filter(|&g| g > b).chain([e]).min().unwrap_or(e);
        let building_task = lines[b + 1..building_end].join("\n").trim().to_string();
        let execution_task = strip_terminate(&after_execution.join("\n"));
        let group_name = group_at.first().and_then(|&g| {
            lines[g + 1..]
                .iter()
                .take_while(|l| section_header(l).is_none())
                .map(|l| l.trim())
                .find(|l| !l.is_empty())
                .map(|l| l.trim_matches(|c: char| matches!(c, '*' | '`' | '"' | '[' | ']')).trim().to_string())
                .filter(|l| !l.is_empty())
        });
        match parse_roles(&building_task, max_agent_number) {
            Ok(roles) if roles.len() < 2 => {
                return CaptainTurn::MalformedTeamRequest(
                    "a team needs at least 2 roles, including a verifier".into(),
                )
            }
            Ok(_) => {}
            Err(e) => return CaptainTurn::MalformedTeamRequest(e.to_string()),
        }
        if execution_task.is_empty() {
            return CaptainTurn::MalformedTeamRequest("the execution_task section is empty".into());
        }
        return CaptainTurn::SeekExpertsHelp(SeekRequest {
            group_name,
            building_task,
            execution_task,
        });
    }
    if is_terminate(message) {
        return CaptainTurn::Terminate;
    }
    match extract_code_blocks(message) {
        Ok(blocks) if !blocks.is_empty() => CaptainTurn::CodeBlocks(blocks),
        _ => CaptainTurn::Plain,
    }
}

/// Content of the last `\boxed{...}` or `\box{...}` in `text`.
pub fn extract_boxed(text: &str) -> Option<String> {
    let (start, open) = ["\\boxed{", "\\box{"]
        .iter()
        .filter_map(|m| text.rfind(m).map(|i| (i, m.len())))
        .max_by_key(|(i, _)| *i)?;
    let mut depth = 1;
    let body = &text[start + open..];
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(body[..i].trim().to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Boxed content when present, the whole trimmed text otherwise.
pub fn answer_from(text: &str) -> String {
    let text = strip_terminate(text);
    extract_boxed(&text).unwrap_or(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Planning,
    Cycling,
    Verifying,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub request: TeamRequest,
    pub verification: bool,
    pub roster: Option<TeamRoster>,
    pub transcript: Option<NestedChatTranscript>,
    pub report: Option<ReflectionReport>,
    /// Set when this cycle's report triggered a double-check.
    pub double_check_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub task: TaskSpec,
    pub mode: String,
    pub cycle_log: Vec<CycleRecord>,
    pub captain_dialogue: Vec<ChatMessage>,
    pub status: RunStatus,
    pub final_answer: Option<String>,
    pub error: Option<String>,
}

impl RunState {
    fn new(task: &TaskSpec, mode: &str) -> Self {
        Self {
            task: task.clone(),
            mode: mode.into(),
            cycle_log: Vec::new(),
            captain_dialogue: Vec::new(),
            status: RunStatus::Planning,
            final_answer: None,
            error: None,
        }
    }

    fn say(&mut self, sender: &str, role: ChatRole, content: impl Into<String>) {
        let turn = self.captain_dialogue.len();
        self.captain_dialogue.push(ChatMessage {
            sender: sender.into(),
            role,
            content: content.into(),
            turn,
        });
    }

    fn fail(&mut self, error: CaptainError) {
        tracing::warn!(task = %self.task.id, %error, "run failed");
        self.status = RunStatus::Failed;
        self.error = Some(error.to_string());
    }

    pub fn verification_cycles(&self, group: &str) -> usize {
        self.cycle_log
            .iter()
            .filter(|c| c.verification && c.request.group_name == group)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub retrieval: RetrievalConfig,
    pub sandbox: SandboxConfig,
    pub max_captain_turns: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            sandbox: SandboxConfig::default(),
            max_captain_turns: 30,
        }
    }
}

/// Everything a run borrows from its caller.
pub struct Engine<'a> {
    pub gateway: &'a Gateway,
    pub library: &'a mut AgentLibrary,
    pub tools: &'a ToolRegistry,
    pub config: &'a RunConfig,
}

/// Opens the shared session on first use.
struct LazySession<'a> {
    workdir: &'a std::path::Path,
    config: &'a SandboxConfig,
    session: Option<Session>,
}

impl LazySession<'_> {
    fn get(&mut self) -> Result<&mut Session, SandboxError> {
        if self.session.is_none() {
            self.session = Some(open_session(self.workdir, self.config)?);
        }
        Ok(self.session.as_mut().expect("opened"))
    }
}

fn normalized(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn with_prior_results(execution_task: &str, prior: &ReflectionReport) -> String {
    if normalized(execution_task).contains(&normalized(&prior.results)) {
        return execution_task.to_string();
    }
    format!(
        "{execution_task}\n\n## Results (including code blocks) and reason from the last response\n{}\n\nReason: {}",
        prior.results.trim(),
        prior.reason.trim()
    )
}

fn malformed_reply(reason: &str, max_agent_number: usize) -> String {
    format!(
        "seek_experts_help was not called: {reason}. Write exactly one call with a group_name, a building_task list of 2 to {max_agent_number} roles (including a verifier) and an execution_task."
    )
}

fn captain_system(config: &RunConfig) -> Result<String, RenderError> {
    let max = config.retrieval.max_agent_number.to_string();
    Ok(format!(
        "{}\n\n{}",
        render(PromptAsset::CaptainSystem, &[("max_agent_number", &max)])?,
        PromptAsset::SeekExpertsHelpFormat.template()
    ))
}

/// Runs the adaptive loop for one task. Failures are recorded in the
/// returned state together with everything produced before them.
pub fn run_task(task: &TaskSpec, engine: &mut Engine<'_>) -> RunState {
    let mut state = RunState::new(task, "adaptive");
    let mut sandbox = LazySession {
        workdir: &task.workdir,
        config: &engine.config.sandbox,
        session: None,
    };
    if let Err(e) = captain_loop(&mut state, engine, &mut sandbox) {
        state.fail(e);
    }
    state
}

fn captain_loop(
    state: &mut RunState,
    engine: &mut Engine<'_>,
    sandbox: &mut LazySession<'_>,
) -> Result<(), CaptainError> {
    let config = engine.config;
    let max_agents = config.retrieval.max_agent_number;
    let mut messages = vec![
        Message::system(captain_system(config)?),
        Message::user(state.task.instruction.clone()),
    ];
    state.say(USER_PROXY, ChatRole::User, state.task.instruction.clone());
    let mut policy = DoubleCheckPolicy::new(config.retrieval.max_double_checks);
    let mut pending: Option<String> = None;
    let mut groups: HashSet<String> = HashSet::new();

    for _ in 0..config.max_captain_turns {
        let reply = engine.gateway.complete(tags::CAPTAIN, messages.clone())?;
        let reply = if reply.trim().is_empty() { "(no reply)".to_string() } else { reply };
        messages.push(Message::assistant(reply.clone()));
        state.say(CAPTAIN, ChatRole::Assistant, reply.clone());
        if state.status == RunStatus::Planning {
            state.status = RunStatus::Cycling;
        }

        let response = match parse_captain_turn(&reply, max_agents) {
            CaptainTurn::Terminate => {
                state.final_answer = Some(final_answer(state));
                state.status = RunStatus::Done;
                return Ok(());
            }
            CaptainTurn::Plain => PromptAsset::ProxyDefaultReply.template().to_string(),
            CaptainTurn::MalformedTeamRequest(reason) => malformed_reply(&reason, max_agents),
            CaptainTurn::CodeBlocks(blocks) => execute_blocks(sandbox.get()?, &blocks)?,
            CaptainTurn::SeekExpertsHelp(seek) => {
                let group_name = seek
                    .group_name
                    .clone()
                    .or_else(|| pending.clone())
                    .unwrap_or_else(|| format!("group_{}", groups.len() + 1));
                groups.insert(group_name.clone());
                let verification = pending.as_deref() == Some(group_name.as_str());
                let execution_task = match (verification, last_report(state, &group_name)) {
                    (true, Some(prior)) => with_prior_results(&seek.execution_task, prior),
                    _ => seek.execution_task.clone(),
                };
                let request = TeamRequest {
                    group_name: group_name.clone(),
                    building_task: seek.building_task.clone(),
                    execution_task,
                };
                if verification {
                    pending = None;
                    state.status = RunStatus::Verifying;
                }
                let report = run_cycle(state, engine, sandbox, request, verification)?;
                state.status = RunStatus::Cycling;
                let reason = policy.observe(&group_name, &report);
                state.cycle_log.last_mut().expect("cycle recorded").double_check_reason = reason.clone();
                match reason {
                    Some(reason) => {
                        pending = Some(group_name.clone());
                        let notice = render(
                            PromptAsset::VerificationNotice,
                            &[("group_name", &group_name), ("reason", &reason)],
                        )?;
                        format!("{notice}\n\n{}", report.to_markdown())
                    }
                    None => report.to_markdown(),
                }
            }
        };
        messages.push(Message::user(response.clone()));
        state.say(USER_PROXY, ChatRole::ToolResult, response);
    }
    Err(CaptainError::CaptainExhausted(config.max_captain_turns))
}

fn last_report<'s>(state: &'s RunState, group: &str) -> Option<&'s ReflectionReport> {
    state
        .cycle_log
        .iter()
        .rev()
        .filter(|c| c.request.group_name == group)
        .find_map(|c| c.report.as_ref())
}

/// build_team, group chat and reflection for one request. The cycle is
/// logged before each step so a failure keeps what was produced.
fn run_cycle(
    state: &mut RunState,
    engine: &mut Engine<'_>,
    sandbox: &mut LazySession<'_>,
    request: TeamRequest,
    verification: bool,
) -> Result<ReflectionReport, CaptainError> {
    tracing::info!(group = %request.group_name, verification, "seek_experts_help");
    state.cycle_log.push(CycleRecord {
        request: request.clone(),
        verification,
        roster: None,
        transcript: None,
        report: None,
        double_check_reason: None,
    });
    let roster = build_team(
        engine.gateway,
        engine.library,
        engine.tools,
        &request,
        &engine.config.retrieval,
    )?;
    let cycle = state.cycle_log.last_mut().expect("cycle recorded");
    cycle.roster = Some(roster.clone());
    let session = sandbox.get()?;
    let transcript = match run_group_chat(
        engine.gateway,
        session,
        &roster,
        &request.execution_task,
        engine.config.retrieval.max_nested_rounds,
    ) {
        Ok(t) => t,
        Err(failure) => {
            cycle.transcript = Some(failure.partial);
            return Err(failure.error.into());
        }
    };
    cycle.transcript = Some(transcript.clone());
    let report = reflect(engine.gateway, &transcript)?;
    cycle.report = Some(report.clone());
    Ok(report)
}

/// The answer carried by the Captain's terminating turn, or by its last
/// substantive message when the terminating turn is the bare token.
fn final_answer(state: &RunState) -> String {
    let captain: Vec<&str> = state
        .captain_dialogue
        .iter()
        .filter(|m| m.sender == CAPTAIN)
        .map(|m| m.content.as_str())
        .collect();
    let Some((last, earlier)) = captain.split_last() else {
        return String::new();
    };
    if !strip_terminate(last).is_empty() {
        return answer_from(last);
    }
    earlier
        .iter()
        .rev()
        .find(|m| matches!(parse_captain_turn(m, usize::MAX), CaptainTurn::Plain))
        .map(|m| answer_from(m))
        .or_else(|| {
            state
                .cycle_log
                .iter()
                .rev()
                .find_map(|c| c.report.as_ref())
                .map(|r| answer_from(&r.results))
        })
        .unwrap_or_default()
}

/// One team built from the task at the start, one group chat for the whole
/// task. The answer is the last expert message.
pub fn run_static(task: &TaskSpec, engine: &mut Engine<'_>) -> RunState {
    let mut state = RunState::new(task, "static");
    let mut sandbox = LazySession {
        workdir: &task.workdir,
        config: &engine.config.sandbox,
        session: None,
    };
    if let Err(e) = static_run(&mut state, engine, &mut sandbox) {
        state.fail(e);
    }
    state
}

fn static_run(
    state: &mut RunState,
    engine: &mut Engine<'_>,
    sandbox: &mut LazySession<'_>,
) -> Result<(), CaptainError> {
    let config = engine.config;
    let prompt = render(
        PromptAsset::StaticBuilder,
        &[
            ("max_agent_number", &config.retrieval.max_agent_number.to_string()),
            ("task", &state.task.instruction),
        ],
    )?;
    let building_task = engine
        .gateway
        .complete(tags::STATIC_BUILDER, vec![Message::user(prompt)])?;
    let request = TeamRequest {
        group_name: "static_team".into(),
        building_task,
        execution_task: state.task.instruction.clone(),
    };
    state.status = RunStatus::Cycling;
    state.cycle_log.push(CycleRecord {
        request: request.clone(),
        verification: false,
        roster: None,
        transcript: None,
        report: None,
        double_check_reason: None,
    });
    let roster = build_team(
        engine.gateway,
        engine.library,
        engine.tools,
        &request,
        &config.retrieval,
    )?;
    let cycle = state.cycle_log.last_mut().expect("cycle recorded");
    cycle.roster = Some(roster.clone());
    let transcript = match run_group_chat(
        engine.gateway,
        sandbox.get()?,
        &roster,
        &request.execution_task,
        config.retrieval.max_nested_rounds,
    ) {
        Ok(t) => t,
        Err(failure) => {
            cycle.transcript = Some(failure.partial);
            return Err(failure.error.into());
        }
    };
    let answer = transcript
        .messages
        .iter()
        .rev()
        .filter(|m| m.role == ChatRole::Assistant)
        .map(|m| strip_terminate(&m.content))
        .find(|c| !c.is_empty())
        .map(|c| answer_from(&c))
        .unwrap_or_default();
    let terminated = transcript.terminated_by == crate::model::TerminatedBy::TerminateToken;
    cycle.transcript = Some(transcript);
    state.final_answer = Some(answer);
    if terminated {
        state.status = RunStatus::Done;
        Ok(())
    } else {
        Err(CaptainError::CaptainExhausted(config.retrieval.max_nested_rounds))
    }
}
