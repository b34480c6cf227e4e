//! Nested expert group chat: manager-picked speakers, code execution by the
//! user proxy, termination on the terminate token or the round bound.

use thiserror::Error;

use crate::llm::{render, tags, Gateway, LlmError, Message, PromptAsset, RenderError};
use crate::model::{ChatMessage, ChatRole, NestedChatTranscript, TerminatedBy, USER_PROXY};
use crate::sandbox::{language_kind, open_session, SandboxError, Session};
use crate::team::TeamRoster;

pub const TERMINATE: &str = "TERMINATE";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("code block opened with ``` is never closed")]
    UnterminatedFence,
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// A chat that stopped on an error, with everything said up to that point.
#[derive(Debug, Error)]
#[error("group chat {:?} failed: {error}", partial.group_name)]
pub struct ChatFailure {
    #[source]
    pub error: ChatError,
    pub partial: NestedChatTranscript,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub lang: String,
    pub code: String,
}

/// Fenced blocks in order. Fences open at the start of a line with three or
/// more backticks and close with a line of at least as many.
pub fn extract_code_blocks(message: &str) -> Result<Vec<CodeBlock>, ChatError> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, String, Vec<&str>)> = None;
    for line in message.lines() {
        let trimmed = line.trim_start();
        let ticks = trimmed.chars().take_while(|c| *c == '`').count();
        match &mut open {
            None if ticks >= 3 => {
                let info = trimmed[ticks..].trim();
                let lang = info.split_whitespace().next().unwrap_or("unknown");
                open = Some((ticks, lang.to_string(), Vec::new()));
            }
            None => {}
            Some((fence, _, _)) if ticks >= *fence && trimmed[ticks..].trim().is_empty() => {
                let (_, lang, lines) = open.take().expect("open fence");
                blocks.push(CodeBlock {
                    lang,
                    code: lines.join("\n"),
                });
            }
            Some((_, _, lines)) => lines.push(line),
        }
    }
    match open {
        Some(_) => Err(ChatError::UnterminatedFence),
        None => Ok(blocks),
    }
}

/// True when the message is the terminate token or ends with it as a word.
pub fn is_terminate(message: &str) -> bool {
    let trimmed = message.trim_end_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | '!' | '"' | '\'' | '*' | '`')
    });
    match trimmed.strip_suffix(TERMINATE) {
        Some(rest) => !rest
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric() || c == '_'),
        None => false,
    }
}

/// The message with a trailing terminate token removed.
pub fn strip_terminate(message: &str) -> String {
    if !is_terminate(message) {
        return message.trim().to_string();
    }
    let end = message.rfind(TERMINATE).expect("token present");
    message[..end].trim().to_string()
}

/// Executes `blocks` in order in the shared session and formats the combined
/// result the user proxy sends back. A crashed interpreter is replaced by a
/// fresh one and the crash is reported in the result.
pub fn execute_blocks(session: &mut Session, blocks: &[CodeBlock]) -> Result<String, ChatError> {
    let mut exit = 0;
    let mut parts = Vec::with_capacity(blocks.len());
    for (i, block) in blocks.iter().enumerate() {
        let label = if blocks.len() > 1 {
            format!("Block {} ({}):\n", i + 1, block.lang)
        } else {
            String::new()
        };
        if language_kind(&block.lang).is_none() {
            parts.push(format!(
                "{label}Not executed: only python and shell code blocks run in this environment. The block was:\n{}",
                block.code
            ));
            continue;
        }
        let outcome = match session.execute_block(&block.lang, &block.code) {
            Some(Ok(outcome)) => outcome,
            Some(Err(SandboxError::SessionDead(reason))) => {
                let fresh = open_session(session.workdir(), &session.config().clone())
                    .map_err(|e| ChatError::SandboxUnavailable(e.to_string()))?;
                *session = fresh;
                exit = if exit == 0 { 1 } else { exit };
                parts.push(format!(
                    "{label}The execution environment crashed and was restarted; all variables were lost. ({reason})"
                ));
                continue;
            }
            Some(Err(e)) => return Err(ChatError::SandboxUnavailable(e.to_string())),
            None => unreachable!("language checked above"),
        };
        if exit == 0 && outcome.exit != 0 {
            exit = outcome.exit;
        }
        let mut text = format!("{label}{}{}", outcome.stdout, outcome.stderr);
        if outcome.timed_out {
            text.push_str("\nTimeout: the block was interrupted.");
        }
        parts.push(text);
    }
    let status = if exit == 0 {
        "execution succeeded"
    } else {
        "execution failed"
    };
    Ok(format!(
        "exitcode: {exit} ({status})\nCode output:\n{}",
        parts.join("\n")
    ))
}

pub(crate) fn render_history(execution_task: &str, history: &[ChatMessage]) -> String {
    let mut out = format!("{USER_PROXY}:\n{execution_task}");
    for m in history {
        out.push_str(&format!("\n\n{}:\n{}", m.sender, m.content));
    }
    out
}

fn clean_speaker(reply: &str) -> &str {
    reply
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.' | '[' | ']'))
        .trim()
}

/// The next speaker. One re-ask when the manager names a non-member, then
/// round-robin after `previous`.
pub fn pick_speaker(
    gateway: &Gateway,
    roster: &TeamRoster,
    execution_task: &str,
    history: &[ChatMessage],
    previous: Option<&str>,
) -> Result<String, ChatError> {
    let names = roster.names();
    if names.len() == 1 {
        return Ok(names[0].clone());
    }
    let roles = roster
        .members
        .iter()
        .map(|m| format!("{}: {}", m.profile.name, m.profile.description))
        .collect::<Vec<_>>()
        .join("\n");
    let agent_names = names.join(", ");
    let system = render(
        PromptAsset::GroupChatManager,
        &[("roles", &roles), ("agent_names", &agent_names)],
    )?;
    let mut messages = vec![
        Message::system(system),
        Message::user(render_history(execution_task, history)),
    ];
    for attempt in 0..2 {
        let reply = gateway.complete(tags::MANAGER, messages.clone())?;
        let name = clean_speaker(&reply);
        if let Some(hit) = names.iter().find(|n| n.as_str() == name) {
            return Ok(hit.clone());
        }
        tracing::debug!(reply = %reply, attempt, "manager named a non-member");
        let retry = render(
            PromptAsset::ManagerRetry,
            &[("reply", name), ("agent_names", &agent_names)],
        )?;
        messages.push(Message::assistant(reply));
        messages.push(Message::user(retry));
    }
    let next = previous
        .and_then(|p| names.iter().position(|n| n == p))
        .map(|i| (i + 1) % names.len())
        .unwrap_or(0);
    Ok(names[next].clone())
}

/// Messages as seen by `speaker`: its own turns are assistant turns, all
/// other turns are user turns prefixed with the sender.
fn expert_view(system: &str, speaker: &str, execution_task: &str, history: &[ChatMessage]) -> Vec<Message> {
    let mut out = vec![
        Message::system(system),
        Message::user(format!("{USER_PROXY}:\n{execution_task}")),
    ];
    for m in history {
        if m.sender == speaker {
            out.push(Message::assistant(m.content.clone()));
        } else {
            out.push(Message::user(format!("{}:\n{}", m.sender, m.content)));
        }
    }
    out
}

/// Runs one group conversation on the shared session.
#[allow(clippy::result_large_err)]
pub fn run_group_chat(
    gateway: &Gateway,
    session: &mut Session,
    roster: &TeamRoster,
    execution_task: &str,
    max_rounds: usize,
) -> Result<NestedChatTranscript, ChatFailure> {
    let mut transcript = NestedChatTranscript {
        group_name: roster.group_name.clone(),
        participants: roster.names(),
        execution_task: execution_task.to_string(),
        messages: Vec::new(),
        terminated_by: TerminatedBy::MaxRounds,
    };
    match chat_loop(gateway, session, roster, &mut transcript, max_rounds) {
        Ok(by) => {
            transcript.terminated_by = by;
            Ok(transcript)
        }
        Err(error) => {
            transcript.terminated_by = TerminatedBy::Error;
            Err(ChatFailure {
                error,
                partial: transcript,
            })
        }
    }
}

fn chat_loop(
    gateway: &Gateway,
    session: &mut Session,
    roster: &TeamRoster,
    transcript: &mut NestedChatTranscript,
    max_rounds: usize,
) -> Result<TerminatedBy, ChatError> {
    let task = transcript.execution_task.clone();
    let mut previous: Option<String> = None;
    for _ in 0..max_rounds {
        let speaker = pick_speaker(gateway, roster, &task, &transcript.messages, previous.as_deref())?;
        let member = roster.get(&speaker).expect("speaker is a member");
        let view = expert_view(&member.profile.system_message, &speaker, &task, &transcript.messages);
        let mut reply = gateway.complete(&tags::expert(&speaker), view)?;
        if reply.trim().is_empty() {
            reply = "(no reply)".into();
        }
        let turn = transcript.messages.len();
        transcript.messages.push(ChatMessage {
            sender: speaker.clone(),
            role: ChatRole::Assistant,
            content: reply.clone(),
            turn,
        });
        previous = Some(speaker);
        if is_terminate(&reply) {
            return Ok(TerminatedBy::TerminateToken);
        }
        let blocks = extract_code_blocks(&reply).unwrap_or_else(|e| {
            tracing::debug!(error = %e, "treating message as prose");
            Vec::new()
        });
        if !blocks.is_empty() {
            let result = execute_blocks(session, &blocks)?;
            let turn = transcript.messages.len();
            transcript.messages.push(ChatMessage {
                sender: USER_PROXY.into(),
                role: ChatRole::ToolResult,
                content: result,
                turn,
            });
        }
    }
    Ok(TerminatedBy::MaxRounds)
}
