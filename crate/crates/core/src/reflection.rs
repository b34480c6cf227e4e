//! Reflection on a finished group chat and the double-check trigger.

use std::collections::HashMap;

use thiserror::Error;

use crate::chat::render_history;
use crate::llm::{render, tags, Gateway, LlmError, Message, PromptAsset, RenderError};
use crate::model::{parse_reflection, DoubleCheckFlag, NestedChatTranscript, ReflectionReport};

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error("transcript has no messages to reflect on")]
    EmptyTranscript,
    #[error("reflection does not follow the report format after a retry: {0}")]
    ReflectionMalformed(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Summarizes `transcript` into a report. One re-ask with a format reminder
/// when the first reply does not parse.
pub fn reflect(gateway: &Gateway, transcript: &NestedChatTranscript) -> Result<ReflectionReport, ReflectionError> {
    if transcript.messages.is_empty() {
        return Err(ReflectionError::EmptyTranscript);
    }
    let history = render_history(&transcript.execution_task, &transcript.messages);
    let prompt = render(PromptAsset::Reflector, &[("chat_history", &history)])?;
    let mut messages = vec![Message::user(prompt)];
    let first = gateway.complete(tags::REFLECTOR, messages.clone())?;
    if let Ok(report) = parse_reflection(&first) {
        return Ok(report);
    }
    messages.push(Message::assistant(first));
    messages.push(Message::user(PromptAsset::ReflectionRetry.template()));
    let second = gateway.complete(tags::REFLECTOR, messages)?;
    parse_reflection(&second).map_err(|e| ReflectionError::ReflectionMalformed(format!("{e}: {second}")))
}

fn normalized(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether a verification cycle is due, and why. Fires on a "Yes" flag or
/// when the results differ from the prior report of the same group, unless
/// `triggered` checks already reached `cap`.
pub fn needs_double_check(
    report: &ReflectionReport,
    prior: Option<&ReflectionReport>,
    triggered: usize,
    cap: usize,
) -> Option<String> {
    if triggered >= cap {
        return None;
    }
    if report.need_double_check == DoubleCheckFlag::Yes {
        let detail = normalized(&report.contradictions);
        return Some(if detail.is_empty() {
            "the experts' summary asks for a double-check.".to_string()
        } else {
            format!("the experts' summary asks for a double-check. Noted issues: {detail}")
        });
    }
    match prior {
        Some(p) if normalized(&p.results) != normalized(&report.results) => Some(format!(
            "the result differs from the previous result of this group (previously: {}).",
            normalized(&p.results)
        )),
        _ => None,
    }
}

/// Per-group report history and trigger counts for one task run.
#[derive(Debug, Clone, Default)]
pub struct DoubleCheckPolicy {
    cap: usize,
    groups: HashMap<String, (Option<ReflectionReport>, usize)>,
}

impl DoubleCheckPolicy {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            groups: HashMap::new(),
        }
    }

    /// Records `report` for `group` and returns the reason when a
    /// verification cycle must follow.
    pub fn observe(&mut self, group: &str, report: &ReflectionReport) -> Option<String> {
        let (prior, triggered) = self.groups.entry(group.to_string()).or_default();
        let decision = needs_double_check(report, prior.as_ref(), *triggered, self.cap);
        if decision.is_some() {
            *triggered += 1;
        }
        *prior = Some(report.clone());
        decision
    }

    pub fn triggered(&self, group: &str) -> usize {
        self.groups.get(group).map_or(0, |g| g.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ModelTable, ScriptedProvider};
    use crate::model::{ChatMessage, ChatRole, TerminatedBy};
    use std::sync::Arc;

    fn report(results: &str, flag: DoubleCheckFlag) -> ReflectionReport {
        ReflectionReport {
            task: "t".into(),
            results: results.into(),
            reason: "r".into(),
            contradictions: "none".into(),
            need_double_check: flag,
            additional_info: String::new(),
        }
    }

    fn transcript() -> NestedChatTranscript {
        NestedChatTranscript {
            group_name: "g".into(),
            participants: vec!["A_Expert".into()],
            execution_task: "compute".into(),
            messages: vec![ChatMessage {
                sender: "A_Expert".into(),
                role: ChatRole::Assistant,
                content: "It is 17. TERMINATE".into(),
                turn: 0,
            }],
            terminated_by: TerminatedBy::TerminateToken,
        }
    }

    fn gateway(p: ScriptedProvider) -> Gateway {
        Gateway::new(Arc::new(p), ModelTable::default())
    }

    #[test]
    fn reflects_with_flag() {
        for (flag, expected) in [("Yes", DoubleCheckFlag::Yes), ("No", DoubleCheckFlag::No)] {
            let text = report("17", expected).to_markdown().replace(&format!("\n{expected}\n"), &format!("\n{flag}\n"));
            let gw = gateway(ScriptedProvider::default().with(tags::REFLECTOR, text));
            assert_eq!(reflect(&gw, &transcript()).unwrap().need_double_check, expected);
        }
    }

    #[test]
    fn malformed_twice() {
        let gw = gateway(
            ScriptedProvider::default()
                .with(tags::REFLECTOR, "It went fine.")
                .with(tags::REFLECTOR, "Really, it went fine."),
        );
        assert!(matches!(
            reflect(&gw, &transcript()),
            Err(ReflectionError::ReflectionMalformed(_))
        ));
    }

    #[test]
    fn retry_recovers() {
        let gw = gateway(
            ScriptedProvider::default()
                .with(tags::REFLECTOR, "prose")
                .with(tags::REFLECTOR, report("17", DoubleCheckFlag::No).to_markdown()),
        );
        assert_eq!(reflect(&gw, &transcript()).unwrap().results, "17");
    }

    #[test]
    fn trigger_rule() {
        let yes = report("17", DoubleCheckFlag::Yes);
        let no = report("17", DoubleCheckFlag::No);
        let other = report("18", DoubleCheckFlag::No);
        assert!(needs_double_check(&yes, None, 0, 2).is_some());
        assert!(needs_double_check(&no, Some(&no), 0, 2).is_none());
        assert!(needs_double_check(&no, Some(&report(" 17\n", DoubleCheckFlag::No)), 0, 2).is_none());
        assert!(needs_double_check(&other, Some(&no), 0, 2).is_some());
        assert!(needs_double_check(&yes, None, 2, 2).is_none());
        assert!(needs_double_check(&yes, None, 0, 0).is_none());
    }

    #[test]
    fn policy_caps_per_group() {
        let yes = report("17", DoubleCheckFlag::Yes);
        let mut policy = DoubleCheckPolicy::new(2);
        assert!(policy.observe("a", &yes).is_some());
        assert!(policy.observe("a", &yes).is_some());
        assert!(policy.observe("a", &yes).is_none());
        assert!(policy.observe("b", &yes).is_some());
        assert_eq!(policy.triggered("a"), 2);
    }
}
