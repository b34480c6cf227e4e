use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoubleCheckFlag {
    Yes,
    No,
}

impl fmt::Display for DoubleCheckFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoubleCheckFlag::Yes => "Yes",
            DoubleCheckFlag::No => "No",
        })
    }
}

/// The six-field summary of a finished group conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub task: String,
    pub results: String,
    pub reason: String,
    pub contradictions: String,
    pub need_double_check: DoubleCheckFlag,
    pub additional_info: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReflectionParseError {
    #[error("reflection lacks the {0:?} section")]
    MissingSection(String),
    #[error("double-check answer {0:?} is neither yes nor no")]
    AmbiguousFlag(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Task,
    Results,
    Reason,
    Contradictions,
    Flag,
    Additional,
}

const SECTIONS: [(Section, &str); 6] = [
    (Section::Task, "Task"),
    (Section::Results, "Results"),
    (Section::Reason, "Reason for the results"),
    (Section::Contradictions, "Contradictions or issues in the conversation"),
    (Section::Flag, "Need to double-check?"),
    (Section::Additional, "Additional information (file path, code blocks, url, etc.)"),
];

impl Section {
    fn slot(self) -> usize {
        self as usize
    }

    fn title(self) -> &'static str {
        SECTIONS[self.slot()].1
    }
}

/// Maps a markdown header line onto one of the six report sections.
fn classify_header(line: &str) -> Option<Section> {
    let trimmed = line.trim();
    if !trimmed.starts_with('#') {
        return None;
    }
    let text = trimmed.trim_start_matches('#');
    let norm = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let norm = norm.trim_end_matches(':').trim_end();
    match norm {
        "task" => Some(Section::Task),
        "results" | "result" => Some(Section::Results),
        n if n.starts_with("reason for the result") => Some(Section::Reason),
        n if n.starts_with("contradictions") => Some(Section::Contradictions),
        n if n.starts_with("need to double-check")
            || n.starts_with("need to double check")
            || n.starts_with("need double-check")
            || n.starts_with("need double check") =>
        {
            Some(Section::Flag)
        }
        n if n.starts_with("additional information") => Some(Section::Additional),
        _ => None,
    }
}

fn parse_flag(body: &str) -> Result<DoubleCheckFlag, ReflectionParseError> {
    let stripped = body
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match stripped.as_str() {
        "yes" => Ok(DoubleCheckFlag::Yes),
        "no" => Ok(DoubleCheckFlag::No),
        _ => Err(ReflectionParseError::AmbiguousFlag(body.trim().to_string())),
    }
}

/// Extracts a [`ReflectionReport`] from reflector output by locating the six
/// markdown section headers. Text before the first header is ignored; a
/// repeated header is kept as body text of the section it appears in.
pub fn parse_reflection(text: &str) -> Result<ReflectionReport, ReflectionParseError> {
    let mut bodies: [Option<Vec<&str>>; 6] = Default::default();
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some(section) = classify_header(line) {
            if bodies[section.slot()].is_none() {
                bodies[section.slot()] = Some(Vec::new());
                current = Some(section.slot());
                continue;
            }
        }
        if let Some(slot) = current {
            bodies[slot].as_mut().expect("open section").push(line);
        }
    }

    let mut fields: Vec<String> = Vec::with_capacity(6);
    for (section, body) in SECTIONS.iter().map(|(s, _)| *s).zip(bodies) {
        let body = body.ok_or_else(|| {
            let name = section.title().trim_end_matches('?').to_string();
            ReflectionParseError::MissingSection(name)
        })?;
        fields.push(body.join("\n").trim().to_string());
    }
    let need_double_check = parse_flag(&fields[Section::Flag.slot()])?;
    let mut it = fields.into_iter();
    let task = it.next().unwrap();
    let results = it.next().unwrap();
    let reason = it.next().unwrap();
    let contradictions = it.next().unwrap();
    let _flag = it.next();
    let additional_info = it.next().unwrap();
    Ok(ReflectionReport {
        task,
        results,
        reason,
        contradictions,
        need_double_check,
        additional_info,
    })
}

impl ReflectionReport {
    /// Renders the report in the reflector's answer format.
    pub fn to_markdown(&self) -> String {
        format!(
            "## {}\n{}\n\n## {}\n{}\n\n## {}\n{}\n\n## {}\n{}\n\n### {}\n{}\n\n## {}\n{}\n",
            Section::Task.title(),
            self.task,
            Section::Results.title(),
            self.results,
            Section::Reason.title(),
            self.reason,
            Section::Contradictions.title(),
            self.contradictions,
            Section::Flag.title(),
            self.need_double_check,
            Section::Additional.title(),
            self.additional_info,
        )
    }
}
