//! Run output directory.
//!
//! ```text
//! task.json               task id, instruction and mode
//! library_before.json     agent library as it was when the run started
//! captain_dialogue.jsonl  Captain and user-proxy turns
//! cycles/NN_<group>/      request.json, roster.json, transcript.jsonl, report.md
//! final_answer.txt        when the run produced an answer
//! summary.json            machine-readable outcome
//! script.jsonl            every LLM response, for replay
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::captain::{RunState, RunStatus};
use crate::model::{ChatMessage, TerminatedBy};
use crate::team::Origin;

pub const TASK_FILE: &str = "task.json";
pub const LIBRARY_SNAPSHOT: &str = "library_before.json";
pub const DIALOGUE_FILE: &str = "captain_dialogue.jsonl";
pub const CYCLES_DIR: &str = "cycles";
pub const ANSWER_FILE: &str = "final_answer.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SCRIPT_FILE: &str = "script.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFile {
    pub id: String,
    pub instruction: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub name: String,
    pub origin: Origin,
    pub tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub dir: String,
    pub group_name: String,
    pub verification: bool,
    pub members: Vec<MemberSummary>,
    pub messages: usize,
    pub terminated_by: Option<TerminatedBy>,
    pub need_double_check: Option<String>,
    pub double_check_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task_id: String,
    pub mode: String,
    pub status: RunStatus,
    pub final_answer: Option<String>,
    pub error: Option<String>,
    pub captain_turns: usize,
    pub cycles: Vec<CycleSummary>,
}

fn dir_safe(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "group".into()
    } else {
        cleaned
    }
}

pub fn cycle_dir_name(index: usize, group: &str) -> String {
    format!("{:02}_{}", index + 1, dir_safe(group))
}

fn jsonl(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .map(|m| serde_json::to_string(m).expect("message serializes") + "\n")
        .collect()
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

pub fn summarize(state: &RunState) -> RunSummary {
    RunSummary {
        task_id: state.task.id.clone(),
        mode: state.mode.clone(),
        status: state.status,
        final_answer: state.final_answer.clone(),
        error: state.error.clone(),
        captain_turns: state
            .captain_dialogue
            .iter()
            .filter(|m| m.sender == crate::captain::CAPTAIN)
            .count(),
        cycles: state
            .cycle_log
            .iter()
            .enumerate()
            .map(|(i, c)| CycleSummary {
                dir: cycle_dir_name(i, &c.request.group_name),
                group_name: c.request.group_name.clone(),
                verification: c.verification,
                members: c
                    .roster
                    .iter()
                    .flat_map(|r| &r.members)
                    .map(|m| MemberSummary {
                        name: m.profile.name.clone(),
                        origin: m.origin,
                        tools: m.tools.iter().map(|t| t.name.clone()).collect(),
                    })
                    .collect(),
                messages: c.transcript.as_ref().map_or(0, |t| t.messages.len()),
                terminated_by: c.transcript.as_ref().map(|t| t.terminated_by),
                need_double_check: c.report.as_ref().map(|r| r.need_double_check.to_string()),
                double_check_reason: c.double_check_reason.clone(),
            })
            .collect(),
    }
}

/// Writes everything except the library snapshot and the script, which the
/// caller owns.
pub fn write_run_dir(dir: &Path, state: &RunState) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let task = TaskFile {
        id: state.task.id.clone(),
        instruction: state.task.instruction.clone(),
        mode: state.mode.clone(),
    };
    fs::write(dir.join(TASK_FILE), pretty(&task))?;
    fs::write(dir.join(DIALOGUE_FILE), jsonl(&state.captain_dialogue))?;
    let cycles = dir.join(CYCLES_DIR);
    if cycles.exists() {
        fs::remove_dir_all(&cycles)?;
    }
    for (i, c) in state.cycle_log.iter().enumerate() {
        let cdir = cycles.join(cycle_dir_name(i, &c.request.group_name));
        fs::create_dir_all(&cdir)?;
        fs::write(cdir.join("request.json"), pretty(&c.request))?;
        if let Some(roster) = &c.roster {
            fs::write(cdir.join("roster.json"), pretty(roster))?;
        }
        if let Some(t) = &c.transcript {
            fs::write(cdir.join("transcript.jsonl"), t.to_jsonl())?;
        }
        if let Some(r) = &c.report {
            fs::write(cdir.join("report.md"), r.to_markdown())?;
        }
    }
    let answer = dir.join(ANSWER_FILE);
    match &state.final_answer {
        Some(a) => fs::write(&answer, format!("{a}\n"))?,
        None if answer.exists() => fs::remove_file(&answer)?,
        None => {}
    }
    fs::write(dir.join(SUMMARY_FILE), pretty(&summarize(state)))?;
    Ok(())
}

pub fn read_task_file(dir: &Path) -> io::Result<TaskFile> {
    let text = fs::read_to_string(dir.join(TASK_FILE))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Transcript files of a run directory, relative paths in sorted order.
pub fn transcript_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = vec![PathBuf::from(DIALOGUE_FILE)];
    let cycles = dir.join(CYCLES_DIR);
    if cycles.is_dir() {
        let mut names: Vec<_> = fs::read_dir(&cycles)?
            .map(|e| e.map(|e| e.file_name()))
            .collect::<Result<_, _>>()?;
        names.sort();
        for n in names {
            for f in ["request.json", "roster.json", "transcript.jsonl", "report.md"] {
                let rel = Path::new(CYCLES_DIR).join(&n).join(f);
                if dir.join(&rel).exists() {
                    out.push(rel);
                }
            }
        }
    }
    for f in [ANSWER_FILE, SUMMARY_FILE] {
        if dir.join(f).exists() {
            out.push(PathBuf::from(f));
        }
    }
    Ok(out)
}

/// Files whose bytes differ between two run directories.
pub fn diff_run_dirs(a: &Path, b: &Path) -> io::Result<Vec<String>> {
    let mut files = transcript_files(a)?;
    for f in transcript_files(b)? {
        if !files.contains(&f) {
            files.push(f);
        }
    }
    let mut differences = Vec::new();
    for f in files {
        let left = fs::read(a.join(&f)).ok();
        let right = fs::read(b.join(&f)).ok();
        if left != right {
            differences.push(f.display().to_string());
        }
    }
    Ok(differences)
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}\n")).collect()
}

/// Human-readable rendering of a run directory.
pub fn inspect(dir: &Path) -> io::Result<String> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let task = read_task_file(dir)?;
    let mut out = format!(
        "task {} ({} mode): {:?}\n{}",
        task.id,
        summary.mode,
        summary.status,
        indent(&task.instruction)
    );
    if let Some(e) = &summary.error {
        out.push_str(&format!("error: {e}\n"));
    }
    out.push_str(&format!("captain turns: {}\n", summary.captain_turns));
    for c in &summary.cycles {
        out.push_str(&format!(
            "\ncycle {} group {:?}{}\n",
            c.dir,
            c.group_name,
            if c.verification { " (verification)" } else { "" }
        ));
        for m in &c.members {
            let origin = match m.origin {
                Origin::Selected => "selected",
                Origin::Generated => "generated",
            };
            out.push_str(&format!("  {} [{origin}]", m.name));
            if !m.tools.is_empty() {
                out.push_str(&format!(" tools: {}", m.tools.join(", ")));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "  {} messages, ended by {}\n",
            c.messages,
            c.terminated_by
                .map(|t| format!("{t:?}"))
                .unwrap_or_else(|| "nothing (incomplete)".into())
        ));
        if let Some(flag) = &c.need_double_check {
            out.push_str(&format!("  need double-check: {flag}\n"));
        }
        if let Some(reason) = &c.double_check_reason {
            out.push_str(&format!("  verification requested: {reason}\n"));
        }
    }
    match &summary.final_answer {
        Some(a) => out.push_str(&format!("\nfinal answer:\n{}", indent(a))),
        None => out.push_str("\nno final answer\n"),
    }
    Ok(out)
}
