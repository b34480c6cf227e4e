#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use captain_core::captain::{run_task, Engine, RunConfig, RunState};
use captain_core::config::Config;
use captain_core::embedding::{Embedder, HashEmbedder};
use captain_core::library::AgentLibrary;
use captain_core::llm::{Gateway, ModelTable, ScriptedProvider};
use captain_core::model::{AgentProfile, Provenance, TaskSpec};
use captain_core::team::compose_system_message;
use captain_core::tools::ToolRegistry;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn embedder() -> Arc<dyn Embedder> {
    Arc::new(HashEmbedder::new(64, 7))
}

pub fn profile(name: &str, description: &str) -> AgentProfile {
    AgentProfile {
        description: description.into(),
        tags: vec!["test".into()],
        name: name.into(),
        system_message: compose_system_message(name, &format!("{name} is a test expert."), "- answer briefly"),
        provenance: Provenance::Library,
    }
}

/// Config for a scratch directory holding a copy of the fixture library.
pub fn scratch_config(dir: &Path, extra: &str) -> Config {
    fs::copy(fixtures().join("library.json"), dir.join("agents.json")).unwrap();
    let path = dir.join("captain.toml");
    fs::write(
        &path,
        format!("provider = \"scripted\"\nagent_library = \"agents.json\"\nk1 = 4\n{extra}"),
    )
    .unwrap();
    Config::load(&path).unwrap()
}

/// Runs the adaptive loop against an in-memory library.
pub fn run_scripted(
    provider: ScriptedProvider,
    library: &mut AgentLibrary,
    config: &RunConfig,
    workdir: &Path,
) -> (RunState, Arc<ScriptedProvider>) {
    let provider = Arc::new(provider);
    let gateway = Gateway::new(provider.clone(), ModelTable::default());
    let tools = ToolRegistry::empty(library.embedder().clone());
    let task = TaskSpec::new("t", "Find the value.", workdir).unwrap();
    let mut engine = Engine {
        gateway: &gateway,
        library,
        tools: &tools,
        config,
    };
    (run_task(&task, &mut engine), provider)
}

/// A reflection report with the given results and flag.
pub fn report(results: &str, flag: &str) -> String {
    format!(
        "## Task\nFind the value.\n\n## Results\n{results}\n\n## Reason for the results\nComputed by the group.\n\n## Contradictions or issues in the conversation\nNone.\n\n### Need to double-check?\n{flag}\n\n## Additional information (file path, code blocks, url, etc.)\nNone."
    )
}

/// A seek_experts_help call with two roles.
pub fn seek(group: &str, task: &str) -> String {
    format!(
        "Plan: ask the group.\n\n# seek_experts_help\n## group_name\n{group}\n## building_task\n- A solver who computes the value.\n- A checker who verifies the value.\n## execution_task\n## Task description\n{task}\n"
    )
}
