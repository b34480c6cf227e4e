//! Single runs, benchmark batches, library seeding and replay checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captain::{answer_from, extract_boxed, run_static, run_task, Engine, RunState, RunStatus};
use crate::config::{Config, ConfigError, ProviderKind};
use crate::library::{AgentLibrary, LibraryError};
use crate::llm::{render_text, ChatProvider, Gateway, LlmError, PromptAsset, RecordingProvider, RenderError, ScriptedProvider};
use crate::model::TaskSpec;
use crate::rundir::{self, write_run_dir, LIBRARY_SNAPSHOT, SCRIPT_FILE};
use crate::tools::{ToolError, ToolRegistry};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Tools(#[from] ToolError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: io::Error,
    },
    #[error("dataset: {0}")]
    Dataset(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    Static,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Adaptive => "adaptive",
            Mode::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    #[default]
    Exact,
    Boxed,
    Numeric,
}

fn default_tol() -> f64 {
    1e-6
}

/// One benchmark item. The instruction is given directly or rendered from a
/// task template (`math`, `programming`, `data_analysis`, `science`,
/// `world_information`) and its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTask {
    pub id: String,
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    #[serde(default)]
    pub expected: String,
    #[serde(default)]
    pub comparator: Comparator,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl DatasetTask {
    pub fn instruction(&self) -> Result<String, HarnessError> {
        match (&self.instruction, &self.template) {
            (Some(text), None) => Ok(text.clone()),
            (None, Some(name)) => {
                let asset = PromptAsset::from_id(&format!("task_{name}"))
                    .ok_or_else(|| HarnessError::Dataset(format!("unknown task template {name:?}")))?;
                let bindings: Vec<(&str, &str)> =
                    self.fields.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
                Ok(render_text(asset.template(), &bindings)?)
            }
            _ => Err(HarnessError::Dataset(format!(
                "task {:?} needs exactly one of instruction and template",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub tasks: Vec<DatasetTask>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        let dataset: Dataset =
            serde_json::from_str(&text).map_err(|e| HarnessError::Dataset(e.to_string()))?;
        let mut ids = BTreeSet::new();
        for t in &dataset.tasks {
            if !crate::model::is_identifier(&t.id.replace('-', "_")) {
                return Err(HarnessError::Dataset(format!("task id {:?} is not file-name safe", t.id)));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(HarnessError::Dataset(format!("duplicate task id {:?}", t.id)));
            }
        }
        Ok(dataset)
    }
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<String>().to_lowercase()
}

fn first_number(text: &str) -> Option<f64> {
    let cleaned: String = text.chars().filter(|c| !matches!(c, ',' | '$' | '%')).collect();
    let bytes: Vec<char> = cleaned.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let start_ok = bytes[i].is_ascii_digit()
            || ((bytes[i] == '-' || bytes[i] == '.') && bytes.get(i + 1).is_some_and(|c| c.is_ascii_digit()));
        if start_ok {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_digit() || matches!(bytes[j], '.' | 'e' | 'E'))
            {
                j += 1;
            }
            let mut token: String = bytes[i..j].iter().collect();
            while !token.is_empty() {
                if let Ok(v) = token.parse::<f64>() {
                    return Some(v);
                }
                token.pop();
            }
        }
        i += 1;
    }
    None
}

/// Whether `answer` matches `expected` under the comparator. Exact compares
/// trimmed lowercase text; boxed compares the boxed contents ignoring
/// whitespace; numeric compares the first number within `tol`.
pub fn judge(comparator: Comparator, expected: &str, answer: &str, tol: f64) -> bool {
    match comparator {
        Comparator::Exact => expected.trim().to_lowercase() == answer.trim().to_lowercase(),
        Comparator::Boxed => {
            let e = extract_boxed(expected).unwrap_or_else(|| expected.to_string());
            let a = extract_boxed(answer).unwrap_or_else(|| answer.to_string());
            normalize_text(&e) == normalize_text(&a)
        }
        Comparator::Numeric => {
            let a = extract_boxed(answer).unwrap_or_else(|| answer.to_string());
            match (first_number(expected), first_number(&a)) {
                (Some(e), Some(a)) => (a - e).abs() <= tol,
                _ => false,
            }
        }
    }
}

/// Runs one task into `out_dir` and records the LLM session there.
///
/// `library_path` is the agent library the run reads and grows; its state
/// at the start is copied into the run directory so the run can be
/// replayed on its own.
pub fn run_one(
    config: &Config,
    task_id: &str,
    instruction: &str,
    mode: Mode,
    provider: Arc<dyn ChatProvider>,
    library_path: &Path,
    out_dir: &Path,
) -> Result<RunState, HarnessError> {
    let workdir = out_dir.join("workdir");
    fs::create_dir_all(&workdir).map_err(io_err(format!("creating {}", workdir.display())))?;
    let snapshot = match fs::read(library_path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => b"[]\n".to_vec(),
        Err(e) => return Err(io_err(format!("reading {}", library_path.display()))(e)),
    };
    fs::write(out_dir.join(LIBRARY_SNAPSHOT), snapshot).map_err(io_err("writing library snapshot"))?;

    let embedder = config.embedder()?;
    let mut library = AgentLibrary::open(library_path, embedder.clone())?;
    let tools = match &config.tool_manifest {
        Some(manifest) => ToolRegistry::load_manifest(manifest, config.tool_root().as_deref(), embedder)?,
        None => ToolRegistry::empty(embedder),
    };
    let recorder = Arc::new(RecordingProvider::new(provider));
    let gateway = Gateway::new(recorder.clone(), config.model_table());
    let run_config = config.run_config();
    let task = TaskSpec::new(task_id, instruction, &workdir)?;
    let mut engine = Engine {
        gateway: &gateway,
        library: &mut library,
        tools: &tools,
        config: &run_config,
    };
    let state = match mode {
        Mode::Adaptive => run_task(&task, &mut engine),
        Mode::Static => run_static(&task, &mut engine),
    };
    write_run_dir(out_dir, &state).map_err(io_err(format!("writing {}", out_dir.display())))?;
    recorder.save(&out_dir.join(SCRIPT_FILE))?;
    Ok(state)
}

impl From<crate::model::ModelError> for HarnessError {
    fn from(e: crate::model::ModelError) -> Self {
        HarnessError::Config(ConfigError::Model(e))
    }
}

/// The provider for one task: a per-task script from `script_dir` when
/// given, otherwise whatever the config describes.
pub fn provider_for(
    config: &Config,
    script_dir: Option<&Path>,
    group: &str,
    task_id: &str,
) -> Result<Arc<dyn ChatProvider>, HarnessError> {
    match (config.provider, script_dir) {
        (ProviderKind::Scripted, Some(dir)) => {
            let path = dir.join(group).join(format!("{task_id}.jsonl"));
            Ok(Arc::new(ScriptedProvider::from_file(&path).map_err(|e| match e {
                LlmError::Io(source) => HarnessError::Io {
                    context: format!("reading script {}", path.display()),
                    source,
                },
                other => other.into(),
            })?))
        }
        _ => Ok(config.provider(None)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub expected: String,
    pub answer: Option<String>,
    pub status: Option<RunStatus>,
    pub correct: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: Mode,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub tasks: Vec<Verdict>,
}

impl BenchReport {
    pub fn from_verdicts(mode: Mode, tasks: Vec<Verdict>) -> Self {
        let correct = tasks.iter().filter(|v| v.correct).count();
        let total = tasks.len();
        Self {
            mode,
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            tasks,
        }
    }

    pub fn row(&self) -> String {
        format!(
            "{:<9} {}/{} correct  accuracy {:.4}",
            self.mode.label(),
            self.correct,
            self.total,
            self.accuracy
        )
    }
}

fn bench_task(
    config: &Config,
    task: &DatasetTask,
    mode: Mode,
    out_dir: &Path,
    script_dir: Option<&Path>,
) -> Verdict {
    let outcome = (|| {
        let instruction = task.instruction()?;
        let provider = provider_for(config, script_dir, mode.label(), &task.id)?;
        run_one(
            config,
            &task.id,
            &instruction,
            mode,
            provider,
            &config.agent_library,
            &out_dir.join(mode.label()).join(&task.id),
        )
    })();
    match outcome {
        Ok(state) => {
            let answer = state.final_answer.clone();
            let correct = state.status == RunStatus::Done
                && answer
                    .as_deref()
                    .is_some_and(|a| judge(task.comparator, &task.expected, a, task.tol));
            Verdict {
                id: task.id.clone(),
                expected: task.expected.clone(),
                answer,
                status: Some(state.status),
                correct,
                error: state.error,
            }
        }
        Err(e) => Verdict {
            id: task.id.clone(),
            expected: task.expected.clone(),
            answer: None,
            status: None,
            correct: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every task of `dataset` in `mode`. Per-task failures count as
/// incorrect. The report is also written to `out_dir/bench_<mode>.json`.
pub fn bench(
    config: &Config,
    dataset: &Dataset,
    mode: Mode,
    out_dir: &Path,
    script_dir: Option<&Path>,
    jobs: usize,
) -> Result<BenchReport, HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let verdicts: Vec<Verdict> = if jobs <= 1 {
        dataset
            .tasks
            .iter()
            .map(|t| bench_task(config, t, mode, out_dir, script_dir))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HarnessError::Dataset(format!("thread pool: {e}")))?;
        pool.install(|| {
            dataset
                .tasks
                .par_iter()
                .map(|t| bench_task(config, t, mode, out_dir, script_dir))
                .collect()
        })
    };
    let report = BenchReport::from_verdicts(mode, verdicts);
    let path = out_dir.join(format!("bench_{}.json", mode.label()));
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    fs::write(&path, text).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedReport {
    pub before: usize,
    pub after: usize,
    pub added: Vec<String>,
    pub failed: Vec<String>,
}

fn library_names(config: &Config) -> Result<Vec<String>, HarnessError> {
    let lib = AgentLibrary::open(&config.agent_library, config.embedder()?)?;
    Ok(lib.profiles().iter().map(|p| p.name.clone()).collect())
}

/// Runs each seed task in adaptive mode so the generated agents land in the
/// configured library.
pub fn seed_library(
    config: &Config,
    seeds: &Dataset,
    out_dir: &Path,
    script_dir: Option<&Path>,
) -> Result<SeedReport, HarnessError> {
    let before = library_names(config)?;
    let mut failed = Vec::new();
    for task in &seeds.tasks {
        let instruction = task.instruction()?;
        let provider = provider_for(config, script_dir, "seed", &task.id)?;
        let state = run_one(
            config,
            &task.id,
            &instruction,
            Mode::Adaptive,
            provider,
            &config.agent_library,
            &out_dir.join("seed").join(&task.id),
        )?;
        if state.status != RunStatus::Done {
            failed.push(task.id.clone());
        }
    }
    let after = library_names(config)?;
    let known: BTreeSet<&String> = before.iter().collect();
    Ok(SeedReport {
        before: before.len(),
        after: after.len(),
        added: after.iter().filter(|n| !known.contains(n)).cloned().collect(),
        failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub out_dir: PathBuf,
    pub status: RunStatus,
    pub differences: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.differences.is_empty()
    }
}

/// Re-runs a recorded run from its own script and library snapshot into
/// `out_dir` and lists the output files that differ.
pub fn replay(config: &Config, run_dir: &Path, out_dir: &Path) -> Result<ReplayReport, HarnessError> {
    let task = rundir::read_task_file(run_dir).map_err(io_err(format!("reading task of {}", run_dir.display())))?;
    let mode = match task.mode.as_str() {
        "static" => Mode::Static,
        _ => Mode::Adaptive,
    };
    let provider = Arc::new(ScriptedProvider::from_file(&run_dir.join(SCRIPT_FILE))?);
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let library = out_dir.join("library_work.json");
    fs::copy(run_dir.join(LIBRARY_SNAPSHOT), &library).map_err(io_err("copying library snapshot"))?;
    let state = run_one(config, &task.id, &task.instruction, mode, provider, &library, out_dir)?;
    let differences =
        rundir::diff_run_dirs(run_dir, out_dir).map_err(io_err("comparing run directories"))?;
    Ok(ReplayReport {
        out_dir: out_dir.to_path_buf(),
        status: state.status,
        differences,
    })
}

/// Final answer text a run prints.
pub fn display_answer(state: &RunState) -> String {
    state
        .final_answer
        .clone()
        .map(|a| answer_from(&a))
        .unwrap_or_default()
}
