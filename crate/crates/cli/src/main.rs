use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use captain_core::captain::RunStatus;
use captain_core::config::{Config, ProviderKind};
use captain_core::harness::{self, Dataset, DatasetTask, Mode};
use captain_core::rundir;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Adaptive team-building orchestration for LLM expert groups.
#[derive(Parser)]
#[command(name = "captain", version)]
struct Cli {
    /// Flat TOML config; relative paths inside it resolve against its directory.
    #[arg(long, short, global = true, default_value = "captain.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one task and write a run directory.
    Run(RunArgs),
    /// Like `run`, but against the live provider; the recorded script lands in the run directory.
    Record(RunArgs),
    /// Score a dataset manifest in adaptive mode, static mode or both.
    Bench(BenchArgs),
    /// Run seed tasks so their generated agents are added to the agent library.
    SeedLibrary(SeedArgs),
    /// Re-run a run directory from its own script and compare transcripts.
    Replay(ReplayArgs),
    /// Pretty-print a run directory.
    Inspect {
        run_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Static,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Adaptive => Mode::Adaptive,
            ModeArg::Static => Mode::Static,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Adaptive,
    Static,
    Both,
}

#[derive(Args)]
struct RunArgs {
    /// Task instruction text. Mutually exclusive with --task-file.
    #[arg(conflicts_with = "task_file", required_unless_present = "task_file")]
    instruction: Option<String>,
    /// JSON task: {"id", "instruction"} or {"id", "template", "fields"}.
    #[arg(long)]
    task_file: Option<PathBuf>,
    /// Task id for inline instructions.
    #[arg(long, default_value = "task")]
    id: String,
    /// Run directory [default: runs/<id>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay script, overriding the config's `script`.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: ModeArg,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset manifest: {"tasks": [{"id", "instruction" | "template"+"fields", "expected", "comparator", "tol"}]}.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "adaptive")]
    mode: BenchMode,
    /// Per-task scripts at <dir>/<mode>/<id>.jsonl.
    #[arg(long)]
    script_dir: Option<PathBuf>,
    /// Tasks run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
}

#[derive(Args)]
struct SeedArgs {
    /// Seed task manifest, same format as a bench dataset.
    #[arg(long)]
    seeds: PathBuf,
    /// Per-task scripts at <dir>/seed/<id>.jsonl.
    #[arg(long)]
    script_dir: Option<PathBuf>,
    #[arg(long, default_value = "seed_out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    run_dir: PathBuf,
    /// Where the replayed run goes [default: <run_dir>.replay].
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(path: &Path) -> Result<Config, Failure> {
    Config::load(path).map_err(|e| Failure::Usage(e.into()))
}

fn load_task(args: &RunArgs) -> Result<(String, String), Failure> {
    match &args.task_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Usage)?;
            let task: DatasetTask = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(Failure::Usage)?;
            let instruction = task.instruction().map_err(|e| Failure::Usage(e.into()))?;
            Ok((task.id, instruction))
        }
        None => Ok((args.id.clone(), args.instruction.clone().unwrap_or_default())),
    }
}

fn cmd_run(config: &Config, args: RunArgs, live: bool) -> Result<bool, Failure> {
    if live && config.provider != ProviderKind::Openai {
        return Err(Failure::Usage(anyhow!("record needs provider = \"openai\" in the config")));
    }
    let (id, instruction) = load_task(&args)?;
    let provider = config
        .provider(args.script.as_deref())
        .map_err(|e| Failure::Usage(e.into()))?;
    let out = args.out.unwrap_or_else(|| Path::new("runs").join(&id));
    let state = harness::run_one(
        config,
        &id,
        &instruction,
        args.mode.into(),
        provider,
        &config.agent_library,
        &out,
    )
    .map_err(anyhow::Error::from)?;
    eprintln!("run directory: {}", out.display());
    if let Some(e) = &state.error {
        eprintln!("error: {e}");
    }
    if state.status == RunStatus::Done {
        println!("{}", harness::display_answer(&state));
        Ok(true)
    } else {
        eprintln!("run ended with status {:?}", state.status);
        Ok(false)
    }
}

fn cmd_bench(config: &Config, args: BenchArgs) -> Result<bool, Failure> {
    let dataset = Dataset::load(&args.dataset).map_err(|e| Failure::Usage(e.into()))?;
    let modes: &[Mode] = match args.mode {
        BenchMode::Adaptive => &[Mode::Adaptive],
        BenchMode::Static => &[Mode::Static],
        BenchMode::Both => &[Mode::Adaptive, Mode::Static],
    };
    let mut reports = Vec::new();
    for &mode in modes {
        let report = harness::bench(
            config,
            &dataset,
            mode,
            &args.out,
            args.script_dir.as_deref(),
            args.jobs.max(1),
        )
        .map_err(anyhow::Error::from)?;
        for v in &report.tasks {
            let mark = if v.correct { "ok  " } else { "FAIL" };
            println!("  {mark} {} [{}] {}", v.id, mode.label(), v.answer.as_deref().unwrap_or("-"));
        }
        reports.push(report);
    }
    for r in &reports {
        println!("{}", r.row());
    }
    let summary = serde_json::to_string_pretty(&reports).context("serializing bench summary")?;
    std::fs::write(args.out.join("bench_summary.json"), summary + "\n").context("writing bench summary")?;
    Ok(true)
}

fn cmd_seed(config: &Config, args: SeedArgs) -> Result<bool, Failure> {
    let seeds = Dataset::load(&args.seeds).map_err(|e| Failure::Usage(e.into()))?;
    let report = harness::seed_library(config, &seeds, &args.out, args.script_dir.as_deref())
        .map_err(anyhow::Error::from)?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing seed report")?);
    Ok(report.failed.is_empty())
}

fn cmd_replay(config: &Config, args: ReplayArgs) -> Result<bool, Failure> {
    if !args.run_dir.join(rundir::TASK_FILE).exists() {
        return Err(Failure::Usage(anyhow!("{} is not a run directory", args.run_dir.display())));
    }
    let out = args.out.unwrap_or_else(|| {
        let mut name = args.run_dir.as_os_str().to_owned();
        name.push(".replay");
        PathBuf::from(name)
    });
    let report = harness::replay(config, &args.run_dir, &out).map_err(anyhow::Error::from)?;
    if report.identical() {
        println!("replay identical ({})", out.display());
        Ok(true)
    } else {
        println!("replay differs in:");
        for d in &report.differences {
            println!("  {d}");
        }
        Ok(false)
    }
}

fn dispatch(cli: Cli) -> Result<bool, Failure> {
    if let Command::Inspect { run_dir } = &cli.command {
        let text = rundir::inspect(run_dir)
            .with_context(|| format!("inspecting {}", run_dir.display()))
            .map_err(Failure::Usage)?;
        print!("{text}");
        return Ok(true);
    }
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Run(args) => cmd_run(&config, args, false),
        Command::Record(args) => cmd_run(&config, args, true),
        Command::Bench(args) => cmd_bench(&config, args),
        Command::SeedLibrary(args) => cmd_seed(&config, args),
        Command::Replay(args) => cmd_replay(&config, args),
        Command::Inspect { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("captain: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("captain: {e:#}");
            ExitCode::from(1)
        }
    }
}
