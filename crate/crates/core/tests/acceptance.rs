//! Acceptance criteria. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero when any fails.

mod common;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use captain_core::captain::{RunConfig, RunStatus};
use captain_core::embedding::{cosine, EmbeddingIndex};
use captain_core::harness::{self, Dataset, Mode};
use captain_core::library::AgentLibrary;
use captain_core::llm::{Gateway, ModelTable, PromptAsset, ScriptedProvider};
use captain_core::model::{EmbeddingVector, RetrievalConfig, ToolCategory, ToolRecord, ROLE_HEADER, SKILL_HEADER};
use captain_core::rundir;
use captain_core::sandbox::{open_session, SandboxConfig};
use captain_core::team::{build_team, Origin, TeamRequest};
use captain_core::tools::{ToolRegistry, TOOLS_HEADER};
use common::{fixtures, profile, report, run_scripted, scratch_config, seek};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn golden_replay() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let task: BTreeMap<String, String> =
        serde_json::from_str(&fs::read_to_string(fixtures().join("golden/task.json")).unwrap()).unwrap();
    let mut dirs = Vec::new();
    for n in 0..2 {
        let scratch = tmp.path().join(format!("scratch{n}"));
        fs::create_dir_all(&scratch).unwrap();
        let manifest = fixtures().join("tools/manifest.json");
        let config = scratch_config(&scratch, &format!("tool_manifest = {:?}\n", manifest.display().to_string()));
        let provider = config.provider(Some(&fixtures().join("golden/script.jsonl"))).map_err(|e| e.to_string())?;
        let out = scratch.join("run");
        let state = harness::run_one(&config, &task["id"], &task["instruction"], Mode::Adaptive, provider, &config.agent_library, &out)
            .map_err(|e| e.to_string())?;
        ensure!(state.status == RunStatus::Done, "run {n} ended {:?}: {:?}", state.status, state.error);
        ensure!(state.final_answer.as_deref() == Some("328"), "answer {:?}", state.final_answer);
        dirs.push(out);
    }
    let diff = rundir::diff_run_dirs(&dirs[0], &dirs[1]).map_err(|e| e.to_string())?;
    ensure!(diff.is_empty(), "consecutive runs differ in {diff:?}");
    let expected = fixtures().join("golden/expected");
    let diff = rundir::diff_run_dirs(&expected, &dirs[0]).map_err(|e| e.to_string())?;
    ensure!(diff.is_empty(), "run differs from the committed transcripts in {diff:?}");

    let state_json = fs::read_to_string(dirs[0].join(rundir::SUMMARY_FILE)).unwrap();
    let summary: rundir::RunSummary = serde_json::from_str(&state_json).unwrap();
    let cycle = &summary.cycles[0];
    let origins: Vec<Origin> = cycle.members.iter().map(|m| m.origin).collect();
    ensure!(
        origins == [Origin::Selected, Origin::Generated, Origin::Selected],
        "origins {origins:?}"
    );
    let transcript = fs::read_to_string(dirs[0].join("cycles/01_prime_sum/transcript.jsonl")).unwrap();
    let executions = transcript.lines().filter(|l| l.contains("\"sender\":\"user_proxy\"")).count();
    ensure!(executions == 2, "{executions} code executions");
    ensure!(cycle.need_double_check.as_deref() == Some("No"), "flag {:?}", cycle.need_double_check);

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("2 runs byte-identical and equal to committed transcripts in {elapsed:.2?}"))
}

fn oracle_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ties = 0;
    for instance in 0..200 {
        let dim = rng.gen_range(1..=16);
        let size = rng.gen_range(1..=50);
        let k = rng.gen_range(1..=10);
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        for _ in 0..size {
            if !vectors.is_empty() && rng.gen_bool(0.2) {
                let copy = vectors[rng.gen_range(0..vectors.len())].clone();
                let scale = rng.gen_range(1..=3) as f64;
                vectors.push(copy.iter().map(|x| x * scale).collect());
            } else {
                vectors.push(random_vector(&mut rng, dim));
            }
        }
        let query = random_vector(&mut rng, dim);
        let mut index = EmbeddingIndex::new();
        for (i, v) in vectors.iter().enumerate() {
            index
                .insert(format!("agent{i}"), "", EmbeddingVector::new(v.clone()).unwrap())
                .unwrap();
        }
        let got: Vec<String> = index
            .top_k(&EmbeddingVector::new(query.clone()).unwrap(), k)
            .unwrap()
            .into_iter()
            .map(|s| s.key)
            .collect();
        let mut brute: Vec<(usize, f64)> = vectors.iter().map(|v| oracle_cosine(&query, v)).enumerate().collect();
        // stable sort keeps insertion order among equal scores
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        ties += brute.windows(2).filter(|w| w[0].1 == w[1].1).count();
        let want: Vec<String> = brute.iter().take(k).map(|(i, _)| format!("agent{i}")).collect();
        ensure!(got == want, "instance {instance}: got {got:?}, brute force {want:?}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200/200 instances match brute force ({ties} tied pairs) in {elapsed:.2?}"))
}

fn cosine_unit() -> Outcome {
    let v = |x: Vec<f64>| EmbeddingVector::new(x).unwrap();
    let c = cosine(&v(vec![1.0, 2.0, 3.0]), &v(vec![4.0, 5.0, 6.0])).unwrap();
    ensure!((c - 0.974632).abs() <= 1e-6, "cos((1,2,3),(4,5,6)) = {c}");
    let o = cosine(&v(vec![1.0, 2.0, 0.0]), &v(vec![-2.0, 1.0, 5.0])).unwrap();
    ensure!(o.abs() <= 1e-12, "orthogonal pair gave {o}");
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.gen_range(1..=32);
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let s = rng.gen_range(1e-3..1e3);
        let base = cosine(&v(a.clone()), &v(b.clone())).unwrap();
        let scaled = cosine(&v(a.iter().map(|x| x * s).collect()), &v(b)).unwrap();
        worst = worst.max((base - scaled).abs());
    }
    ensure!(worst <= 1e-12, "scale changed cosine by {worst}");
    Ok(format!("cos = {c:.6}, orthogonal = {o:e}, max scale drift {worst:e}"))
}

fn abstention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let embedder = common::embedder();
    let topics = ["algebra", "geometry", "statistics", "physics", "chemistry", "history", "poetry", "finance"];
    let mut generated_total = 0;
    for instance in 0..40 {
        let library_size = rng.gen_range(3..=8);
        let profiles: Vec<_> = (0..library_size)
            .map(|i| profile(&format!("Lib{i}_Expert"), &format!("Lib{i}_Expert knows {} and {}.", topics[i % 8], topics[(i * 3 + 1) % 8])))
            .collect();
        let mut library = AgentLibrary::from_profiles(profiles.clone(), embedder.clone()).unwrap();
        let k1 = rng.gen_range(1..library_size);
        let role_count = rng.gen_range(2..=5);
        let roles: Vec<String> = (0..role_count)
            .map(|r| format!("Role {r}: an expert in {} for instance {instance}.", topics[rng.gen_range(0..8)]))
            .collect();
        let mut answer = serde_json::Map::new();
        let mut expect_selected = Vec::new();
        for role in &roles {
            let slate: Vec<String> = library.candidates(role, k1).unwrap().into_iter().map(|p| p.name).collect();
            let outside: Vec<&String> = profiles.iter().map(|p| &p.name).filter(|n| !slate.contains(n)).collect();
            match rng.gen_range(0..5) {
                0 | 1 => {
                    let pick = &slate[rng.gen_range(0..slate.len())];
                    answer.insert(role.clone(), format!("{pick}: chosen").into());
                    expect_selected.push(Some(pick.clone()));
                }
                2 => {
                    answer.insert(role.clone(), "None".into());
                    expect_selected.push(None);
                }
                3 if !outside.is_empty() => {
                    let name = outside[rng.gen_range(0..outside.len())];
                    answer.insert(role.clone(), format!("{name}: not on the slate").into());
                    expect_selected.push(None);
                }
                _ => {
                    answer.insert(role.clone(), "Imaginary_Expert: does not exist".into());
                    expect_selected.push(None);
                }
            }
        }
        let generated = expect_selected.iter().filter(|s| s.is_none()).count();
        let mut provider = ScriptedProvider::default()
            .with("selector", format!("```json\n{}\n```", serde_json::Value::Object(answer)));
        for g in 0..generated {
            let name = format!("Gen{instance}x{g}_Expert");
            let reply = serde_json::json!({"name": name, "role": format!("{name} is new."), "skills": "- solve it"});
            provider.push("generator", reply.to_string());
            provider.push("compressor", format!("{name} solves the role."));
        }
        let provider = Arc::new(provider);
        let gateway = Gateway::new(provider.clone(), ModelTable::default());
        let tools = ToolRegistry::empty(embedder.clone());
        let config = RetrievalConfig { k1, ..RetrievalConfig::default() };
        let request = TeamRequest {
            group_name: "g".into(),
            building_task: roles.iter().map(|r| format!("- {r}\n")).collect(),
            execution_task: "Solve it.".into(),
        };
        let before = library.len();
        let roster = build_team(&gateway, &mut library, &tools, &request, &config).map_err(|e| e.to_string())?;
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (member, want) in roster.members.iter().zip(&expect_selected) {
            match want {
                Some(name) => ensure!(
                    member.origin == Origin::Selected && member.profile.name == roster_name(name, &mut seen),
                    "instance {instance}: expected {name} selected, got {} ({:?})",
                    member.profile.name,
                    member.origin
                ),
                None => ensure!(
                    member.origin == Origin::Generated,
                    "instance {instance}: abstaining role got {} ({:?})",
                    member.profile.name,
                    member.origin
                ),
            }
        }
        ensure!(
            library.len() == before + generated,
            "instance {instance}: library grew by {} for {generated} generated roles",
            library.len() - before
        );
        ensure!(provider.mismatches().is_empty(), "instance {instance}: unexpected calls {:?}", provider.mismatches());
        generated_total += generated;
    }
    Ok(format!("40 randomized teams, {generated_total} generated roles, library growth exact"))
}

/// Roster name of the nth pick of the same library agent: `name`, `name_2`, ...
fn roster_name<'a>(name: &'a str, seen: &mut BTreeMap<&'a str, usize>) -> String {
    let n = seen.entry(name).or_insert(0);
    *n += 1;
    if *n == 1 {
        name.to_string()
    } else {
        format!("{name}_{n}")
    }
}

fn checker_library() -> AgentLibrary {
    AgentLibrary::from_profiles(
        vec![
            profile("Solver_Expert", "Solver_Expert computes the value."),
            profile("Checker_Expert", "Checker_Expert verifies the value."),
        ],
        common::embedder(),
    )
    .unwrap()
}

fn cycle_script(provider: &mut ScriptedProvider, group: &str, task: &str, results: &str, flag: &str) {
    let selection = serde_json::json!({
        "A solver who computes the value.": "Solver_Expert: computes",
        "A checker who verifies the value.": "Checker_Expert: verifies",
    });
    provider
        .push("captain", seek(group, task))
        .push("selector", selection.to_string())
        .push("manager", "Solver_Expert")
        .push("expert:Solver_Expert", format!("The value is {results}.\n\nTERMINATE"))
        .push("reflector", report(results, flag));
}

fn double_check() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = |cap| RunConfig {
        retrieval: RetrievalConfig { k1: 2, max_double_checks: cap, ..RetrievalConfig::default() },
        ..RunConfig::default()
    };

    let mut p = ScriptedProvider::default();
    cycle_script(&mut p, "alpha", "Compute the value.", "value-seven", "Yes");
    cycle_script(&mut p, "alpha", "Verify the value.", "value-seven", "No");
    p.push("captain", "\\box{value-seven}\n\nTERMINATE");
    let (state, provider) = run_scripted(p, &mut checker_library(), &config(2), tmp.path());
    ensure!(state.status == RunStatus::Done, "yes-once run ended {:?}: {:?}", state.status, state.error);
    ensure!(provider.mismatches().is_empty(), "yes-once mismatches {:?}", provider.mismatches());
    ensure!(state.verification_cycles("alpha") == 1, "yes-once verifications {}", state.verification_cycles("alpha"));
    let second = &state.cycle_log[1];
    ensure!(second.verification && second.request.group_name == "alpha", "second cycle {:?}", second.request);
    ensure!(
        second.request.execution_task.contains("value-seven"),
        "verification task lacks prior results:\n{}",
        second.request.execution_task
    );

    let mut p = ScriptedProvider::default();
    cycle_script(&mut p, "alpha", "Compute the value.", "value-seven", "Yes");
    p.push("captain", "\\box{value-seven}\n\nTERMINATE");
    let (state, _) = run_scripted(p, &mut checker_library(), &config(0), tmp.path());
    ensure!(state.status == RunStatus::Done, "cap-0 run ended {:?}", state.status);
    ensure!(
        state.cycle_log.iter().all(|c| !c.verification && c.double_check_reason.is_none()),
        "cap 0 still requested verification"
    );
    let notice_head = PromptAsset::VerificationNotice.template().lines().next().unwrap_or_default().to_string();
    ensure!(
        state.captain_dialogue.iter().all(|m| notice_head.is_empty() || !m.content.contains(&notice_head)),
        "cap 0 sent a verification notice"
    );

    let mut p = ScriptedProvider::default();
    for _ in 0..3 {
        cycle_script(&mut p, "alpha", "Compute the value.", "value-seven", "Yes");
    }
    p.push("captain", "\\box{value-seven}\n\nTERMINATE");
    let (state, _) = run_scripted(p, &mut checker_library(), &config(2), tmp.path());
    ensure!(state.status == RunStatus::Done, "persistent run ended {:?}", state.status);
    ensure!(state.verification_cycles("alpha") == 2, "persistent yes gave {} verifications", state.verification_cycles("alpha"));
    ensure!(state.cycle_log[2].double_check_reason.is_none(), "policy kept asking past the cap");
    Ok("yes-once -> 1 verification with prior results, cap 0 -> none, persistent yes -> stops at cap 2".into())
}

fn snapshot(root: &Path, skip: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.starts_with(skip) {
                continue;
            }
            if path.is_dir() {
                out.insert(path.clone(), Vec::new());
                stack.push(path);
            } else {
                out.insert(path.clone(), fs::read(&path).unwrap_or_default());
            }
        }
    }
    out
}

fn sandbox_safety() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let workdir = tmp.path().join("workdir");
    let outside = tmp.path().join("outside");
    fs::create_dir_all(&workdir).unwrap();
    fs::create_dir_all(&outside).unwrap();
    fs::write(outside.join("data.txt"), "keep").unwrap();
    let before = snapshot(tmp.path(), &workdir);

    let mut session = open_session(&workdir, &SandboxConfig::default()).map_err(|e| e.to_string())?;
    session.execute("x = 41").map_err(|e| e.to_string())?;
    let out = session.execute("print(x + 1)").map_err(|e| e.to_string())?;
    ensure!(out.stdout == "42\n" && out.exit == 0, "persistence: {out:?}");

    let start = Instant::now();
    let slow = session
        .execute_with_timeout("import time\ntime.sleep(30)", Duration::from_secs(1))
        .map_err(|e| e.to_string())?;
    ensure!(slow.timed_out, "sleep was not interrupted: {slow:?}");
    let after = session.execute("print('alive', x)").map_err(|e| e.to_string())?;
    ensure!(after.stdout == "alive 41\n", "session unresponsive after timeout: {after:?}");
    let waited = start.elapsed();

    let writes = "import os, tempfile\nopen('result.txt', 'w').write('1')\nos.makedirs('sub/deeper', exist_ok=True)\nf = tempfile.NamedTemporaryFile(delete=False)\nf.write(b'x'); f.close()\nopen(os.path.expanduser('~/.cache_probe'), 'w').write('2')\nprint(f.name)";
    let wrote = session.execute(writes).map_err(|e| e.to_string())?;
    ensure!(wrote.exit == 0, "writes failed: {wrote:?}");
    ensure!(
        Path::new(wrote.stdout.trim()).starts_with(fs::canonicalize(&workdir).unwrap())
            || Path::new(wrote.stdout.trim()).starts_with(&workdir),
        "temp file outside workdir: {}",
        wrote.stdout
    );
    session
        .execute_block("sh", "touch made_by_shell")
        .expect("shell is supported")
        .map_err(|e| e.to_string())?;
    drop(session);

    let after_snapshot = snapshot(tmp.path(), &workdir);
    ensure!(before == after_snapshot, "files outside the workdir changed");
    for f in ["result.txt", "sub/deeper", ".cache_probe", "made_by_shell"] {
        ensure!(workdir.join(f).exists(), "{f} missing from workdir");
    }
    Ok(format!("state persists, 1 s timeout recovered in {waited:.2?}, writes confined to workdir"))
}

fn tool_records(dir: &Path, count: usize) -> Vec<ToolRecord> {
    (0..count)
        .map(|i| {
            let module_path = format!("tools/math/tool{i}.py");
            let path = dir.join(&module_path);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, format!("def tool{i}():\n    return {i}\n")).unwrap();
            ToolRecord {
                name: format!("tool{i}"),
                category: ToolCategory::Math,
                description: format!("Tool number {i} computes something about {}.", ["primes", "areas", "fractions"][i % 3]),
                module_path,
                signature: format!("tool{i}() -> int"),
                response_case: format!("tool{i}() -> {i}"),
                stub: false,
            }
        })
        .collect()
}

fn system_message_composition() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let all_tools = tool_records(tmp.path(), 8);
    let general = PromptAsset::AgentGeneralInstructions.template();
    let group = PromptAsset::GroupChatInstructions.template();
    let mut runner = TestRunner::new(ProptestConfig { cases: 64, ..ProptestConfig::default() });
    let strategy = (
        prop::collection::vec(("[a-z]{3,10}( [a-z]{2,8}){0,6}", "[A-Z][a-z]{2,8}"), 2..=5),
        0usize..=8,
        0usize..=4,
    );
    let with_tools = Cell::new(0usize);
    let without_tools = Cell::new(0usize);
    runner
        .run(&strategy, |(roles, tool_count, k2)| {
            let embedder = common::embedder();
            let tools = ToolRegistry::from_records(all_tools[..tool_count].to_vec(), tmp.path(), embedder.clone()).unwrap();
            let mut library = AgentLibrary::empty(embedder);
            let mut provider = ScriptedProvider::default();
            for (i, (_, stem)) in roles.iter().enumerate() {
                let name = format!("{stem}{i}_Expert");
                let reply = serde_json::json!({
                    "name": name,
                    "role": format!("{name} handles part {i}."),
                    "skills": format!("- work on part {i}\n- report results"),
                });
                provider.push("generator", reply.to_string());
                provider.push("compressor", format!("{name} handles part {i}."));
            }
            let gateway = Gateway::new(Arc::new(provider), ModelTable::default());
            let request = TeamRequest {
                group_name: "g".into(),
                building_task: roles.iter().map(|(r, _)| format!("- {r}\n")).collect(),
                execution_task: "Solve it.".into(),
            };
            let config = RetrievalConfig { k2, ..RetrievalConfig::default() };
            let roster = build_team(&gateway, &mut library, &tools, &request, &config).unwrap();
            for m in &roster.members {
                let counter = if m.tools.is_empty() { &without_tools } else { &with_tools };
                counter.set(counter.get() + 1);
                let msg = &m.profile.system_message;
                prop_assert_eq!(m.origin, Origin::Generated);
                prop_assert!(msg.contains(ROLE_HEADER) && msg.contains(SKILL_HEADER));
                prop_assert!(msg.contains(general) && msg.contains(group));
                prop_assert_eq!(msg.matches(TOOLS_HEADER).count(), usize::from(!m.tools.is_empty()));
                prop_assert_eq!(m.tools.len(), k2.min(tool_count));
                for t in &all_tools {
                    let bound = m.tools.iter().any(|b| b.name == t.name);
                    prop_assert_eq!(msg.matches(t.module_path.as_str()).count(), usize::from(bound));
                }
                // the library keeps the unbound message
                let stored = library.get(&m.profile.name).unwrap();
                prop_assert!(!stored.system_message.contains(TOOLS_HEADER));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let (bound, unbound) = (with_tools.get(), without_tools.get());
    ensure!(bound > 0 && unbound > 0, "only one branch exercised: {bound} with tools, {unbound} without");
    Ok(format!("64 randomized teams ({bound} agents with tools, {unbound} without): headers, both instruction assets, tools section iff bound"))
}

fn static_vs_adaptive() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = scratch_config(tmp.path(), "");
    let dataset = Dataset::load(&fixtures().join("bench/dataset.json")).map_err(|e| e.to_string())?;
    let scripts = fixtures().join("bench/scripts");
    let out = tmp.path().join("bench");
    let adaptive = harness::bench(&config, &dataset, Mode::Adaptive, &out, Some(&scripts), 2).map_err(|e| e.to_string())?;
    let fixed = harness::bench(&config, &dataset, Mode::Static, &out, Some(&scripts), 1).map_err(|e| e.to_string())?;
    ensure!(adaptive.correct == 3 && adaptive.total == 3, "adaptive {}", adaptive.row());
    ensure!(fixed.correct == 1 && fixed.total == 3, "static {}", fixed.row());
    ensure!(out.join("bench_adaptive.json").exists() && out.join("bench_static.json").exists(), "reports missing");
    Ok(format!("adaptive {}/3, static {}/3", adaptive.correct, fixed.correct))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("golden end-to-end replay", golden_replay),
        ("retrieval oracle", retrieval_oracle),
        ("cosine unit", cosine_unit),
        ("abstention semantics", abstention),
        ("double-check loop", double_check),
        ("sandbox state and safety", sandbox_safety),
        ("system-message composition", system_message_composition),
        ("static vs adaptive harness", static_vs_adaptive),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
