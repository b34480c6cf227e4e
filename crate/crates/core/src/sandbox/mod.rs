//! Shared code-execution sessions.
//!
//! A session is one long-lived interpreter process rooted at the task
//! workdir. The supervisor talks to it over stdin/stdout with frames made of
//! a 4-byte big-endian length and a UTF-8 JSON body: requests are
//! `{id, code}`, responses `{id, stdout, stderr, exit, timed_out}`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The built-in interpreter-side agent, run with `python3 -c`.
pub const SHIM: &str = include_str!("shim.py");
pub const TRUNCATION_MARKER: &str = "\n[output truncated]";
const STDERR_TAIL: usize = 4096;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("could not start the interpreter: {0}")]
    SpawnFailure(String),
    #[error("interpreter session is dead: {0}")]
    SessionDead(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxConfig {
    pub interpreter: String,
    /// Interpreter-side agent script; the built-in shim when unset.
    pub agent_script: Option<PathBuf>,
    /// Directory put on the interpreter's import path.
    pub tool_root: Option<PathBuf>,
    pub timeout_secs: u64,
    pub output_cap: usize,
    pub allow_network: bool,
    /// How long an interrupted block may take to unwind before the process
    /// is killed.
    pub interrupt_grace_ms: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
            agent_script: None,
            tool_root: None,
            timeout_secs: 60,
            output_cap: 16 * 1024,
            allow_network: false,
            interrupt_grace_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub stdout: String,
    pub stderr: String,
    pub exit: i32,
    pub timed_out: bool,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    code: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    stderr: String,
    #[serde(default)]
    exit: i32,
    #[serde(default)]
    timed_out: bool,
}

/// Cuts `text` to at most `cap` bytes on a character boundary and appends
/// [`TRUNCATION_MARKER`] when anything was dropped.
pub fn truncate_output(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut cut = cap;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &text[..cut])
}

/// Python source that runs `script` through the shell and relays its
/// output and exit status.
pub fn wrap_shell(script: &str) -> String {
    let literal = serde_json::to_string(script).expect("string serializes");
    format!(
        "import subprocess as _sp, sys as _sys\n\
         _r = _sp.run({literal}, shell=True, capture_output=True, text=True)\n\
         print(_r.stdout, end=\"\")\n\
         print(_r.stderr, end=\"\", file=_sys.stderr)\n\
         if _r.returncode:\n    raise SystemExit(_r.returncode)\n"
    )
}

/// Languages the session executes: `Some(true)` for Python, `Some(false)`
/// for shell, `None` for anything else.
pub fn language_kind(tag: &str) -> Option<bool> {
    match tag.to_ascii_lowercase().as_str() {
        "python" | "py" | "python3" => Some(true),
        "sh" | "bash" | "shell" | "console" => Some(false),
        _ => None,
    }
}

fn read_frame(out: &mut ChildStdout) -> Result<Vec<u8>, String> {
    let mut header = [0u8; 4];
    out.read_exact(&mut header)
        .map_err(|e| format!("interpreter closed its output ({e})"))?;
    let len = u32::from_be_bytes(header) as usize;
    let mut body = vec![0u8; len];
    out.read_exact(&mut body)
        .map_err(|e| format!("truncated frame ({e})"))?;
    Ok(body)
}

pub struct Session {
    child: Child,
    stdin: ChildStdin,
    responses: Receiver<Result<Response, String>>,
    stderr_tail: Arc<Mutex<String>>,
    workdir: PathBuf,
    config: SandboxConfig,
    next_id: u64,
    dead: Option<String>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("pid", &self.child.id())
            .field("workdir", &self.workdir)
            .field("dead", &self.dead)
            .finish()
    }
}

/// Starts a fresh interpreter rooted at `workdir`.
pub fn open_session(workdir: &Path, config: &SandboxConfig) -> Result<Session, SandboxError> {
    if !workdir.is_dir() {
        return Err(SandboxError::SpawnFailure(format!(
            "workdir {} does not exist",
            workdir.display()
        )));
    }
    let workdir = workdir
        .canonicalize()
        .map_err(|e| SandboxError::SpawnFailure(e.to_string()))?;
    let mut cmd = Command::new(&config.interpreter);
    match &config.agent_script {
        Some(script) => cmd.arg("-u").arg(script),
        None => cmd.arg("-u").arg("-c").arg(SHIM),
    };
    cmd.current_dir(&workdir)
        .env("HOME", &workdir)
        .env("TMPDIR", &workdir)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONIOENCODING", "utf-8")
        .env("MPLCONFIGDIR", &workdir)
        .env(
            "SANDBOX_ALLOW_NETWORK",
            if config.allow_network { "1" } else { "0" },
        )
        .env_remove("PYTHONSTARTUP")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    match &config.tool_root {
        Some(root) => {
            let root = root.canonicalize().unwrap_or_else(|_| root.clone());
            cmd.env("PYTHONPATH", root)
        }
        None => cmd.env_remove("PYTHONPATH"),
    };
    let mut child = cmd
        .spawn()
        .map_err(|e| SandboxError::SpawnFailure(format!("{}: {e}", config.interpreter)))?;
    let stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");

    let (tx, responses) = mpsc::channel();
    thread::spawn(move || loop {
        let message = read_frame(&mut stdout).and_then(|body| {
            serde_json::from_slice::<Response>(&body).map_err(|e| format!("bad response frame: {e}"))
        });
        let failed = message.is_err();
        if tx.send(message).is_err() || failed {
            break;
        }
    });

    let stderr_tail = Arc::new(Mutex::new(String::new()));
    let tail = stderr_tail.clone();
    thread::spawn(move || {
        let mut buf = [0u8; 1024];
        while let Ok(n) = stderr.read(&mut buf) {
            if n == 0 {
                break;
            }
            let mut t = tail.lock().unwrap();
            t.push_str(&String::from_utf8_lossy(&buf[..n]));
            if t.len() > STDERR_TAIL {
                let mut cut = t.len() - STDERR_TAIL;
                while !t.is_char_boundary(cut) {
                    cut += 1;
                }
                t.drain(..cut);
            }
        }
    });

    tracing::debug!(pid = child.id(), workdir = %workdir.display(), "sandbox session opened");
    Ok(Session {
        child,
        stdin,
        responses,
        stderr_tail,
        workdir,
        config: config.clone(),
        next_id: 1,
        dead: None,
    })
}

impl Session {
    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn is_alive(&self) -> bool {
        self.dead.is_none()
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn die(&mut self, reason: String) -> SandboxError {
        let _ = self.child.kill();
        let _ = self.child.wait();
        let tail = self.stderr_tail.lock().unwrap().trim().to_string();
        let reason = if tail.is_empty() {
            reason
        } else {
            format!("{reason}; interpreter stderr: {tail}")
        };
        self.dead = Some(reason.clone());
        SandboxError::SessionDead(reason)
    }

    fn wait_for(&mut self, id: u64, deadline: Instant) -> Result<Option<Response>, SandboxError> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.responses.recv_timeout(left) {
                Ok(Ok(r)) if r.id == id => return Ok(Some(r)),
                Ok(Ok(r)) => tracing::warn!(stale = r.id, expected = id, "discarding stale response"),
                Ok(Err(reason)) => return Err(self.die(reason)),
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.die("response channel closed".into()))
                }
            }
        }
    }

    #[cfg(unix)]
    fn interrupt(&mut self) -> bool {
        let pid = self.child.id() as libc::pid_t;
        // SAFETY: kill(2) on our own child's pid has no memory effects.
        unsafe { libc::kill(pid, libc::SIGINT) == 0 }
    }

    #[cfg(not(unix))]
    fn interrupt(&mut self) -> bool {
        false
    }

    /// Runs Python `code` in the session with the configured timeout.
    pub fn execute(&mut self, code: &str) -> Result<ExecOutcome, SandboxError> {
        let timeout = Duration::from_secs(self.config.timeout_secs);
        self.execute_with_timeout(code, timeout)
    }

    /// Runs `code`; names bound by earlier calls stay visible. On timeout the
    /// running block is interrupted and the session keeps its state. If the
    /// interpreter does not recover within the grace period it is killed and
    /// later calls fail with [`SandboxError::SessionDead`].
    pub fn execute_with_timeout(
        &mut self,
        code: &str,
        timeout: Duration,
    ) -> Result<ExecOutcome, SandboxError> {
        if let Some(reason) = &self.dead {
            return Err(SandboxError::SessionDead(reason.clone()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let body = serde_json::to_vec(&Request { id, code }).expect("request serializes");
        let len = u32::try_from(body.len())
            .map_err(|_| SandboxError::SessionDead("code block too large".into()))?;
        let mut frame = len.to_be_bytes().to_vec();
        frame.extend_from_slice(&body);
        if let Err(e) = self.stdin.write_all(&frame).and_then(|_| self.stdin.flush()) {
            return Err(self.die(format!("could not send request ({e})")));
        }

        let response = match self.wait_for(id, Instant::now() + timeout)? {
            Some(r) => r,
            None => {
                tracing::debug!(id, "block timed out, interrupting");
                let grace = Instant::now() + Duration::from_millis(self.config.interrupt_grace_ms);
                let reply = if self.interrupt() {
                    self.wait_for(id, grace)?
                } else {
                    None
                };
                match reply {
                    Some(mut r) => {
                        r.timed_out = true;
                        r
                    }
                    None => {
                        self.die("interpreter did not recover from an interrupt".into());
                        return Ok(ExecOutcome {
                            stdout: String::new(),
                            stderr: "Execution killed: time limit exceeded\n".into(),
                            exit: 124,
                            timed_out: true,
                        });
                    }
                }
            }
        };
        let cap = self.config.output_cap;
        Ok(ExecOutcome {
            stdout: truncate_output(&response.stdout, cap),
            stderr: truncate_output(&response.stderr, cap),
            exit: response.exit,
            timed_out: response.timed_out,
        })
    }

    /// Runs a fenced block by language tag; `None` for tags the session
    /// does not execute.
    pub fn execute_block(
        &mut self,
        lang: &str,
        code: &str,
    ) -> Option<Result<ExecOutcome, SandboxError>> {
        match language_kind(lang)? {
            true => Some(self.execute(code)),
            false => Some(self.execute(&wrap_shell(code))),
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
