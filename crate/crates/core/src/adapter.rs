//! Out-of-process model backends speaking newline-delimited JSON over stdio.
//!
//! Each request is one JSON object on one line; the backend answers with one
//! line. Generators answer `{"text": ...}` and scorers `{"score": ...}`; either
//! may answer `{"error": ...}`. A backend process that exits or writes garbage is
//! discarded and a fresh one is spawned on the next call.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::ContextBundle;
use crate::genkit::{Capabilities, Directive, GenerationConfig, Generator};
use crate::scoring::Scorer;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn spawn(argv: &[String]) -> Result<Self, String> {
        let (program, args) = argv.split_first().ok_or("empty adapter command")?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot spawn `{program}`: {e}"))?;
        let stdin = child.stdin.take().ok_or("child has no stdin")?;
        let stdout = BufReader::new(child.stdout.take().ok_or("child has no stdout")?);
        Ok(Self { child, stdin, stdout })
    }

    fn call(&mut self, request: &str) -> Result<String, String> {
        writeln!(self.stdin, "{request}")
            .and_then(|()| self.stdin.flush())
            .map_err(|e| format!("write to adapter failed: {e}"))?;
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| format!("read from adapter failed: {e}"))?;
        if n == 0 {
            return Err("adapter closed its output".into());
        }
        Ok(line)
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Up to `size` live backend processes shared by concurrent callers.
pub struct ProcessPool {
    argv: Vec<String>,
    size: usize,
    state: Mutex<PoolState>,
    available: Condvar,
}

struct PoolState {
    idle: Vec<Worker>,
    live: usize,
}

impl ProcessPool {
    pub fn new(argv: Vec<String>, size: usize) -> Result<Self, String> {
        if argv.is_empty() {
            return Err("empty adapter command".into());
        }
        Ok(Self {
            argv,
            size: size.max(1),
            state: Mutex::new(PoolState { idle: Vec::new(), live: 0 }),
            available: Condvar::new(),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.argv
    }

    /// A worker and whether it served earlier requests.
    fn checkout(&self) -> Result<(Worker, bool), String> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(w) = state.idle.pop() {
                return Ok((w, true));
            }
            if state.live < self.size {
                state.live += 1;
                drop(state);
                return Worker::spawn(&self.argv)
                    .map(|w| (w, false))
                    .inspect_err(|_| self.release(None));
            }
            state = self.available.wait(state).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Return a healthy worker, or retire a broken one with `None`.
    fn release(&self, worker: Option<Worker>) {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        match worker {
            Some(w) => state.idle.push(w),
            None => state.live -= 1,
        }
        self.available.notify_one();
    }

    /// Send one request line and parse the reply as `T`.
    ///
    /// An I/O failure on a reused worker, which may have died while idle, is
    /// retried until a freshly spawned process answers or fails.
    pub fn request<T: for<'de> Deserialize<'de>>(&self, request: &impl Serialize) -> Result<T, String> {
        let line = serde_json::to_string(request).map_err(|e| e.to_string())?;
        loop {
            let (mut worker, reused) = self.checkout()?;
            match worker.call(&line) {
                Ok(reply) => {
                    let parsed = serde_json::from_str::<T>(reply.trim_end())
                        .map_err(|e| format!("malformed adapter reply {:?}: {e}", reply.trim_end()));
                    // a worker that answered garbage may be out of sync
                    self.release(parsed.is_ok().then_some(worker));
                    return parsed;
                }
                Err(e) => {
                    drop(worker);
                    self.release(None);
                    if !reused {
                        return Err(e);
                    }
                }
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply<T> {
    Ok(T),
    Err { error: String },
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

/// A [`Generator`] backed by an external process.
pub struct ProcessGenerator {
    pool: ProcessPool,
}

impl ProcessGenerator {
    pub fn new(argv: Vec<String>, pool_size: usize) -> Result<Self, String> {
        Ok(Self {
            pool: ProcessPool::new(argv, pool_size)?,
        })
    }
}

impl Generator for ProcessGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_context: true,
            supports_seeding: true,
            reentrant: true,
        }
    }

    fn generate(&self, input: &str, directive: Directive, config: &GenerationConfig, seed: u64) -> Result<String, String> {
        let request = json!({
            "input": input,
            "directive": directive,
            "config": config,
            "seed": seed,
        });
        match self.pool.request::<Reply<TextReply>>(&request)? {
            Reply::Ok(r) => Ok(r.text),
            Reply::Err { error } => Err(error),
        }
    }
}

/// A [`Scorer`] backed by an external process.
pub struct ProcessScorer {
    name: String,
    range: (f64, f64),
    pool: ProcessPool,
}

impl ProcessScorer {
    pub fn new(name: impl Into<String>, range: (f64, f64), argv: Vec<String>, pool_size: usize) -> Result<Self, String> {
        Ok(Self {
            name: name.into(),
            range,
            pool: ProcessPool::new(argv, pool_size)?,
        })
    }
}

impl Scorer for ProcessScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn range(&self) -> (f64, f64) {
        self.range
    }

    fn score(&self, source: &str, candidate: &str, context: &ContextBundle) -> Result<f64, String> {
        let request = json!({
            "source": source,
            "candidate": candidate,
            "context": context,
        });
        match self.pool.request::<Reply<ScoreReply>>(&request)? {
            Reply::Ok(r) => Ok(r.score),
            Reply::Err { error } => Err(error),
        }
    }
}
