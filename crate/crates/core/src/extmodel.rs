//! Bridge to expensive external models running as child processes.
//!
//! The manager and the child exchange one UTF-8 JSON object per line over
//! the child's stdin/stdout:
//!
//! | direction | message |
//! |-----------|---------|
//! | → child   | `{"type":"hello","dim":D}` |
//! | ← child   | `{"type":"ready","dim":D}` |
//! | → child   | `{"type":"eval","id":n,"x":[...]}` |
//! | ← child   | `{"type":"fitness","id":n,"value":f}` (optional `"aux"` object) |
//! | ← child   | `{"type":"error","id":n,"message":"..."}` on a bad request |
//! | → child   | `{"type":"bye"}`, after which the child exits with status 0 |
//!
//! The protocol is strictly request → response. Floats are written in their
//! shortest round-trip decimal form, so no precision is lost either way.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Bounds;
use crate::objectives::Objective;

/// Default per-evaluation timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

const STDERR_TAIL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Hello { dim: usize },
    Eval { id: u64, x: Vec<f64> },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Reply {
    Ready {
        dim: usize,
    },
    Fitness {
        id: u64,
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        aux: Option<serde_json::Value>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("failed to launch `{command}`: {source}")]
    Launch {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model declared dimension {declared}, configuration expects {expected}")]
    DimensionMismatch { expected: usize, declared: usize },
    #[error("no reply to request {id} within {after:?}")]
    Timeout { id: u64, after: Duration },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model reported an error for request {id:?}: {message}")]
    Remote { id: Option<u64>, message: String },
    #[error("model process exited ({status}){stderr}")]
    Exited { status: String, stderr: String },
    #[error("endpoint is {0:?}, not ready")]
    NotReady(EndpointState),
    #[error("point outside the model bounds: {0:?}")]
    OutOfBounds(Vec<f64>),
    #[error("i/o with model process: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointState {
    Spawned,
    Ready,
    Failed,
    Closed,
}

/// How to launch and talk to an external model.
#[derive(Debug, Clone)]
pub struct EndpointSpec {
    pub program: String,
    pub args: Vec<String>,
    pub bounds: Bounds,
    pub timeout: Duration,
    /// How long a child may take to exit after `bye` before it is killed.
    pub shutdown_grace: Duration,
    pub name: String,
}

impl EndpointSpec {
    pub fn new(program: impl Into<String>, args: Vec<String>, bounds: Bounds) -> Self {
        let program = program.into();
        Self {
            name: format!("external:{program}"),
            program,
            args,
            bounds,
            timeout: DEFAULT_TIMEOUT,
            shutdown_grace: Duration::from_secs(5),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }
}

/// How an endpoint was closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShutdownReport {
    /// The child ignored `bye` and had to be killed.
    pub forced: bool,
    /// A request was still awaiting its reply and was abandoned.
    pub aborted_request: Option<u64>,
    pub already_closed: bool,
}

/// A running external model owned by exactly one worker.
pub struct ModelEndpoint {
    spec: EndpointSpec,
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<String>,
    stderr_tail: Arc<Mutex<Vec<String>>>,
    next_id: u64,
    pending: Option<u64>,
    state: EndpointState,
}

impl std::fmt::Debug for ModelEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelEndpoint")
            .field("program", &self.spec.program)
            .field("state", &self.state)
            .field("next_id", &self.next_id)
            .finish()
    }
}

impl ModelEndpoint {
    /// Launches the child and performs the `hello`/`ready` handshake.
    pub fn spawn(spec: EndpointSpec) -> Result<Self, EndpointError> {
        let mut child = Command::new(&spec.program)
            .args(&spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| EndpointError::Launch {
                command: spec.program.clone(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let stderr = child.stderr.take().expect("stderr is piped");

        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(line) if line.trim().is_empty() => continue,
                    Ok(line) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        let stderr_tail = Arc::new(Mutex::new(Vec::new()));
        let tail = Arc::clone(&stderr_tail);
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                let mut buf = tail.lock().unwrap_or_else(|e| e.into_inner());
                if buf.len() == STDERR_TAIL {
                    buf.remove(0);
                }
                buf.push(line);
            }
        });

        let mut endpoint = Self {
            spec,
            child,
            stdin,
            replies,
            stderr_tail,
            next_id: 1,
            pending: None,
            state: EndpointState::Spawned,
        };
        match endpoint.handshake() {
            Ok(()) => {
                endpoint.state = EndpointState::Ready;
                Ok(endpoint)
            }
            Err(e) => {
                endpoint.kill();
                Err(e)
            }
        }
    }

    fn handshake(&mut self) -> Result<(), EndpointError> {
        let expected = self.spec.dim();
        self.send(&Request::Hello { dim: expected })?;
        match self.receive(0)? {
            Reply::Ready { dim } if dim == expected => Ok(()),
            Reply::Ready { dim } => Err(EndpointError::DimensionMismatch {
                expected,
                declared: dim,
            }),
            other => Err(EndpointError::Protocol(format!(
                "expected ready message, got {other:?}"
            ))),
        }
    }

    pub fn state(&self) -> EndpointState {
        self.state
    }

    pub fn spec(&self) -> &EndpointSpec {
        &self.spec
    }

    /// Sends an evaluation request without waiting; returns its id.
    pub fn begin_eval(&mut self, x: &[f64]) -> Result<u64, EndpointError> {
        if self.state != EndpointState::Ready {
            return Err(EndpointError::NotReady(self.state));
        }
        if let Some(id) = self.pending {
            return Err(EndpointError::Protocol(format!(
                "request {id} is still in flight"
            )));
        }
        if !self.spec.bounds.contains(x) {
            return Err(EndpointError::OutOfBounds(x.to_vec()));
        }
        let id = self.next_id;
        self.next_id += 1;
        if let Err(e) = self.send(&Request::Eval { id, x: x.to_vec() }) {
            self.fail();
            return Err(e);
        }
        self.pending = Some(id);
        Ok(id)
    }

    /// Waits for the reply to the in-flight request.
    pub fn finish_eval(&mut self) -> Result<f64, EndpointError> {
        let Some(id) = self.pending.take() else {
            return Err(EndpointError::Protocol("no request in flight".into()));
        };
        let result = self.receive(id).and_then(|reply| match reply {
            Reply::Fitness { id: got, value, .. } if got == id => {
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(EndpointError::Protocol(format!(
                        "non-finite fitness {value} for request {id}"
                    )))
                }
            }
            Reply::Fitness { id: got, .. } => Err(EndpointError::Protocol(format!(
                "reply id {got} does not match request id {id}"
            ))),
            Reply::Error { id, message } => Err(EndpointError::Remote { id, message }),
            other => Err(EndpointError::Protocol(format!(
                "expected fitness message, got {other:?}"
            ))),
        });
        if result.is_err() {
            self.fail();
        }
        result
    }

    /// Evaluates `x` with the external model.
    pub fn evaluate_remote(&mut self, x: &[f64]) -> Result<f64, EndpointError> {
        self.begin_eval(x)?;
        self.finish_eval()
    }

    /// Sends `bye` and reaps the child, killing it if it does not exit within
    /// the grace period. Calling it again is a no-op.
    pub fn shutdown(&mut self) -> ShutdownReport {
        if self.state == EndpointState::Closed {
            return ShutdownReport {
                forced: false,
                aborted_request: None,
                already_closed: true,
            };
        }
        let aborted_request = self.pending.take();
        if let Some(id) = aborted_request {
            log::warn!("{}: abandoning in-flight request {id} at shutdown", self.spec.name);
        }
        let _ = self.send(&Request::Bye);
        self.stdin = None;

        let deadline = Instant::now() + self.spec.shutdown_grace;
        let mut forced = true;
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) => {
                    forced = false;
                    break;
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(_) => break,
            }
        }
        if forced {
            log::warn!(
                "{}: model did not exit within {:?}; killing it",
                self.spec.name,
                self.spec.shutdown_grace
            );
            self.kill();
        }
        self.state = EndpointState::Closed;
        ShutdownReport {
            forced,
            aborted_request,
            already_closed: false,
        }
    }

    fn send(&mut self, request: &Request) -> Result<(), EndpointError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or(EndpointError::NotReady(self.state))?;
        let mut line = serde_json::to_string(request)
            .map_err(|e| EndpointError::Protocol(e.to_string()))?;
        line.push('\n');
        stdin.write_all(line.as_bytes())?;
        stdin.flush()?;
        Ok(())
    }

    fn receive(&mut self, id: u64) -> Result<Reply, EndpointError> {
        match self.replies.recv_timeout(self.spec.timeout) {
            Ok(line) => serde_json::from_str(&line)
                .map_err(|e| EndpointError::Protocol(format!("malformed reply `{line}`: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(EndpointError::Timeout {
                    id,
                    after: self.spec.timeout,
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.wait_briefly();
                self.state = EndpointState::Failed;
                let tail = self
                    .stderr_tail
                    .lock()
                    .map(|t| t.join("\n"))
                    .unwrap_or_default();
                Err(EndpointError::Exited {
                    status: status.map_or_else(|| "unknown status".into(), |s| s.to_string()),
                    stderr: if tail.is_empty() {
                        String::new()
                    } else {
                        format!("; stderr:\n{tail}")
                    },
                })
            }
        }
    }

    fn wait_briefly(&mut self) -> Option<ExitStatus> {
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return None,
            }
        }
    }

    fn fail(&mut self) {
        self.kill();
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
        if self.state != EndpointState::Closed {
            self.state = EndpointState::Failed;
        }
    }
}

impl Drop for ModelEndpoint {
    fn drop(&mut self) {
        if self.state != EndpointState::Closed {
            self.kill();
        }
    }
}

/// An external model exposed as an [`Objective`].
#[derive(Debug)]
pub struct RemoteObjective {
    endpoint: ModelEndpoint,
}

impl RemoteObjective {
    pub fn spawn(spec: EndpointSpec) -> Result<Self, EndpointError> {
        ModelEndpoint::spawn(spec).map(|endpoint| Self { endpoint })
    }

    pub fn endpoint_mut(&mut self) -> &mut ModelEndpoint {
        &mut self.endpoint
    }
}

impl Objective for RemoteObjective {
    fn name(&self) -> &str {
        &self.endpoint.spec.name
    }

    fn bounds(&self) -> &Bounds {
        &self.endpoint.spec.bounds
    }

    fn evaluate(&mut self, x: &[f64]) -> crate::error::Result<f64> {
        Ok(self.endpoint.evaluate_remote(x)?)
    }
}

impl Drop for RemoteObjective {
    fn drop(&mut self) {
        self.endpoint.shutdown();
    }
}
