//! Client side of the runner protocol plus the two transports: an
//! in-process fake runner and a child process speaking over stdio.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde_json::Value as Json;
use stepcode_core::ExecutionResult;

use crate::error::GatewayError;
use crate::fake_runner::FakeRunner;
use crate::protocol::{
    decode_response, encode_line, Op, Request, Response, ERR_NO_SUCH_SESSION, PROTOCOL_VERSION,
};

/// Moves one request line to a runner and one response line back.
pub trait Transport: Send {
    fn round_trip(&mut self, line: &str, deadline: Duration) -> Result<String, GatewayError>;
}

pub struct InProcessTransport {
    runner: FakeRunner,
    stopped: bool,
}

impl InProcessTransport {
    pub fn new(runner: FakeRunner) -> Self {
        Self {
            runner,
            stopped: false,
        }
    }
}

impl Transport for InProcessTransport {
    fn round_trip(&mut self, line: &str, _deadline: Duration) -> Result<String, GatewayError> {
        if self.stopped {
            return Err(GatewayError::RunnerUnavailable("runner was shut down".into()));
        }
        let (resp, stop) = self.runner.handle_line(line);
        self.stopped = stop;
        Ok(resp)
    }
}

/// Runner worker in a child process; stdout is read on a helper thread so
/// a hung worker can be abandoned after a deadline.
pub struct ChildProcessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    dead: bool,
}

impl ChildProcessTransport {
    pub fn spawn(mut cmd: Command) -> Result<Self, GatewayError> {
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::RunnerUnavailable(format!("spawn runner: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| GatewayError::RunnerUnavailable("runner stdout not captured".into()))?;
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("runner-stdout".into())
            .spawn(move || {
                let mut reader = BufReader::new(stdout);
                loop {
                    let mut line = String::new();
                    match reader.read_line(&mut line) {
                        Ok(0) => break,
                        Ok(_) => {
                            if tx.send(Ok(line)).is_err() {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            })?;
        Ok(Self {
            child,
            stdin,
            lines: rx,
            dead: false,
        })
    }

    fn kill(&mut self) {
        self.dead = true;
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Transport for ChildProcessTransport {
    fn round_trip(&mut self, line: &str, deadline: Duration) -> Result<String, GatewayError> {
        if self.dead {
            return Err(GatewayError::RunnerUnavailable("runner process is gone".into()));
        }
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| GatewayError::RunnerUnavailable("runner stdin closed".into()))?;
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            self.kill();
            return Err(GatewayError::RunnerUnavailable(format!("write to runner: {e}")));
        }
        match self.lines.recv_timeout(deadline) {
            Ok(Ok(resp)) => Ok(resp),
            Ok(Err(e)) => {
                self.kill();
                Err(GatewayError::RunnerUnavailable(format!("read from runner: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Err(GatewayError::Protocol(format!(
                    "runner did not answer within {} ms",
                    deadline.as_millis()
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill();
                Err(GatewayError::RunnerUnavailable("runner exited".into()))
            }
        }
    }
}

impl Drop for ChildProcessTransport {
    fn drop(&mut self) {
        if !self.dead {
            self.stdin = None;
            // closing stdin ends a well-behaved runner; give it a moment
            for _ in 0..20 {
                if matches!(self.child.try_wait(), Ok(Some(_))) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Typed protocol client over any transport.
pub struct RunnerClient {
    transport: Box<dyn Transport>,
    next_id: u64,
    /// Slack added to an exec's timeout before the runner counts as hung.
    grace: Duration,
}

const CONTROL_DEADLINE: Duration = Duration::from_secs(10);

impl RunnerClient {
    /// Connect and perform the version handshake.
    pub fn connect(transport: Box<dyn Transport>) -> Result<Self, GatewayError> {
        let mut client = Self {
            transport,
            next_id: 0,
            grace: Duration::from_secs(5),
        };
        client.hello()?;
        Ok(client)
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    fn request(&mut self, op: Op, deadline: Duration) -> Result<Response, GatewayError> {
        self.next_id += 1;
        let id = Json::from(self.next_id);
        let line = encode_line(&Request {
            id: Some(id.clone()),
            op,
        });
        let raw = self.transport.round_trip(&line, deadline)?;
        if !raw.ends_with('\n') {
            return Err(GatewayError::Protocol("response line is not terminated".into()));
        }
        let resp = decode_response(&raw)
            .map_err(|e| GatewayError::Protocol(format!("undecodable response: {e}")))?;
        if resp.id.as_ref() != Some(&id) {
            return Err(GatewayError::Protocol(format!(
                "response id {:?} does not match request id {id}",
                resp.id
            )));
        }
        Ok(resp)
    }

    fn expect_ok(resp: Response, what: &str, session: Option<&str>) -> Result<Response, GatewayError> {
        if resp.ok {
            return Ok(resp);
        }
        match (resp.error.as_deref(), session) {
            (Some(ERR_NO_SUCH_SESSION), Some(s)) => Err(GatewayError::NoSuchSession(s.into())),
            (err, _) => Err(GatewayError::Protocol(format!(
                "{what} failed: {}",
                err.unwrap_or("unspecified error")
            ))),
        }
    }

    pub fn hello(&mut self) -> Result<(), GatewayError> {
        let resp = self.request(
            Op::Hello {
                version: PROTOCOL_VERSION,
            },
            CONTROL_DEADLINE,
        )?;
        let resp = Self::expect_ok(resp, "hello", None)?;
        match resp.version {
            Some(PROTOCOL_VERSION) => Ok(()),
            other => Err(GatewayError::Protocol(format!(
                "runner speaks protocol version {other:?}"
            ))),
        }
    }

    pub fn create(&mut self, session: &str) -> Result<(), GatewayError> {
        let resp = self.request(
            Op::Create {
                session: session.into(),
            },
            CONTROL_DEADLINE,
        )?;
        Self::expect_ok(resp, "create", None).map(|_| ())
    }

    /// Execute code. Malformed replies become `protocol_error` results;
    /// an unreachable runner is an error.
    pub fn exec(
        &mut self,
        session: &str,
        code: &str,
        timeout_ms: u64,
    ) -> Result<ExecutionResult, GatewayError> {
        let deadline = Duration::from_millis(timeout_ms) + self.grace;
        let op = Op::Exec {
            session: session.into(),
            code: code.into(),
            timeout_ms,
        };
        let resp = match self.request(op, deadline) {
            Ok(r) => r,
            Err(GatewayError::Protocol(detail)) => {
                return Ok(ExecutionResult::protocol_error(detail))
            }
            Err(e) => return Err(e),
        };
        if !resp.ok {
            if resp.error.as_deref() == Some(ERR_NO_SUCH_SESSION) {
                return Err(GatewayError::NoSuchSession(session.into()));
            }
            return Ok(ExecutionResult::protocol_error(format!(
                "runner error: {}",
                resp.error.unwrap_or_default()
            )));
        }
        match (resp.status, resp.stdout, resp.stderr, resp.wall_time_ms) {
            (Some(status), Some(stdout), Some(stderr), Some(wall_time_ms)) => Ok(ExecutionResult {
                status,
                stdout,
                stderr,
                wall_time_ms,
                tool_calls: Vec::new(),
            }),
            _ => Ok(ExecutionResult::protocol_error(
                "exec response is missing status, stdout, stderr or wall_time_ms",
            )),
        }
    }

    pub fn destroy(&mut self, session: &str) -> Result<(), GatewayError> {
        let resp = self.request(
            Op::Destroy {
                session: session.into(),
            },
            CONTROL_DEADLINE,
        )?;
        Self::expect_ok(resp, "destroy", Some(session)).map(|_| ())
    }

    pub fn shutdown(&mut self) -> Result<(), GatewayError> {
        let resp = self.request(Op::Shutdown, CONTROL_DEADLINE)?;
        Self::expect_ok(resp, "shutdown", None).map(|_| ())
    }
}
