//! Session management over a pool of runner workers: open, execute,
//! fork by replaying the committed prefix, close.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::prefix_hash;
use stepcode_core::{ExecStatus, ExecutionResult, Task, ToolDoc};

use crate::cache::{CacheStats, ResponseCache};
use crate::error::GatewayError;
use crate::fake_runner::FakeRunner;
use crate::interp::{Clock, ToolHost};
use crate::proxy::{ProxyConfig, ProxyServer, ToolProxy};
use crate::runner::{ChildProcessTransport, InProcessTransport, RunnerClient};

/// Environment variable through which out-of-process runners learn the
/// proxy endpoint URL.
pub const PROXY_URL_ENV: &str = "STEPCODE_PROXY_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunnerSpec {
    /// Bundled interpreter, driven through the protocol in-process.
    InProcess {
        #[serde(default)]
        clock: Clock,
    },
    /// External worker process speaking the stdio protocol.
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for RunnerSpec {
    fn default() -> Self {
        RunnerSpec::InProcess {
            clock: Clock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub workers: usize,
    pub runner: RunnerSpec,
    pub proxy: ProxyConfig,
    /// Per-step budget used when replaying a committed prefix.
    pub replay_timeout_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            runner: RunnerSpec::default(),
            proxy: ProxyConfig::default(),
            replay_timeout_ms: 10_000,
        }
    }
}

/// How a committed step is expected to behave when replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayHint {
    pub status: ExecStatus,
    /// Budget the step originally ran under; `None` uses the gateway's
    /// replay budget.
    pub timeout_ms: Option<u64>,
}

/// Caller-side view of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionHandle {
    pub session_id: String,
    pub task_id: String,
    pub committed_prefix: Vec<String>,
    pub replay_hints: Vec<ReplayHint>,
}

impl SessionHandle {
    /// Record `code`, which ran successfully, as committed state.
    pub fn commit(&mut self, code: impl Into<String>) {
        self.committed_prefix.push(code.into());
        self.replay_hints.push(ReplayHint {
            status: ExecStatus::Success,
            timeout_ms: None,
        });
    }

    /// Record `code` with the outcome it had. Failed steps stay part of the
    /// state (their partial effects persist) and must fail the same way on
    /// replay.
    pub fn commit_outcome(&mut self, code: impl Into<String>, status: ExecStatus, timeout_ms: u64) {
        self.committed_prefix.push(code.into());
        self.replay_hints.push(ReplayHint {
            status,
            timeout_ms: Some(timeout_ms),
        });
    }

    pub fn prefix_hash(&self) -> String {
        prefix_hash(&self.committed_prefix)
    }
}

struct SessionMeta {
    worker: usize,
    toolset: Arc<Vec<ToolDoc>>,
}

pub struct Gateway {
    workers: Vec<Mutex<RunnerClient>>,
    proxy: Arc<ToolProxy>,
    sessions: Mutex<HashMap<String, SessionMeta>>,
    next_session: AtomicU64,
    replay_timeout_ms: u64,
    // keeps the endpoint alive for out-of-process runners
    _server: Option<ProxyServer>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("workers", &self.workers.len())
            .field("proxy", &self.proxy)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        Self::with_cache(cfg, Arc::new(ResponseCache::new()))
    }

    pub fn with_cache(cfg: GatewayConfig, cache: Arc<ResponseCache>) -> Result<Self, GatewayError> {
        let proxy = Arc::new(ToolProxy::new(cfg.proxy.clone(), cache));
        let n = cfg.workers.max(1);
        let mut workers = Vec::with_capacity(n);
        let mut server = None;
        match &cfg.runner {
            RunnerSpec::InProcess { clock } => {
                for _ in 0..n {
                    let host: Arc<dyn ToolHost> = proxy.clone();
                    let runner = FakeRunner::new(Some(host), *clock);
                    let client = RunnerClient::connect(Box::new(InProcessTransport::new(runner)))?;
                    workers.push(Mutex::new(client));
                }
            }
            RunnerSpec::Command { program, args } => {
                let host: Arc<dyn ToolHost> = proxy.clone();
                let srv = ProxyServer::spawn(host, "127.0.0.1:0".parse().expect("literal address"))?;
                for _ in 0..n {
                    let mut cmd = Command::new(program);
                    cmd.args(args).env(PROXY_URL_ENV, srv.url());
                    let transport = ChildProcessTransport::spawn(cmd)?;
                    let client = RunnerClient::connect(Box::new(transport)).map_err(|e| {
                        GatewayError::RunnerUnavailable(format!("handshake with {}: {e}", program.display()))
                    })?;
                    workers.push(Mutex::new(client));
                }
                server = Some(srv);
            }
        }
        Ok(Self {
            workers,
            proxy,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(0),
            replay_timeout_ms: cfg.replay_timeout_ms,
            _server: server,
        })
    }

    pub fn proxy(&self) -> &Arc<ToolProxy> {
        &self.proxy
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        self.proxy.cache()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.proxy.cache().stats()
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    fn create(&self, task_id: &str, toolset: Arc<Vec<ToolDoc>>) -> Result<SessionHandle, GatewayError> {
        let n = self.next_session.fetch_add(1, Ordering::Relaxed);
        let session_id = format!("s{n}");
        let worker = (n as usize) % self.workers.len();
        self.proxy.register(&session_id, toolset.clone());
        let created = self.workers[worker]
            .lock()
            .expect("worker lock")
            .create(&session_id);
        if let Err(e) = created {
            self.proxy.unregister(&session_id);
            return Err(e);
        }
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(session_id.clone(), SessionMeta { worker, toolset });
        Ok(SessionHandle {
            session_id,
            task_id: task_id.to_string(),
            committed_prefix: Vec::new(),
            replay_hints: Vec::new(),
        })
    }

    /// Fresh isolated namespace with the task's tools routed through the proxy.
    pub fn open_session(&self, task: &Task) -> Result<SessionHandle, GatewayError> {
        self.create(&task.id, Arc::new(task.toolset.clone()))
    }

    fn meta(&self, session: &str) -> Result<(usize, Arc<Vec<ToolDoc>>), GatewayError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(session)
            .map(|m| (m.worker, m.toolset.clone()))
            .ok_or_else(|| GatewayError::NoSuchSession(session.into()))
    }

    /// Run `code` in the session. The caller decides whether to commit it.
    pub fn exec_step(
        &self,
        handle: &SessionHandle,
        code: &str,
        timeout_ms: u64,
    ) -> Result<ExecutionResult, GatewayError> {
        let (worker, _) = self.meta(&handle.session_id)?;
        let mut client = self.workers[worker].lock().expect("worker lock");
        self.proxy.drain_calls(&handle.session_id);
        let mut result = client.exec(&handle.session_id, code, timeout_ms)?;
        result.tool_calls = self.proxy.drain_calls(&handle.session_id);
        Ok(result)
    }

    /// New session whose state equals the parent's committed state.
    pub fn fork_session(&self, parent: &SessionHandle) -> Result<SessionHandle, GatewayError> {
        let (_, toolset) = self.meta(&parent.session_id)?;
        let mut child = self.create(&parent.task_id, toolset)?;
        for (step, code) in parent.committed_prefix.iter().enumerate() {
            let hint = parent.replay_hints.get(step).copied().unwrap_or(ReplayHint {
                status: ExecStatus::Success,
                timeout_ms: None,
            });
            let budget = hint.timeout_ms.unwrap_or(self.replay_timeout_ms);
            let r = match self.exec_step(&child, code, budget) {
                Ok(r) => r,
                Err(e) => {
                    let _ = self.close_session(&child);
                    return Err(e);
                }
            };
            if r.status != hint.status {
                let _ = self.close_session(&child);
                return Err(GatewayError::ReplayDivergence {
                    session: child.session_id,
                    step,
                    status: r.status.to_string(),
                    stderr: r.stderr,
                });
            }
            child.committed_prefix.push(code.clone());
            child.replay_hints.push(hint);
        }
        Ok(child)
    }

    pub fn close_session(&self, handle: &SessionHandle) -> Result<(), GatewayError> {
        let meta = self
            .sessions
            .lock()
            .expect("sessions lock")
            .remove(&handle.session_id)
            .ok_or_else(|| GatewayError::NoSuchSession(handle.session_id.clone()))?;
        self.proxy.unregister(&handle.session_id);
        self.workers[meta.worker]
            .lock()
            .expect("worker lock")
            .destroy(&handle.session_id)
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for w in &self.workers {
            if let Ok(mut c) = w.lock() {
                let _ = c.shutdown();
            }
        }
    }
}
