//! Caching tool proxy: turns `call_tool(name, params)` into HTTP requests
//! against the tool service, recording every request hash per session.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json as AxumJson, Router};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use stepcode_core::chat::http_agent;
use stepcode_core::{HttpMethod, ParamKind, ToolDoc};
use tokio::sync::oneshot;

use crate::cache::{request_key, CachedResponse, ResponseCache};
use crate::error::GatewayError;
use crate::interp::{ToolFailure, ToolFailureKind, ToolHost};

const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Tool service base URL, e.g. `http://127.0.0.1:8080`.
    pub upstream: String,
    /// Extra attempts after a 429 or 5xx response.
    pub max_retries: u32,
    /// Upper bound on any single wait between attempts.
    pub max_retry_wait_ms: u64,
    pub request_timeout_ms: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            upstream: "http://127.0.0.1:8080".into(),
            max_retries: 2,
            max_retry_wait_ms: 2_000,
            request_timeout_ms: 10_000,
        }
    }
}

/// A tool invocation resolved against its documentation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRequest {
    pub method: HttpMethod,
    /// Path plus query string, relative to the upstream base.
    pub path: String,
    pub body: Option<Json>,
}

impl PreparedRequest {
    pub fn cache_key(&self) -> String {
        request_key(self.method.as_str(), &self.path, self.body.as_ref())
    }
}

fn invalid(msg: impl Into<String>) -> ToolFailure {
    ToolFailure {
        kind: ToolFailureKind::InvalidParams,
        message: msg.into(),
    }
}

fn kind_matches(kind: ParamKind, v: &Json) -> bool {
    match kind {
        ParamKind::String => v.is_string(),
        ParamKind::Integer => v.is_i64() || v.is_u64(),
        ParamKind::Number => v.is_number(),
        ParamKind::Boolean => v.is_boolean(),
        ParamKind::Array => v.is_array(),
    }
}

fn render_scalar(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Validate `params` against `doc` and build the outbound request.
pub fn prepare_request(doc: &ToolDoc, params: &Json) -> Result<PreparedRequest, ToolFailure> {
    let empty = Map::new();
    let given = match params {
        Json::Object(m) => m,
        Json::Null => &empty,
        other => {
            return Err(invalid(format!(
                "params for '{}' must be an object, got {other}",
                doc.name
            )))
        }
    };
    for (k, v) in given {
        let spec = doc
            .param(k)
            .ok_or_else(|| invalid(format!("'{}' got an unexpected parameter '{k}'", doc.name)))?;
        if !kind_matches(spec.kind, v) {
            return Err(invalid(format!(
                "parameter '{k}' of '{}' must be of type {:?}",
                doc.name, spec.kind
            )));
        }
    }
    if let Some(missing) = doc
        .params
        .iter()
        .find(|p| p.required && !given.contains_key(&p.name))
    {
        return Err(invalid(format!(
            "'{}' is missing required parameter '{}'",
            doc.name, missing.name
        )));
    }

    let placeholders = doc.placeholders();
    let mut path = doc.url_template.clone();
    for name in &placeholders {
        let value = given
            .get(*name)
            .ok_or_else(|| invalid(format!("'{}' is missing path parameter '{name}'", doc.name)))?;
        let encoded = utf8_percent_encode(&render_scalar(value), COMPONENT).to_string();
        path = path.replace(&format!("{{{name}}}"), &encoded);
    }
    if !path.starts_with('/') {
        path.insert(0, '/');
    }
    let rest: Map<String, Json> = given
        .iter()
        .filter(|(k, _)| !placeholders.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let body = match doc.http_method {
        HttpMethod::Get => {
            if !rest.is_empty() {
                let query: Vec<String> = rest
                    .iter()
                    .map(|(k, v)| {
                        format!(
                            "{}={}",
                            utf8_percent_encode(k, COMPONENT),
                            utf8_percent_encode(&render_scalar(v), COMPONENT)
                        )
                    })
                    .collect();
                path = format!("{path}?{}", query.join("&"));
            }
            None
        }
        HttpMethod::Post => Some(Json::Object(rest)),
    };
    Ok(PreparedRequest {
        method: doc.http_method,
        path,
        body,
    })
}

struct SessionTools {
    toolset: Arc<Vec<ToolDoc>>,
    calls: Mutex<Vec<String>>,
}

pub struct ToolProxy {
    cfg: ProxyConfig,
    agent: ureq::Agent,
    cache: Arc<ResponseCache>,
    sessions: RwLock<HashMap<String, SessionTools>>,
    outbound: AtomicU64,
}

impl std::fmt::Debug for ToolProxy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolProxy")
            .field("cfg", &self.cfg)
            .field("cache", &self.cache.stats())
            .finish_non_exhaustive()
    }
}

impl ToolProxy {
    pub fn new(cfg: ProxyConfig, cache: Arc<ResponseCache>) -> Self {
        let agent = http_agent(Duration::from_millis(cfg.request_timeout_ms));
        Self {
            cfg,
            agent,
            cache,
            sessions: RwLock::new(HashMap::new()),
            outbound: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> &Arc<ResponseCache> {
        &self.cache
    }

    /// Upstream HTTP attempts made so far, retries included.
    pub fn outbound_requests(&self) -> u64 {
        self.outbound.load(Ordering::Relaxed)
    }

    pub fn register(&self, session: &str, toolset: Arc<Vec<ToolDoc>>) {
        self.sessions.write().expect("proxy lock").insert(
            session.to_string(),
            SessionTools {
                toolset,
                calls: Mutex::new(Vec::new()),
            },
        );
    }

    pub fn unregister(&self, session: &str) {
        self.sessions.write().expect("proxy lock").remove(session);
    }

    /// Request hashes recorded for `session` since the last drain.
    pub fn drain_calls(&self, session: &str) -> Vec<String> {
        self.sessions
            .read()
            .expect("proxy lock")
            .get(session)
            .map(|s| std::mem::take(&mut *s.calls.lock().expect("calls lock")))
            .unwrap_or_default()
    }

    fn fetch(&self, req: &PreparedRequest) -> Result<CachedResponse, ToolFailure> {
        let url = format!("{}{}", self.cfg.upstream.trim_end_matches('/'), req.path);
        let mut attempt = 0;
        loop {
            self.outbound.fetch_add(1, Ordering::Relaxed);
            let result = match (&req.method, &req.body) {
                (HttpMethod::Post, Some(body)) => self.agent.post(&url).send_json(body),
                (HttpMethod::Post, None) => self.agent.post(&url).send_empty(),
                (HttpMethod::Get, _) => self.agent.get(&url).call(),
            };
            let mut resp = result.map_err(|e| ToolFailure {
                kind: ToolFailureKind::Transport,
                message: format!("tool service unreachable: {e}"),
            })?;
            let status = resp.status().as_u16();
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok());
            if (status == 429 || status >= 500) && attempt < self.cfg.max_retries {
                attempt += 1;
                let wait_ms = retry_after
                    .map(|s| (s * 1000.0) as u64)
                    .unwrap_or(50 << attempt)
                    .min(self.cfg.max_retry_wait_ms);
                tracing::debug!(status, attempt, wait_ms, path = %req.path, "retrying tool request");
                std::thread::sleep(Duration::from_millis(wait_ms));
                continue;
            }
            let mut headers = BTreeMap::new();
            if let Some(ct) = resp.headers().get("content-type").and_then(|v| v.to_str().ok()) {
                headers.insert("content-type".to_string(), ct.to_string());
            }
            let text = resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY_BYTES)
                .read_to_string()
                .map_err(|e| ToolFailure {
                    kind: ToolFailureKind::Transport,
                    message: format!("reading tool response: {e}"),
                })?;
            let body = serde_json::from_str(&text).unwrap_or(Json::String(text));
            return Ok(CachedResponse {
                status,
                headers,
                body,
            });
        }
    }

    fn call(&self, session: &str, tool: &str, params: Json) -> Result<Json, ToolFailure> {
        let (toolset, doc) = {
            let sessions = self.sessions.read().expect("proxy lock");
            let tools = sessions.get(session).ok_or_else(|| ToolFailure {
                kind: ToolFailureKind::Transport,
                message: format!("session '{session}' is not registered with the tool proxy"),
            })?;
            let doc = tools.toolset.iter().find(|d| d.name == tool).cloned();
            (tools.toolset.clone(), doc)
        };
        let doc = doc.ok_or_else(|| {
            let names: Vec<&str> = toolset.iter().map(|d| d.name.as_str()).collect();
            ToolFailure {
                kind: ToolFailureKind::UnknownTool,
                message: format!("unknown tool '{tool}'; available: {}", names.join(", ")),
            }
        })?;
        let req = prepare_request(&doc, &params)?;
        let key = req.cache_key();
        if let Some(s) = self.sessions.read().expect("proxy lock").get(session) {
            s.calls.lock().expect("calls lock").push(key.clone());
        }
        let resp = match self.cache.lookup(&key) {
            Some(hit) => hit,
            None => {
                let fresh = self.fetch(&req)?;
                // transient failures are not recorded so a later retry can succeed
                if !(fresh.status == 408 || fresh.status == 429 || fresh.status >= 500) {
                    self.cache.insert(key, fresh.clone());
                }
                fresh
            }
        };
        if (200..300).contains(&resp.status) {
            Ok(resp.body)
        } else {
            let mut detail = match &resp.body {
                Json::String(s) => s.clone(),
                other => other.to_string(),
            };
            if detail.len() > 300 {
                let cut = (0..=300).rev().find(|i| detail.is_char_boundary(*i)).unwrap_or(0);
                detail.truncate(cut);
                detail.push_str("...");
            }
            Err(ToolFailure {
                kind: ToolFailureKind::Http,
                message: format!("HTTP {} from '{tool}': {detail}", resp.status),
            })
        }
    }
}

impl ToolHost for ToolProxy {
    fn call_tool(&self, session: &str, tool: &str, params: Json) -> Result<Json, ToolFailure> {
        self.call(session, tool, params)
    }
}

/// Body of `POST /v1/call` on the proxy endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCall {
    pub session: String,
    pub tool: String,
    #[serde(default)]
    pub params: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

fn kind_label(kind: ToolFailureKind) -> &'static str {
    match kind {
        ToolFailureKind::UnknownTool => "unknown_tool",
        ToolFailureKind::InvalidParams => "invalid_params",
        ToolFailureKind::Http => "http",
        ToolFailureKind::Transport => "transport",
    }
}

fn kind_from_label(label: &str) -> ToolFailureKind {
    match label {
        "unknown_tool" => ToolFailureKind::UnknownTool,
        "invalid_params" => ToolFailureKind::InvalidParams,
        "http" => ToolFailureKind::Http,
        _ => ToolFailureKind::Transport,
    }
}

async fn handle_call(
    State(host): State<Arc<dyn ToolHost>>,
    AxumJson(call): AxumJson<ProxyCall>,
) -> AxumJson<ProxyReply> {
    let result = tokio::task::spawn_blocking(move || {
        host.call_tool(&call.session, &call.tool, call.params)
    })
    .await;
    let reply = match result {
        Ok(Ok(body)) => ProxyReply {
            ok: true,
            body: Some(body),
            error: None,
            message: None,
        },
        Ok(Err(f)) => ProxyReply {
            ok: false,
            body: None,
            error: Some(kind_label(f.kind).into()),
            message: Some(f.message),
        },
        Err(e) => ProxyReply {
            ok: false,
            body: None,
            error: Some("transport".into()),
            message: Some(format!("proxy worker failed: {e}")),
        },
    };
    AxumJson(reply)
}

/// Router exposing `host` to out-of-process runners.
pub fn proxy_router(host: Arc<dyn ToolHost>) -> Router {
    Router::new()
        .route("/v1/call", post(handle_call))
        .route("/v1/health", get(|| async { "ok" }))
        .with_state(host)
}

/// Proxy endpoint running on its own runtime thread; stops on drop.
pub struct ProxyServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ProxyServer {
    pub fn spawn(host: Arc<dyn ToolHost>, bind: SocketAddr) -> Result<Self, GatewayError> {
        let listener = std::net::TcpListener::bind(bind)
            .map_err(|e| GatewayError::Proxy(format!("bind {bind}: {e}")))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::Builder::new()
            .name("tool-proxy".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            tracing::error!(error = %e, "proxy listener");
                            return;
                        }
                    };
                    let server = axum::serve(listener, proxy_router(host))
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        });
                    if let Err(e) = server.await {
                        tracing::error!(error = %e, "proxy endpoint stopped");
                    }
                });
            })?;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ProxyServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Tool host that forwards calls to a proxy endpoint over HTTP.
#[derive(Debug, Clone)]
pub struct HttpToolHost {
    url: String,
    agent: ureq::Agent,
}

impl HttpToolHost {
    pub fn new(proxy_url: &str, timeout: Duration) -> Self {
        Self {
            url: format!("{}/v1/call", proxy_url.trim_end_matches('/')),
            agent: http_agent(timeout),
        }
    }
}

impl ToolHost for HttpToolHost {
    fn call_tool(&self, session: &str, tool: &str, params: Json) -> Result<Json, ToolFailure> {
        let call = ProxyCall {
            session: session.into(),
            tool: tool.into(),
            params,
        };
        let transport = |e: String| ToolFailure {
            kind: ToolFailureKind::Transport,
            message: e,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&call)
            .map_err(|e| transport(format!("proxy unreachable: {e}")))?;
        let reply: ProxyReply = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_json()
            .map_err(|e| transport(format!("bad proxy reply: {e}")))?;
        if reply.ok {
            Ok(reply.body.unwrap_or(Json::Null))
        } else {
            Err(ToolFailure {
                kind: kind_from_label(reply.error.as_deref().unwrap_or("transport")),
                message: reply.message.unwrap_or_default(),
            })
        }
    }
}
