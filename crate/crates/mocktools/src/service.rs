//! HTTP side of the mock tool universe.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json as AxumJson, Router};
use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};
use stepcode_core::{HttpMethod, ToolDoc};
use tokio::sync::oneshot;

use crate::scenario::{coerce, normalized_template, render, FailureMode, ResponseRule, Scenario, ScenarioError};

/// Request counters. Reserved paths are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub total: u64,
    pub routes: BTreeMap<String, u64>,
    pub unmatched: u64,
}

struct Route {
    doc: ToolDoc,
    segments: Vec<Segment>,
    rules: Vec<ResponseRule>,
    hits: AtomicU64,
}

enum Segment {
    Lit(String),
    Param(String),
}

pub struct ServiceState {
    scenario: Scenario,
    routes: Vec<Route>,
    total: AtomicU64,
    unmatched: AtomicU64,
    rate_limited: Mutex<HashMap<String, u64>>,
}

impl ServiceState {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let routes = scenario
            .tools
            .iter()
            .map(|doc| Route {
                segments: normalized_template(&doc.url_template)
                    .split('/')
                    .skip(1)
                    .map(|s| match s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                        Some(p) => Segment::Param(p.to_string()),
                        None => Segment::Lit(s.to_string()),
                    })
                    .collect(),
                rules: scenario.routes.get(&doc.name).cloned().unwrap_or_default(),
                doc: doc.clone(),
                hits: AtomicU64::new(0),
            })
            .collect();
        Ok(Self {
            scenario,
            routes,
            total: AtomicU64::new(0),
            unmatched: AtomicU64::new(0),
            rate_limited: Mutex::new(HashMap::new()),
        })
    }

    pub fn stats(&self) -> ServiceStats {
        ServiceStats {
            total: self.total.load(Ordering::SeqCst),
            routes: self
                .routes
                .iter()
                .map(|r| (r.doc.name.clone(), r.hits.load(Ordering::SeqCst)))
                .collect(),
            unmatched: self.unmatched.load(Ordering::SeqCst),
        }
    }

    fn find_route(&self, method: &Method, path: &str) -> Option<(&Route, Map<String, Json>)> {
        let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        'routes: for route in &self.routes {
            let wanted = match route.doc.http_method {
                HttpMethod::Get => Method::GET,
                HttpMethod::Post => Method::POST,
            };
            if *method != wanted || parts.len() != route.segments.len() {
                continue;
            }
            let mut params = Map::new();
            for (seg, part) in route.segments.iter().zip(&parts) {
                let decoded = percent_decode_str(part).decode_utf8_lossy().to_string();
                match seg {
                    Segment::Lit(l) if *l == decoded => {}
                    Segment::Lit(_) => continue 'routes,
                    Segment::Param(name) => {
                        let kind = route.doc.param(name).map(|p| p.kind);
                        params.insert(name.clone(), coerce(kind, &decoded));
                    }
                }
            }
            return Some((route, params));
        }
        None
    }

    async fn handle(&self, method: Method, uri: Uri, body: Bytes) -> Response {
        self.total.fetch_add(1, Ordering::SeqCst);
        let Some((route, mut params)) = self.find_route(&method, uri.path()) else {
            self.unmatched.fetch_add(1, Ordering::SeqCst);
            return json_response(
                StatusCode::NOT_FOUND,
                json!({"error": "no such route", "method": method.as_str(), "path": uri.path()}),
            );
        };
        route.hits.fetch_add(1, Ordering::SeqCst);
        if let Some(q) = uri.query() {
            for pair in q.split('&').filter(|p| !p.is_empty()) {
                let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
                let k = decode_query(k);
                let kind = route.doc.param(&k).map(|p| p.kind);
                params.insert(k, coerce(kind, &decode_query(v)));
            }
        }
        if !body.is_empty() {
            match serde_json::from_slice::<Json>(&body) {
                Ok(Json::Object(m)) => params.extend(m),
                _ => {
                    return json_response(
                        StatusCode::BAD_REQUEST,
                        json!({"error": "request body must be a JSON object"}),
                    )
                }
            }
        }
        for p in &route.doc.params {
            if p.required && !params.contains_key(&p.name) {
                return json_response(
                    StatusCode::BAD_REQUEST,
                    json!({"error": format!("missing required parameter '{}'", p.name)}),
                );
            }
        }
        let Some(rule) = route.rules.iter().find(|r| r.matches(&params)) else {
            return json_response(
                StatusCode::NOT_FOUND,
                json!({"error": "no matching record", "tool": route.doc.name, "params": params}),
            );
        };
        if rule.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(rule.latency_ms)).await;
        }
        let rendered = render(&rule.body, &params);
        let status = StatusCode::from_u16(rule.status).unwrap_or(StatusCode::OK);
        match &rule.failure_mode {
            None => json_response(status, rendered),
            Some(FailureMode::Unavailable) => json_response(
                StatusCode::SERVICE_UNAVAILABLE,
                json!({"error": "service unavailable"}),
            ),
            Some(FailureMode::RateLimit { retry_after_s, times }) => {
                let limited = match times {
                    None => true,
                    Some(n) => {
                        let key = format!("{}:{}", route.doc.name, Json::Object(params.clone()));
                        let mut seen = self.rate_limited.lock().expect("rate limit lock");
                        let count = seen.entry(key).or_insert(0);
                        *count += 1;
                        *count <= *n
                    }
                };
                if !limited {
                    return json_response(status, rendered);
                }
                let mut resp = json_response(
                    StatusCode::TOO_MANY_REQUESTS,
                    json!({"error": "rate limited"}),
                );
                resp.headers_mut().insert(
                    header::RETRY_AFTER,
                    HeaderValue::from_str(&retry_after_s.to_string()).expect("digits"),
                );
                resp
            }
            Some(FailureMode::Oversized { size_bytes }) => {
                let text = oversized_body(&rendered, *size_bytes);
                raw_json_response(status, text)
            }
        }
    }
}

fn decode_query(s: &str) -> String {
    percent_decode_str(&s.replace('+', " ")).decode_utf8_lossy().to_string()
}

/// Serialized body of at least `size` bytes with `_padding` first.
pub fn oversized_body(rendered: &Json, size: usize) -> String {
    let rest = match rendered {
        Json::Object(m) => m.clone(),
        Json::Null => Map::new(),
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other.clone());
            m
        }
    };
    let tail = if rest.is_empty() {
        String::new()
    } else {
        let inner = Json::Object(rest).to_string();
        format!(",{}", &inner[1..inner.len() - 1])
    };
    let skeleton = format!("{{\"_padding\":\"\"{tail}}}");
    if size == 0 {
        return Json::Object(match rendered {
            Json::Object(m) => m.clone(),
            _ => Map::new(),
        })
        .to_string();
    }
    let pad = size.saturating_sub(skeleton.len());
    format!("{{\"_padding\":\"{}\"{tail}}}", "x".repeat(pad))
}

fn json_response(status: StatusCode, body: Json) -> Response {
    (status, AxumJson(body)).into_response()
}

fn raw_json_response(status: StatusCode, text: String) -> Response {
    let mut resp = Response::new(Body::from(text));
    *resp.status_mut() = status;
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    resp
}

#[derive(Debug, Deserialize)]
struct ScoreRequest {
    #[serde(default)]
    #[allow(dead_code)]
    query: String,
    #[serde(default)]
    #[allow(dead_code)]
    prefix: Json,
    candidate: String,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route(
            "/docs",
            get(|State(s): State<Arc<ServiceState>>| async move { AxumJson(s.scenario.tools.clone()) }),
        )
        .route(
            "/__stats",
            get(|State(s): State<Arc<ServiceState>>| async move { AxumJson(s.stats()) }),
        )
        .route(
            "/score",
            post(
                |State(s): State<Arc<ServiceState>>, AxumJson(req): AxumJson<ScoreRequest>| async move {
                    AxumJson(s.scenario.prm_scores(&req.candidate))
                },
            ),
        )
        .fallback(
            |State(s): State<Arc<ServiceState>>, method: Method, uri: Uri, body: Bytes| async move {
                s.handle(method, uri, body).await
            },
        )
        .with_state(state)
}

/// Service bound to a port on a background runtime; stops on drop.
pub struct MockToolService {
    addr: SocketAddr,
    state: Arc<ServiceState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockToolService {
    pub fn spawn(scenario: Scenario, bind: SocketAddr) -> Result<Self, ScenarioError> {
        let state = Arc::new(ServiceState::new(scenario)?);
        let listener = std::net::TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::Builder::new()
            .name("mock-tools".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            tracing::error!(error = %e, "mock tool listener");
                            return;
                        }
                    };
                    let server = axum::serve(listener, app).with_graceful_shutdown(async {
                        let _ = rx.await;
                    });
                    if let Err(e) = server.await {
                        tracing::error!(error = %e, "mock tool service stopped");
                    }
                });
            })?;
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Bind an ephemeral local port.
    pub fn spawn_local(scenario: Scenario) -> Result<Self, ScenarioError> {
        Self::spawn(scenario, SocketAddr::from(([127, 0, 0, 1], 0)))
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> ServiceStats {
        self.state.stats()
    }
}

impl Drop for MockToolService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serve until the process is terminated.
pub async fn serve(scenario: Scenario, bind: SocketAddr) -> Result<(), ScenarioError> {
    let state = Arc::new(ServiceState::new(scenario)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "mock tool service listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
