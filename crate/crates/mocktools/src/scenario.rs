//! Declarative tool universe: tool docs plus ordered response rules.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use stepcode_core::{ParamKind, ToolDoc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),

    #[error("scenario file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureMode {
    /// HTTP 429 with a `retry-after` header. With `times` set, only the
    /// first `times` matching requests fail.
    RateLimit {
        #[serde(default = "one")]
        retry_after_s: u64,
        #[serde(default)]
        times: Option<u64>,
    },
    /// HTTP 503.
    Unavailable,
    /// The rendered body padded to at least `size_bytes` serialized bytes.
    /// Padding lives under `_padding` and is written first, so every other
    /// key lands after it.
    Oversized { size_bytes: usize },
}

fn one() -> u64 {
    1
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRule {
    /// Parameter equality predicate; empty matches everything.
    #[serde(default)]
    pub when: BTreeMap<String, Json>,
    #[serde(default = "ok_status")]
    pub status: u16,
    /// JSON template; `"{{name}}"` strings are replaced by parameter values.
    #[serde(default)]
    pub body: Json,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub failure_mode: Option<FailureMode>,
}

impl ResponseRule {
    pub fn ok(body: Json) -> Self {
        Self {
            when: BTreeMap::new(),
            status: 200,
            body,
            latency_ms: 0,
            failure_mode: None,
        }
    }

    pub fn when(mut self, param: &str, value: impl Into<Json>) -> Self {
        self.when.insert(param.to_string(), value.into());
        self
    }

    pub fn status(mut self, status: u16) -> Self {
        self.status = status;
        self
    }

    pub fn failing(mut self, mode: FailureMode) -> Self {
        self.failure_mode = Some(mode);
        self
    }

    pub fn matches(&self, params: &Map<String, Json>) -> bool {
        self.when.iter().all(|(k, expected)| {
            params.get(k).is_some_and(|v| {
                v == expected || (!v.is_string() && expected.as_str() == Some(v.to_string().as_str()))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrmScores {
    pub s_yes: f64,
    pub s_no: f64,
}

impl Default for PrmScores {
    fn default() -> Self {
        Self {
            s_yes: 1.0,
            s_no: 1.0,
        }
    }
}

/// Scores returned by the mock PRM when `candidate` contains `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmRule {
    pub contains: String,
    #[serde(flatten)]
    pub scores: PrmScores,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tools: Vec<ToolDoc>,
    /// Tool name to ordered rules; the first matching rule answers.
    pub routes: BTreeMap<String, Vec<ResponseRule>>,
    #[serde(default)]
    pub prm: Vec<PrmRule>,
    #[serde(default)]
    pub prm_default: PrmScores,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn add_tool(&mut self, doc: ToolDoc, rules: Vec<ResponseRule>) {
        self.routes.insert(doc.name.clone(), rules);
        self.tools.push(doc);
    }

    /// Merge another scenario's tools and routes; names must not collide.
    pub fn merge(&mut self, other: Scenario) -> Result<(), ScenarioError> {
        for doc in other.tools {
            if self.tools.iter().any(|d| d.name == doc.name) {
                if self.tools.contains(&doc) && self.routes.get(&doc.name) == other.routes.get(&doc.name) {
                    continue;
                }
                return Err(ScenarioError::Invalid(format!("tool '{}' defined twice", doc.name)));
            }
            let rules = other.routes.get(&doc.name).cloned().unwrap_or_default();
            self.add_tool(doc, rules);
        }
        self.prm.extend(other.prm);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let mut names = HashSet::new();
        let mut shapes = HashSet::new();
        for doc in &self.tools {
            if !names.insert(doc.name.as_str()) {
                return bad(format!("tool '{}' defined twice", doc.name));
            }
            let shape = (doc.http_method, route_shape(&doc.url_template));
            if !shapes.insert(shape.clone()) {
                return bad(format!(
                    "tool '{}' shares route {} {} with another tool",
                    doc.name,
                    doc.http_method.as_str(),
                    shape.1
                ));
            }
            if is_reserved(&normalized_template(&doc.url_template)) {
                return bad(format!("tool '{}' uses a reserved path", doc.name));
            }
            for ph in doc.placeholders() {
                if doc.param(ph).is_none() {
                    return bad(format!("tool '{}' has undeclared placeholder '{ph}'", doc.name));
                }
            }
            match self.routes.get(&doc.name) {
                Some(rules) if !rules.is_empty() => {}
                _ => return bad(format!("tool '{}' has no response rules", doc.name)),
            }
        }
        for name in self.routes.keys() {
            if !names.contains(name.as_str()) {
                return bad(format!("route '{name}' has no tool doc"));
            }
        }
        for r in &self.prm {
            check_scores(&r.scores)?;
        }
        check_scores(&self.prm_default)
    }

    pub fn prm_scores(&self, candidate: &str) -> PrmScores {
        self.prm
            .iter()
            .find(|r| candidate.contains(&r.contains))
            .map(|r| r.scores)
            .unwrap_or(self.prm_default)
    }
}

fn check_scores(s: &PrmScores) -> Result<(), ScenarioError> {
    if s.s_yes < 0.0 || s.s_no < 0.0 || !s.s_yes.is_finite() || !s.s_no.is_finite() {
        return Err(ScenarioError::Invalid(format!(
            "PRM scores must be finite and nonnegative, got ({}, {})",
            s.s_yes, s.s_no
        )));
    }
    Ok(())
}

pub(crate) const RESERVED: [&str; 3] = ["/docs", "/__stats", "/score"];

pub(crate) fn is_reserved(path: &str) -> bool {
    RESERVED.contains(&path)
}

pub(crate) fn normalized_template(t: &str) -> String {
    if t.starts_with('/') {
        t.to_string()
    } else {
        format!("/{t}")
    }
}

fn route_shape(template: &str) -> String {
    normalized_template(template)
        .split('/')
        .map(|seg| if seg.starts_with('{') && seg.ends_with('}') { "{}" } else { seg })
        .collect::<Vec<_>>()
        .join("/")
}

/// Convert a raw textual parameter to the documented type when possible.
pub(crate) fn coerce(kind: Option<ParamKind>, raw: &str) -> Json {
    match kind {
        Some(ParamKind::Integer) => raw.parse::<i64>().map(Json::from).unwrap_or_else(|_| raw.into()),
        Some(ParamKind::Number) => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Json::Number)
            .unwrap_or_else(|| raw.into()),
        Some(ParamKind::Boolean) => match raw {
            "true" => Json::Bool(true),
            "false" => Json::Bool(false),
            _ => raw.into(),
        },
        Some(ParamKind::Array) => serde_json::from_str(raw).unwrap_or_else(|_| raw.into()),
        Some(ParamKind::String) | None => raw.into(),
    }
}

/// Render a body template against request parameters.
pub fn render(template: &Json, params: &Map<String, Json>) -> Json {
    match template {
        Json::String(s) => {
            if let Some(name) = s.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")) {
                if !name.contains("{{") {
                    return params.get(name.trim()).cloned().unwrap_or(Json::Null);
                }
            }
            let mut out = s.clone();
            for (k, v) in params {
                let needle = format!("{{{{{k}}}}}");
                if out.contains(&needle) {
                    let text = match v {
                        Json::String(t) => t.clone(),
                        other => other.to_string(),
                    };
                    out = out.replace(&needle, &text);
                }
            }
            Json::String(out)
        }
        Json::Array(items) => Json::Array(items.iter().map(|i| render(i, params)).collect()),
        Json::Object(m) => Json::Object(m.iter().map(|(k, v)| (k.clone(), render(v, params))).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use stepcode_core::{HttpMethod, ParamSpec};

    pub(crate) fn weather_doc() -> ToolDoc {
        ToolDoc {
            name: "weather".into(),
            description: "Current weather for a city".into(),
            category: "geo".into(),
            http_method: HttpMethod::Get,
            url_template: "/weather/{city}".into(),
            params: vec![ParamSpec {
                name: "city".into(),
                kind: ParamKind::String,
                required: true,
                description: String::new(),
            }],
        }
    }

    #[test]
    fn templates_render_typed_and_inline_values() {
        let params: Map<String, Json> = serde_json::from_value(json!({"city": "Rome", "n": 3})).unwrap();
        let body = render(
            &json!({"city": "{{city}}", "n": "{{n}}", "text": "{{city}} x{{n}}", "missing": "{{zzz}}", "list": ["{{n}}"]}),
            &params,
        );
        assert_eq!(
            body,
            json!({"city": "Rome", "n": 3, "text": "Rome x3", "missing": null, "list": [3]})
        );
    }

    #[test]
    fn rules_match_on_params() {
        let params: Map<String, Json> = serde_json::from_value(json!({"city": "Rome", "n": 3})).unwrap();
        assert!(ResponseRule::ok(json!({})).matches(&params));
        assert!(ResponseRule::ok(json!({})).when("city", "Rome").matches(&params));
        assert!(!ResponseRule::ok(json!({})).when("city", "Oslo").matches(&params));
        assert!(ResponseRule::ok(json!({})).when("n", 3).matches(&params));
        assert!(ResponseRule::ok(json!({})).when("n", "3").matches(&params));
        assert!(!ResponseRule::ok(json!({})).when("q", 1).matches(&params));
    }

    #[test]
    fn validation_catches_structural_errors() {
        let mut s = Scenario::default();
        s.add_tool(weather_doc(), vec![ResponseRule::ok(json!({}))]);
        s.validate().unwrap();

        let mut dup = s.clone();
        dup.tools.push(weather_doc());
        assert!(dup.validate().is_err());

        let mut orphan = s.clone();
        orphan.routes.insert("ghost".into(), vec![ResponseRule::ok(json!({}))]);
        assert!(orphan.validate().is_err());

        let mut empty = s.clone();
        empty.routes.insert("weather".into(), vec![]);
        assert!(empty.validate().is_err());

        let mut shadow = s.clone();
        let mut other = weather_doc();
        other.name = "weather2".into();
        other.url_template = "/weather/{town}".into();
        other.params[0].name = "town".into();
        shadow.add_tool(other, vec![ResponseRule::ok(json!({}))]);
        assert!(shadow.validate().is_err());

        let mut reserved = Scenario::default();
        let mut d = weather_doc();
        d.url_template = "/docs".into();
        d.params.clear();
        reserved.add_tool(d, vec![ResponseRule::ok(json!({}))]);
        assert!(reserved.validate().is_err());

        let mut neg = s.clone();
        neg.prm_default = PrmScores { s_yes: -1.0, s_no: 1.0 };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn scenario_json_round_trip() {
        let mut s = Scenario::default();
        s.add_tool(
            weather_doc(),
            vec![
                ResponseRule::ok(json!({"temp": 20})).when("city", "Rome"),
                ResponseRule::ok(json!({})).failing(FailureMode::RateLimit {
                    retry_after_s: 1,
                    times: Some(2),
                }),
            ],
        );
        s.prm.push(PrmRule {
            contains: "weather".into(),
            scores: PrmScores { s_yes: 3.0, s_no: 1.0 },
        });
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.prm_scores("call weather"), PrmScores { s_yes: 3.0, s_no: 1.0 });
        assert_eq!(back.prm_scores("other"), PrmScores::default());
    }

    #[test]
    fn coercion_follows_param_kinds() {
        assert_eq!(coerce(Some(ParamKind::Integer), "12"), json!(12));
        assert_eq!(coerce(Some(ParamKind::Integer), "x"), json!("x"));
        assert_eq!(coerce(Some(ParamKind::Number), "1.5"), json!(1.5));
        assert_eq!(coerce(Some(ParamKind::Boolean), "true"), json!(true));
        assert_eq!(coerce(Some(ParamKind::Array), "[1,2]"), json!([1, 2]));
        assert_eq!(coerce(None, "7"), json!("7"));
    }
}
