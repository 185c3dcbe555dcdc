use serde_json::{json, Value};
use stepcode_core::{HttpMethod, ParamKind, ParamSpec, ToolDoc};
use stepcode_mocktools::{FailureMode, MockToolService, PrmRule, PrmScores, ResponseRule, Scenario};

fn param(name: &str, kind: ParamKind, required: bool) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        kind,
        required,
        description: String::new(),
    }
}

fn doc(name: &str, method: HttpMethod, template: &str, params: Vec<ParamSpec>) -> ToolDoc {
    ToolDoc {
        name: name.into(),
        description: format!("{name} tool"),
        category: "test".into(),
        http_method: method,
        url_template: template.into(),
        params,
    }
}

fn scenario() -> Scenario {
    let mut s = Scenario::default();
    s.add_tool(
        doc("weather", HttpMethod::Get, "/weather/{city}", vec![param("city", ParamKind::String, true), param("days", ParamKind::Integer, false)]),
        vec![
            ResponseRule::ok(json!({"city": "{{city}}", "temp": 21, "days": "{{days}}"})).when("city", "Rome"),
            ResponseRule::ok(json!({"error": "unknown city {{city}}"})).status(404),
        ],
    );
    s.add_tool(
        doc("convert", HttpMethod::Post, "/convert", vec![param("amount", ParamKind::Number, true)]),
        vec![ResponseRule::ok(json!({"converted": "{{amount}}"}))],
    );
    s.add_tool(
        doc("busy", HttpMethod::Get, "/busy", vec![]),
        vec![ResponseRule::ok(json!({"ok": true})).failing(FailureMode::RateLimit { retry_after_s: 2, times: Some(1) })],
    );
    s.add_tool(
        doc("down", HttpMethod::Get, "/down", vec![]),
        vec![ResponseRule::ok(json!({})).failing(FailureMode::Unavailable)],
    );
    s.add_tool(
        doc("big", HttpMethod::Get, "/big", vec![param("size", ParamKind::Integer, false)]),
        vec![
            ResponseRule::ok(json!({"answer": "needle-42"})).when("size", 0).failing(FailureMode::Oversized { size_bytes: 0 }),
            ResponseRule::ok(json!({"answer": "needle-42"})).failing(FailureMode::Oversized { size_bytes: 65_536 }),
        ],
    );
    s.prm.push(PrmRule {
        contains: "weather".into(),
        scores: PrmScores { s_yes: 3.0, s_no: 1.0 },
    });
    s
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn get(svc: &MockToolService, path: &str) -> (u16, Option<String>, String) {
    let mut r = agent().get(&format!("{}{path}", svc.url())).call().unwrap();
    let retry = r.headers().get("retry-after").map(|v| v.to_str().unwrap().to_string());
    (r.status().as_u16(), retry, r.body_mut().read_to_string().unwrap())
}

#[test]
fn docs_and_routes() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let (status, _, body) = get(&svc, "/docs");
    assert_eq!(status, 200);
    let docs: Vec<ToolDoc> = serde_json::from_str(&body).unwrap();
    assert_eq!(docs.len(), 5);

    let (status, _, body) = get(&svc, "/weather/Rome?days=3");
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"city": "Rome", "temp": 21, "days": 3}));
    let (status, _, body) = get(&svc, "/weather/Oslo");
    assert_eq!(status, 404);
    assert!(body.contains("unknown city Oslo"));
    let (status, _, _) = get(&svc, "/nowhere");
    assert_eq!(status, 404);

    let mut r = agent()
        .post(&format!("{}/convert", svc.url()))
        .send_json(json!({"amount": 2.5}))
        .unwrap();
    assert_eq!(r.body_mut().read_json::<Value>().unwrap(), json!({"converted": 2.5}));
}

#[test]
fn identical_requests_give_identical_bodies_and_are_counted() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let a = get(&svc, "/weather/Rome");
    let b = get(&svc, "/weather/Rome");
    assert_eq!(a, b);
    get(&svc, "/docs");
    get(&svc, "/missing");
    let stats = svc.stats();
    assert_eq!(stats.routes["weather"], 2);
    assert_eq!(stats.unmatched, 1);
    assert_eq!(stats.total, 3);
    let (_, _, body) = get(&svc, "/__stats");
    let over_http: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(over_http["total"], 3);
    assert_eq!(stats.total, stats.routes.values().sum::<u64>() + stats.unmatched);
}

#[test]
fn failure_modes() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let (status, retry, _) = get(&svc, "/busy");
    assert_eq!((status, retry.as_deref()), (429, Some("2")));
    let (status, retry, _) = get(&svc, "/busy");
    assert_eq!((status, retry), (200, None));
    let (status, _, _) = get(&svc, "/down");
    assert_eq!(status, 503);
}

#[test]
fn oversized_payload_places_the_answer_late() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let (status, _, body) = get(&svc, "/big");
    assert_eq!(status, 200);
    assert!(body.len() >= 65_536);
    let at = body.find("needle-42").unwrap();
    assert!(at > 2_048);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["answer"], "needle-42");
    let (_, _, body) = get(&svc, "/big?size=0");
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap(), json!({"answer": "needle-42"}));
}

#[test]
fn prm_scores_follow_scenario() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let score = |candidate: &str| -> Value {
        agent()
            .post(&format!("{}/score", svc.url()))
            .send_json(json!({"query": "q", "prefix": [], "candidate": candidate}))
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap()
    };
    assert_eq!(score("call_tool('weather')"), json!({"s_yes": 3.0, "s_no": 1.0}));
    assert_eq!(score("print(1)"), json!({"s_yes": 1.0, "s_no": 1.0}));
}

#[test]
fn port_in_use_is_an_error() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    assert!(MockToolService::spawn(scenario(), svc.addr()).is_err());
}
