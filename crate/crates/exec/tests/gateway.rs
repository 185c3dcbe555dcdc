use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::json;
use stepcode_core::{ExecStatus, HttpMethod, ParamKind, ParamSpec, Task, ToolDoc};
use stepcode_exec::{Clock, Gateway, GatewayConfig, GatewayError, ProxyConfig, RunnerSpec};
use stepcode_mocktools::{FailureMode, MockToolService, ResponseRule, Scenario};

fn tool(name: &str, template: &str, params: &[(&str, ParamKind)]) -> ToolDoc {
    ToolDoc {
        name: name.into(),
        description: format!("{name} lookup"),
        category: "test".into(),
        http_method: HttpMethod::Get,
        url_template: template.into(),
        params: params
            .iter()
            .map(|(n, k)| ParamSpec {
                name: (*n).into(),
                kind: *k,
                required: true,
                description: String::new(),
            })
            .collect(),
    }
}

fn scenario() -> Scenario {
    let mut s = Scenario::default();
    s.add_tool(
        tool("weather", "/weather/{city}", &[("city", ParamKind::String)]),
        vec![ResponseRule::ok(json!({"city": "{{city}}", "temp": 18}))],
    );
    s.add_tool(
        tool("busy", "/busy", &[]),
        vec![ResponseRule::ok(json!({"ok": 1})).failing(FailureMode::RateLimit {
            retry_after_s: 0,
            times: Some(1),
        })],
    );
    s.add_tool(
        tool("down", "/down", &[]),
        vec![ResponseRule::ok(json!({})).failing(FailureMode::Unavailable)],
    );
    s
}

fn task(svc_tools: &[ToolDoc]) -> Task {
    Task {
        id: "t1".into(),
        query: "What is the weather?".into(),
        toolset: svc_tools.to_vec(),
        oracle: None,
        max_depth: 8,
    }
}

fn gateway(upstream: &str) -> Gateway {
    Gateway::new(GatewayConfig {
        workers: 2,
        proxy: ProxyConfig {
            upstream: upstream.into(),
            max_retries: 2,
            max_retry_wait_ms: 50,
            ..ProxyConfig::default()
        },
        ..GatewayConfig::default()
    })
    .unwrap()
}

fn offline() -> (Gateway, Task) {
    (gateway("http://127.0.0.1:9"), task(&scenario().tools))
}

#[test]
fn persistence_and_isolation() {
    let (gw, t) = offline();
    let a = gw.open_session(&t).unwrap();
    let b = gw.open_session(&t).unwrap();
    assert_eq!(gw.exec_step(&a, "x = 1", 1_000).unwrap().status, ExecStatus::Success);
    let r = gw.exec_step(&a, "print(x)", 1_000).unwrap();
    assert_eq!(r.stdout, "1\n");
    let r = gw.exec_step(&b, "print(x)", 1_000).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.stderr.contains("NameError"));
}

#[test]
fn statuses_for_success_error_and_timeout() {
    let (gw, t) = offline();
    let s = gw.open_session(&t).unwrap();
    let r = gw.exec_step(&s, "print(2+3)", 1_000).unwrap();
    assert_eq!((r.status, r.stdout.as_str()), (ExecStatus::Success, "5\n"));
    let r = gw.exec_step(&s, "1/0", 1_000).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.stderr.contains("ZeroDivisionError"));
    let r = gw.exec_step(&s, "while True: pass", 500).unwrap();
    assert_eq!(r.status, ExecStatus::Timeout);
    // still serving after a timeout
    assert_eq!(gw.exec_step(&s, "print('alive')", 500).unwrap().stdout, "alive\n");
}

#[test]
fn large_stdout_is_not_truncated() {
    let (gw, t) = offline();
    let s = gw.open_session(&t).unwrap();
    for n in [65_536usize, 1 << 20] {
        let r = gw.exec_step(&s, &format!("print('y' * {n}, end='')"), 10_000).unwrap();
        assert_eq!(r.stdout.len(), n);
    }
}

#[test]
fn fork_replays_committed_prefix_only() {
    let (gw, t) = offline();
    let mut parent = gw.open_session(&t).unwrap();
    let empty_fork = gw.fork_session(&parent).unwrap();
    assert!(empty_fork.committed_prefix.is_empty());
    assert_eq!(gw.exec_step(&empty_fork, "print(1)", 100).unwrap().stdout, "1\n");

    gw.exec_step(&parent, "x = 1", 100).unwrap();
    parent.commit("x = 1");
    // executed but never committed: must not reach forks
    gw.exec_step(&parent, "y = 2", 100).unwrap();
    let fork = gw.fork_session(&parent).unwrap();
    assert_eq!(fork.committed_prefix, parent.committed_prefix);
    assert_eq!(gw.exec_step(&fork, "print(x)", 100).unwrap().stdout, "1\n");
    assert_eq!(gw.exec_step(&fork, "print(y)", 100).unwrap().status, ExecStatus::RuntimeError);
    // forks never dirty the parent
    gw.exec_step(&fork, "x = 99", 100).unwrap();
    assert_eq!(gw.exec_step(&parent, "print(x)", 100).unwrap().stdout, "1\n");
}

#[test]
fn replay_divergence_is_reported_and_cleaned_up() {
    let (gw, t) = offline();
    let mut parent = gw.open_session(&t).unwrap();
    parent.commit("raise ValueError('x')");
    let before = gw.open_sessions();
    let err = gw.fork_session(&parent).unwrap_err();
    assert!(matches!(err, GatewayError::ReplayDivergence { step: 0, .. }), "{err}");
    assert_eq!(gw.open_sessions(), before);
}

#[test]
fn closed_sessions_are_gone() {
    let (gw, t) = offline();
    let s = gw.open_session(&t).unwrap();
    gw.close_session(&s).unwrap();
    assert!(matches!(gw.exec_step(&s, "1", 100), Err(GatewayError::NoSuchSession(_))));
    assert!(matches!(gw.close_session(&s), Err(GatewayError::NoSuchSession(_))));
}

#[test]
fn tool_calls_are_cached_and_forks_replay_from_cache() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let gw = gateway(&svc.url());
    let t = task(&scenario().tools);
    let mut parent = gw.open_session(&t).unwrap();
    let code = "w = call_tool('weather', {'city': 'Rome'})\nprint(w['temp'])";
    let r = gw.exec_step(&parent, code, 1_000).unwrap();
    assert_eq!(r.stdout, "18\n", "{}", r.stderr);
    assert_eq!(r.tool_calls.len(), 1);
    assert_eq!(svc.stats().routes["weather"], 1);
    parent.commit(code);

    let hits_before = gw.cache_stats().hits;
    let upstream_before = svc.stats().total;
    let fork = gw.fork_session(&parent).unwrap();
    assert_eq!(svc.stats().total, upstream_before, "fork must not reach upstream");
    assert_eq!(gw.cache_stats().hits, hits_before + 1);
    let probe = "print(w, sorted(w))";
    let a = gw.exec_step(&parent, probe, 1_000).unwrap();
    let b = gw.exec_step(&fork, probe, 1_000).unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert!(b.tool_calls.is_empty());

    // identical call from a sibling session: no upstream traffic, same hash
    let other = gw.open_session(&t).unwrap();
    let r2 = gw.exec_step(&other, code, 1_000).unwrap();
    assert_eq!(r2.stdout, r.stdout);
    assert_eq!(r2.tool_calls, r.tool_calls);
    assert_eq!(svc.stats().routes["weather"], 1);
}

#[test]
fn tool_failures_are_catchable_and_fail_the_step_otherwise() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let gw = gateway(&svc.url());
    let t = task(&scenario().tools);
    let s = gw.open_session(&t).unwrap();

    let r = gw.exec_step(&s, "call_tool('teleport', {})", 1_000).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.stderr.contains("UnknownToolError"));

    let r = gw.exec_step(&s, "call_tool('weather', {})", 1_000).unwrap();
    assert!(r.stderr.contains("ToolParamError"), "{}", r.stderr);

    let code = "try:\n    call_tool('down')\nexcept ToolHTTPError as e:\n    print('caught', str(e)[:8])";
    let r = gw.exec_step(&s, code, 1_000).unwrap();
    assert_eq!(r.stdout, "caught HTTP 503\n", "{}", r.stderr);

    // one 429 then success; the proxy retries transparently
    let r = gw.exec_step(&s, "print(call_tool('busy'))", 1_000).unwrap();
    assert_eq!(r.stdout, "{'ok': 1}\n", "{}", r.stderr);
    assert_eq!(svc.stats().routes["busy"], 2);
}

fn runner_binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_stepcode-fake-runner"))
}

#[test]
fn child_process_runner_over_stdio() {
    let svc = MockToolService::spawn_local(scenario()).unwrap();
    let gw = Gateway::new(GatewayConfig {
        workers: 2,
        runner: RunnerSpec::Command {
            program: runner_binary(),
            args: vec![],
        },
        proxy: ProxyConfig {
            upstream: svc.url(),
            ..ProxyConfig::default()
        },
        ..GatewayConfig::default()
    })
    .unwrap();
    let t = task(&scenario().tools);
    let mut s = gw.open_session(&t).unwrap();
    assert_eq!(gw.exec_step(&s, "x = 41", 1_000).unwrap().status, ExecStatus::Success);
    s.commit("x = 41");
    assert_eq!(gw.exec_step(&s, "print(x + 1)", 1_000).unwrap().stdout, "42\n");
    let code = "print(call_tool('weather', city='Oslo')['city'])";
    let r = gw.exec_step(&s, code, 1_000).unwrap();
    assert_eq!(r.stdout, "Oslo\n", "{}", r.stderr);
    assert_eq!(r.tool_calls.len(), 1);
    let f = gw.fork_session(&s).unwrap();
    assert_eq!(gw.exec_step(&f, "print(x)", 1_000).unwrap().stdout, "41\n");
    let r = gw.exec_step(&s, "print('z' * 1048576, end='')", 10_000).unwrap();
    assert_eq!(r.stdout.len(), 1 << 20);
}

#[test]
fn missing_runner_is_unavailable() {
    let err = Gateway::new(GatewayConfig {
        runner: RunnerSpec::Command {
            program: "/nonexistent/runner".into(),
            args: vec![],
        },
        ..GatewayConfig::default()
    })
    .unwrap_err();
    assert!(matches!(err, GatewayError::RunnerUnavailable(_)));
}

#[test]
fn wall_clock_runner_interrupts() {
    let gw = Gateway::new(GatewayConfig {
        workers: 1,
        runner: RunnerSpec::InProcess { clock: Clock::Wall },
        ..GatewayConfig::default()
    })
    .unwrap();
    let s = gw.open_session(&task(&[])).unwrap();
    let started = std::time::Instant::now();
    assert_eq!(gw.exec_step(&s, "while True: pass", 200).unwrap().status, ExecStatus::Timeout);
    assert!(started.elapsed().as_millis() < 2_000);
}

fn stmt() -> impl Strategy<Value = String> {
    let var = prop::sample::select(vec!["a", "b", "c", "d"]);
    prop_oneof![
        (var.clone(), -50i64..50).prop_map(|(v, n)| format!("{v} = {n}")),
        (var.clone(), var.clone()).prop_map(|(v, w)| format!("{v} = globals_list + [{w}] if '{w}' in names() else [{v}]")),
        var.clone().prop_map(|v| format!("hist.append('{v}')")),
        (var.clone(), 1i64..5).prop_map(|(v, k)| format!("{v} = [i * {k} for i in range(4)]")),
        (var, 0i64..3).prop_map(|(v, k)| format!("book['{v}'] = {k}")),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn forks_match_parents(prefix in prop::collection::vec(stmt(), 0..6)) {
        let (gw, t) = offline();
        let mut parent = gw.open_session(&t).unwrap();
        let setup = "hist = []\nbook = {}\nglobals_list = []\ndef names():\n    return [k for k in ['a', 'b', 'c', 'd'] if k in book]";
        gw.exec_step(&parent, setup, 1_000).unwrap();
        parent.commit(setup);
        for code in &prefix {
            let r = gw.exec_step(&parent, code, 1_000).unwrap();
            if r.status == ExecStatus::Success {
                parent.commit(code.clone());
            }
        }
        let fork = gw.fork_session(&parent).unwrap();
        let probe: String = ["a", "b", "c", "d", "hist", "book"]
            .iter()
            .map(|v| format!("try:\n    print('{v}', repr({v}))\nexcept NameError:\n    print('{v}', '-')\n"))
            .collect();
        let a = gw.exec_step(&parent, &probe, 1_000).unwrap();
        let b = gw.exec_step(&fork, &probe, 1_000).unwrap();
        prop_assert_eq!(a.status, ExecStatus::Success);
        prop_assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn failed_commits_replay_with_their_partial_effects() {
    let (gw, t) = offline();
    let mut parent = gw.open_session(&t).unwrap();
    let code = "a = 1\nb = missing_name\nc = 3";
    let r = gw.exec_step(&parent, code, 1_000).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    parent.commit_outcome(code, r.status, 1_000);
    let spin = "n = 0\nwhile True:\n    n += 1";
    let r = gw.exec_step(&parent, spin, 50).unwrap();
    assert_eq!(r.status, ExecStatus::Timeout);
    parent.commit_outcome(spin, r.status, 50);
    let fork = gw.fork_session(&parent).unwrap();
    let a = gw.exec_step(&parent, "print(a, n)", 100).unwrap();
    let b = gw.exec_step(&fork, "print(a, n)", 100).unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(gw.exec_step(&fork, "print(c)", 100).unwrap().status, ExecStatus::RuntimeError);
}
