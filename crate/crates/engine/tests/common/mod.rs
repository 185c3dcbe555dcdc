#![allow(dead_code)]

use serde_json::json;
use stepcode_core::judge::MockJudge;
use stepcode_core::{AnswerOracle, HttpMethod, ParamKind, ParamSpec, Task, ToolDoc};
use stepcode_engine::{AnswerComposer, Runtime, ScriptBook, ScriptedPolicy};
use stepcode_exec::{Gateway, GatewayConfig, ProxyConfig};
use stepcode_mocktools::{MockToolService, PrmRule, PrmScores, ResponseRule, Scenario};

pub const ANSWER: &str = "zebra42";

pub fn text(thought: &str, code: &str) -> String {
    format!("{thought}\n```python\n{code}\n```")
}

pub fn weather_tool() -> ToolDoc {
    ToolDoc {
        name: "weather".into(),
        description: "current weather for a city".into(),
        category: "test".into(),
        http_method: HttpMethod::Get,
        url_template: "/weather/{city}".into(),
        params: vec![ParamSpec {
            name: "city".into(),
            kind: ParamKind::String,
            required: true,
            description: "city name".into(),
        }],
    }
}

pub fn task(id: &str, max_depth: u32) -> Task {
    Task {
        id: id.into(),
        query: "What is the secret word?".into(),
        toolset: vec![weather_tool()],
        oracle: Some(AnswerOracle::requiring([ANSWER])),
        max_depth,
    }
}

pub fn scenario() -> Scenario {
    let mut s = Scenario::default();
    s.add_tool(
        weather_tool(),
        vec![ResponseRule::ok(json!({"city": "{{city}}", "temp": 21, "word": ANSWER}))],
    );
    s.prm.push(PrmRule {
        contains: "# shortcut".into(),
        scores: PrmScores { s_yes: 9.0, s_no: 1.0 },
    });
    s
}

pub fn gateway(upstream: &str) -> Gateway {
    Gateway::new(GatewayConfig {
        workers: 4,
        proxy: ProxyConfig {
            upstream: upstream.into(),
            ..ProxyConfig::default()
        },
        ..GatewayConfig::default()
    })
    .unwrap()
}

pub fn offline_gateway() -> Gateway {
    gateway("http://127.0.0.1:9")
}

pub struct Rig {
    pub gateway: Gateway,
    pub policy: ScriptedPolicy,
    pub judge: MockJudge,
    pub composer: AnswerComposer,
    pub service: Option<MockToolService>,
}

impl Rig {
    pub fn offline(book: ScriptBook) -> Self {
        Self {
            gateway: offline_gateway(),
            policy: ScriptedPolicy::new(book),
            judge: MockJudge::new(),
            composer: AnswerComposer::Concatenate,
            service: None,
        }
    }

    pub fn with_service(book: ScriptBook) -> Self {
        let service = MockToolService::spawn_local(scenario()).unwrap();
        Self {
            gateway: gateway(&service.url()),
            policy: ScriptedPolicy::new(book),
            judge: MockJudge::new(),
            composer: AnswerComposer::Concatenate,
            service: Some(service),
        }
    }

    pub fn runtime(&self) -> Runtime<'_> {
        Runtime::new(&self.policy, &self.gateway, &self.judge, &self.composer)
    }
}

/// Binary continuation tree used to script rollouts.
#[derive(Debug, Clone)]
pub enum Node {
    Continue { ok: bool, children: Box<[Node; 2]> },
    Final { correct: bool },
}

impl Node {
    pub fn code(&self, path: &str) -> String {
        match self {
            Node::Continue { ok: true, .. } => format!("v_{path} = len('{path}')\nprint('at', '{path}')"),
            Node::Continue { ok: false, .. } => format!("print('trying {path}')\nraise ValueError('{path}')"),
            Node::Final { correct: true } => format!("print('FINAL ANSWER: {ANSWER}')  # {path}"),
            Node::Final { correct: false } => format!("print('FINAL ANSWER: nothing')  # {path}"),
        }
    }

    pub fn children(&self) -> Option<&[Node; 2]> {
        match self {
            Node::Continue { children, .. } => Some(children),
            Node::Final { .. } => None,
        }
    }
}

/// Script `roots` as the first step of `task_id` and every continuation
/// below them.
pub fn script_tree(book: &mut ScriptBook, task_id: &str, roots: &[Node; 2]) {
    script_tree_at(book, task_id, &[], roots);
}

/// Like [`script_tree`], with `roots` offered after the committed `base`.
pub fn script_tree_at(book: &mut ScriptBook, task_id: &str, base: &[String], roots: &[Node; 2]) {
    fn walk(book: &mut ScriptBook, task_id: &str, prefix: &mut Vec<String>, nodes: &[Node; 2], path: &str) {
        let texts = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| text(&format!("thought {path}{i}"), &n.code(&format!("{path}{i}"))))
            .collect();
        book.insert(task_id, prefix, texts);
        for (i, n) in nodes.iter().enumerate() {
            if let Some(children) = n.children() {
                prefix.push(n.code(&format!("{path}{i}")));
                walk(book, task_id, prefix, children, &format!("{path}{i}"));
                prefix.pop();
            }
        }
    }
    walk(book, task_id, &mut base.to_vec(), roots, "p");
}
