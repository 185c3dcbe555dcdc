//! Deterministic HTTP tool universe for offline runs: tool docs, rule-based
//! responses, failure injection, request counters and a mock PRM scorer.

pub mod scenario;
pub mod service;

pub use scenario::{FailureMode, PrmRule, PrmScores, ResponseRule, Scenario, ScenarioError};
pub use service::{oversized_body, MockToolService, ServiceStats};
