//! Reward-guided stepwise code generation.
//!
//! A policy backend proposes candidate code steps, each candidate runs on
//! a fork of the committed session, and the candidate with the highest
//! on-the-spot plus latent reward is committed. The same machinery drives
//! Monte Carlo latent estimation and process-tree data collection.

pub mod answer;
pub mod engine;
pub mod error;
pub mod policy;
pub mod prompt;
pub mod rollout;
pub mod runtime;
pub mod scorer;
pub mod tree;

pub use answer::{compose_final_answer, AnswerComposer};
pub use engine::{apply_ablation, run_task, run_task_recorded, EngineConfig, LatentMode};
pub use error::EngineError;
pub use policy::{parse_step, sample_candidates, PolicyBackend, RemotePolicy, ScriptBook, ScriptedPolicy};
pub use prompt::{assemble_prompt, HistoryEntry, PromptBundle, DEFAULT_SENTINEL};
pub use rollout::{estimate_latent_by_rollout, RolloutConfig, RolloutMode, RolloutOutcome};
pub use runtime::{Runtime, Session};
pub use scorer::{ConstantScorer, LatentScorer, PrmRemoteScorer, RolloutScorer, ScoreRequest};
pub use tree::{collect_tree, emit_jsonl, label_pairs, load_jsonl, PrmPair, ProcessTree};
