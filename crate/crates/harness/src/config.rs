//! The single JSON config file. Every field has a default, so `{}` is a
//! valid config; API keys are only ever read from environment variables
//! named in the endpoint specs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepcode_core::chat::ChatEndpoint;
use stepcode_engine::EngineConfig;
use stepcode_exec::GatewayConfig;

use crate::error::{HarnessError, Result};
use crate::jsonmode::DEFAULT_TRUNCATION_BYTES;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    /// Scripted backend; scripts come from `path` or else from the suite.
    #[default]
    Scripted,
    ScriptedFile { path: PathBuf },
    Remote { endpoint: ChatEndpoint },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeConfig {
    #[default]
    Mock,
    Remote { endpoint: ChatEndpoint },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComposerConfig {
    #[default]
    Concatenate,
    Remote { endpoint: ChatEndpoint },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    /// `builtin:<name>` or a suite bundle path.
    pub suite: String,
    /// Scenario file replacing the suite's own scenario.
    pub scenario: Option<PathBuf>,
    /// Tool service base URL. Unset: serve the scenario locally.
    pub tool_service: Option<String>,
    /// PRM scoring base URL. Unset: the local mock service, if any.
    pub prm_url: Option<String>,
    pub prm_timeout_ms: u64,
    pub engine: EngineConfig,
    pub gateway: GatewayConfig,
    pub policy: PolicyConfig,
    pub judge: JudgeConfig,
    pub composer: ComposerConfig,
    /// Tasks run concurrently; 1 runs them in order.
    pub workers: usize,
    /// Observation budget of the JSON-mode baseline, in bytes.
    pub json_truncation_bytes: usize,
    /// Depth cap of the data-collection tree.
    pub tree_depth_cap: usize,
    pub out: PathBuf,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            suite: "builtin:selection".into(),
            scenario: None,
            tool_service: None,
            prm_url: None,
            prm_timeout_ms: 10_000,
            engine: EngineConfig::default(),
            gateway: GatewayConfig::default(),
            policy: PolicyConfig::default(),
            judge: JudgeConfig::default(),
            composer: ComposerConfig::default(),
            workers: 4,
            json_truncation_bytes: DEFAULT_TRUNCATION_BYTES,
            tree_depth_cap: 2,
            out: PathBuf::from("out"),
        }
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(HarnessError::file(path))?;
        let cfg: Self = serde_json::from_slice(&bytes)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        if self.gateway.workers == 0 {
            return Err(HarnessError::Config("gateway.workers must be at least 1".into()));
        }
        if self.suite.trim().is_empty() {
            return Err(HarnessError::Config("suite must be set".into()));
        }
        Ok(())
    }
}
