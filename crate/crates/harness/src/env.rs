//! Live backends for one harness invocation: the tool service (local mock
//! unless configured otherwise), the execution gateway, policy, judge,
//! answer composer and latent scorer.

use std::time::Duration;

use stepcode_core::chat::{ChatClient, RetryPolicy};
use stepcode_core::judge::{JudgeBackend, MockJudge, RemoteJudge};
use stepcode_engine::{
    AnswerComposer, ConstantScorer, EngineConfig, LatentMode, LatentScorer, PolicyBackend, PrmRemoteScorer,
    RemotePolicy, RolloutScorer, Runtime, ScriptBook, ScriptedPolicy,
};
use stepcode_exec::Gateway;
use stepcode_mocktools::{MockToolService, Scenario};

use crate::config::{ComposerConfig, HarnessConfig, JudgeConfig, PolicyConfig};
use crate::error::{HarnessError, Result};
use crate::suite::SuiteBundle;

pub struct Environment {
    /// Present when the tool service is served locally.
    pub service: Option<MockToolService>,
    pub gateway: Gateway,
    policy: Box<dyn PolicyBackend>,
    judge: Box<dyn JudgeBackend>,
    composer: AnswerComposer,
    prm_url: Option<String>,
    prm_timeout: Duration,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("service", &self.service.as_ref().map(MockToolService::url))
            .field("gateway", &self.gateway)
            .field("prm_url", &self.prm_url)
            .finish_non_exhaustive()
    }
}

fn scenario_for(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<Scenario> {
    match &cfg.scenario {
        Some(path) => Scenario::from_path(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display()))),
        None => Ok(bundle.scenario.clone().unwrap_or_default()),
    }
}

impl Environment {
    pub fn start(cfg: &HarnessConfig, bundle: &SuiteBundle) -> Result<Self> {
        let (service, upstream) = match &cfg.tool_service {
            Some(url) => (None, url.clone()),
            None => {
                let scenario = scenario_for(cfg, bundle)?;
                let svc = MockToolService::spawn_local(scenario)
                    .map_err(|e| HarnessError::Environment(format!("starting mock tool service: {e}")))?;
                let url = svc.url();
                (Some(svc), url)
            }
        };
        let mut gw_cfg = cfg.gateway.clone();
        gw_cfg.proxy.upstream = upstream;
        let gateway = Gateway::new(gw_cfg).map_err(|e| HarnessError::Environment(format!("starting gateway: {e}")))?;

        let policy: Box<dyn PolicyBackend> = match &cfg.policy {
            PolicyConfig::Scripted => Box::new(ScriptedPolicy::new(bundle.scripts.clone())),
            PolicyConfig::ScriptedFile { path } => Box::new(ScriptedPolicy::new(
                ScriptBook::from_path(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            )),
            PolicyConfig::Remote { endpoint } => Box::new(RemotePolicy::new(ChatClient::new(endpoint.clone()))),
        };
        let judge: Box<dyn JudgeBackend> = match &cfg.judge {
            JudgeConfig::Mock => Box::new(MockJudge::new()),
            JudgeConfig::Remote { endpoint } => Box::new(RemoteJudge::new(ChatClient::new(endpoint.clone()))),
        };
        let composer = match &cfg.composer {
            ComposerConfig::Concatenate => AnswerComposer::Concatenate,
            ComposerConfig::Remote { endpoint } => AnswerComposer::Remote(ChatClient::new(endpoint.clone())),
        };
        let prm_url = cfg.prm_url.clone().or_else(|| service.as_ref().map(MockToolService::url));
        Ok(Self {
            service,
            gateway,
            policy,
            judge,
            composer,
            prm_url,
            prm_timeout: Duration::from_millis(cfg.prm_timeout_ms),
        })
    }

    pub fn runtime(&self) -> Runtime<'_> {
        Runtime::new(self.policy.as_ref(), &self.gateway, self.judge.as_ref(), &self.composer)
    }

    pub fn judge(&self) -> &dyn JudgeBackend {
        self.judge.as_ref()
    }

    /// The latent scorer selected by `engine.latent_mode`.
    pub fn scorer<'a>(&'a self, engine: &'a EngineConfig) -> Result<Box<dyn LatentScorer + 'a>> {
        Ok(match engine.latent_mode {
            LatentMode::ConstantZero => Box::new(ConstantScorer(0.0)),
            LatentMode::Rollout => Box::new(RolloutScorer {
                runtime: self.runtime().with_sentinel(&engine.sentinel),
                hp: engine.hp.clone(),
                config: engine.rollout,
            }),
            LatentMode::Prm => {
                let url = self
                    .prm_url
                    .as_deref()
                    .ok_or_else(|| HarnessError::Config("latent_mode prm needs prm_url".into()))?;
                Box::new(PrmRemoteScorer::new(url, self.prm_timeout, RetryPolicy::default()))
            }
        })
    }
}
