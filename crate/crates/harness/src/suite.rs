//! Benchmark suites and the scripts and scenario that travel with them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stepcode_core::canonical::to_canonical_string;
use stepcode_core::Task;
use stepcode_engine::ScriptBook;
use stepcode_mocktools::Scenario;

use crate::builtin;
use crate::error::{HarnessError, Result};
use crate::jsonmode::JsonScriptBook;

pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub name: String,
    pub tasks: Vec<Task>,
    /// Subset label to member task ids.
    #[serde(default)]
    pub subsets: BTreeMap<String, Vec<String>>,
}

impl BenchmarkSuite {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.id.as_str()) {
                return Err(HarnessError::Config(format!("suite '{}': duplicate task id '{}'", self.name, t.id)));
            }
        }
        for (label, ids) in &self.subsets {
            if let Some(missing) = ids.iter().find(|id| !seen.contains(id.as_str())) {
                return Err(HarnessError::Config(format!(
                    "suite '{}': subset '{label}' names unknown task '{missing}'",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Subset labels of one task, in label order.
    pub fn subsets_of(&self, task_id: &str) -> Vec<&str> {
        self.subsets
            .iter()
            .filter(|(_, ids)| ids.iter().any(|i| i == task_id))
            .map(|(l, _)| l.as_str())
            .collect()
    }
}

/// A suite plus everything needed to run it offline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteBundle {
    pub suite: BenchmarkSuite,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Code-mode scripts for the scripted policy.
    #[serde(default)]
    pub scripts: ScriptBook,
    /// Action scripts for the JSON-mode baseline.
    #[serde(default)]
    pub json_scripts: JsonScriptBook,
}

impl SuiteBundle {
    /// `builtin:<name>` or a path to a bundle JSON file.
    pub fn load(spec: &str) -> Result<Self> {
        let bundle = match spec.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => builtin::suite(name)?,
            None => {
                let path = Path::new(spec);
                let bytes = std::fs::read(path).map_err(HarnessError::file(path))?;
                serde_json::from_slice(&bytes).map_err(|e| HarnessError::malformed(format!("suite file {spec}"), e))?
            }
        };
        bundle.suite.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = to_canonical_string(self).map_err(|e| HarnessError::malformed("suite", e))?;
        std::fs::write(path, text).map_err(HarnessError::file(path))
    }
}
