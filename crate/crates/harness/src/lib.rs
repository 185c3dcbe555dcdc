//! Offline benchmark harness: suites, runs, ablations, process-data
//! collection, conflict statistics, the JSON-mode baseline and reports.

pub mod builtin;
pub mod commands;
pub mod config;
pub mod env;
pub mod error;
pub mod jsonmode;
pub mod report;
pub mod suite;

pub use commands::{
    cmd_ablate, cmd_collect, cmd_conflict_stats, cmd_json_baseline, cmd_report, cmd_run, run_suite, ConflictSource,
};
pub use config::HarnessConfig;
pub use env::Environment;
pub use error::HarnessError;
pub use report::{build_report, MetricsReport};
pub use suite::{BenchmarkSuite, SuiteBundle};
