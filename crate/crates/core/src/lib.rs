//! Shared foundation for reward-guided stepwise code agents: the domain
//! model, canonical serialization, the process-reward formulas, answer
//! judging and aggregate metrics.

pub mod canonical;
pub mod chat;
pub mod error;
pub mod judge;
pub mod metrics;
pub mod model;
pub mod par;
pub mod reward;

pub use error::CoreError;
pub use model::*;
