//! Sandboxed execution for generated code steps: the runner protocol, an
//! in-process fake runner, the caching tool proxy and the session gateway.

pub mod cache;
pub mod error;
pub mod fake_runner;
pub mod gateway;
pub mod interp;
pub mod protocol;
pub mod proxy;
pub mod runner;

pub use cache::{CacheStats, CachedResponse, ResponseCache};
pub use error::GatewayError;
pub use gateway::{Gateway, GatewayConfig, ReplayHint, RunnerSpec, SessionHandle, PROXY_URL_ENV};
pub use interp::Clock;
pub use proxy::{ProxyConfig, ToolProxy};
