//! Stdio runner worker backed by the bundled interpreter.
//!
//! Tool calls go to the proxy endpoint named by `STEPCODE_PROXY_URL`.
//! Pass `--wall-clock` to measure timeouts in real time.

use std::io::{stdin, stdout};
use std::sync::Arc;
use std::time::Duration;

use stepcode_exec::fake_runner::FakeRunner;
use stepcode_exec::interp::{Clock, ToolHost};
use stepcode_exec::proxy::HttpToolHost;
use stepcode_exec::PROXY_URL_ENV;

fn main() -> std::io::Result<()> {
    let wall = std::env::args().skip(1).any(|a| a == "--wall-clock");
    let clock = if wall { Clock::Wall } else { Clock::default() };
    let tools = std::env::var(PROXY_URL_ENV).ok().map(|url| {
        Arc::new(HttpToolHost::new(&url, Duration::from_secs(30))) as Arc<dyn ToolHost>
    });
    FakeRunner::new(tools, clock).serve(stdin().lock(), stdout().lock())
}
