//! In-process runner speaking the stdio protocol, backed by the bundled
//! interpreter.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::interp::{Clock, ExecContext, Namespace, ToolHost};
use crate::protocol::{
    decode_request, encode_line, salvage_id, Op, Request, Response, ERR_NO_SUCH_SESSION,
    ERR_PROTOCOL, ERR_SESSION_EXISTS, ERR_UNSUPPORTED_VERSION, PROTOCOL_VERSION,
};

pub struct FakeRunner {
    sessions: HashMap<String, Namespace>,
    tools: Option<Arc<dyn ToolHost>>,
    clock: Clock,
}

impl FakeRunner {
    pub fn new(tools: Option<Arc<dyn ToolHost>>, clock: Clock) -> Self {
        Self {
            sessions: HashMap::new(),
            tools,
            clock,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Handle one raw protocol line. Returns the response line and whether
    /// the runner should stop.
    pub fn handle_line(&mut self, line: &str) -> (String, bool) {
        match decode_request(line) {
            Ok(req) => {
                let stop = matches!(req.op, Op::Shutdown);
                (encode_line(&self.handle(req)), stop)
            }
            Err(_) => (
                encode_line(&Response::error(salvage_id(line), ERR_PROTOCOL)),
                false,
            ),
        }
    }

    pub fn handle(&mut self, req: Request) -> Response {
        let id = req.id;
        match req.op {
            Op::Hello { version } if version == PROTOCOL_VERSION => {
                let mut r = Response::ok(id);
                r.version = Some(PROTOCOL_VERSION);
                r
            }
            Op::Hello { .. } => Response::error(id, ERR_UNSUPPORTED_VERSION),
            Op::Create { session } => {
                if self.sessions.contains_key(&session) {
                    return Response::error(id, ERR_SESSION_EXISTS);
                }
                self.sessions.insert(session, Namespace::new());
                Response::ok(id)
            }
            Op::Exec {
                session,
                code,
                timeout_ms,
            } => {
                let Some(ns) = self.sessions.get_mut(&session) else {
                    return Response::error(id, ERR_NO_SUCH_SESSION);
                };
                let ctx = ExecContext {
                    session_id: &session,
                    timeout_ms,
                    clock: self.clock,
                    tools: self.tools.as_deref(),
                };
                let out = ns.exec(&code, &ctx);
                Response {
                    id,
                    ok: true,
                    status: Some(out.status),
                    stdout: Some(out.stdout),
                    stderr: Some(out.stderr),
                    wall_time_ms: Some(out.wall_time_ms),
                    ..Response::default()
                }
            }
            Op::Destroy { session } => match self.sessions.remove(&session) {
                Some(_) => Response::ok(id),
                None => Response::error(id, ERR_NO_SUCH_SESSION),
            },
            Op::Shutdown => Response::ok(id),
        }
    }

    /// Serve requests until `shutdown` or end of input, flushing every line.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (resp, stop) = self.handle_line(&line);
            output.write_all(resp.as_bytes())?;
            output.flush()?;
            if stop {
                break;
            }
        }
        Ok(())
    }
}
