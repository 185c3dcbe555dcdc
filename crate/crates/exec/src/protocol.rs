//! Runner wire protocol: one JSON object per `\n`-terminated UTF-8 line.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use stepcode_core::ExecStatus;

pub const PROTOCOL_VERSION: u32 = 1;

pub const ERR_PROTOCOL: &str = "protocol_error";
pub const ERR_NO_SUCH_SESSION: &str = "no_such_session";
pub const ERR_SESSION_EXISTS: &str = "session_exists";
pub const ERR_UNSUPPORTED_VERSION: &str = "unsupported_version";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Hello { version: u32 },
    Create { session: String },
    Exec {
        session: String,
        code: String,
        timeout_ms: u64,
    },
    Destroy { session: String },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Json>,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<Json>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ExecStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stdout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok(id: Option<Json>) -> Self {
        Self {
            id,
            ok: true,
            ..Self::default()
        }
    }

    pub fn error(id: Option<Json>, error: &str) -> Self {
        Self {
            id,
            ok: false,
            error: Some(error.to_string()),
            ..Self::default()
        }
    }
}

/// Serialize one message as a single line including the terminator.
pub fn encode_line<T: Serialize>(msg: &T) -> String {
    let mut line = serde_json::to_string(msg).expect("protocol messages always serialize");
    line.push('\n');
    line
}

pub fn decode_request(line: &str) -> Result<Request, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
}

pub fn decode_response(line: &str) -> Result<Response, serde_json::Error> {
    serde_json::from_str(line.trim_end_matches(['\n', '\r']))
}

/// Best-effort `id` recovery from a line that failed to decode as a request.
pub fn salvage_id(line: &str) -> Option<Json> {
    serde_json::from_str::<Json>(line)
        .ok()
        .and_then(|v| v.get("id").cloned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn requests_use_documented_shapes() {
        let r = Request {
            id: Some(json!(7)),
            op: Op::Exec {
                session: "s1".into(),
                code: "print(1)".into(),
                timeout_ms: 500,
            },
        };
        let line = encode_line(&r);
        assert!(line.ends_with('\n'));
        assert_eq!(line.matches('\n').count(), 1);
        let v: Json = serde_json::from_str(&line).unwrap();
        assert_eq!(
            v,
            json!({"id": 7, "op": "exec", "session": "s1", "code": "print(1)", "timeout_ms": 500})
        );
        assert_eq!(decode_request(&line).unwrap(), r);
        assert_eq!(
            decode_request(r#"{"op":"hello","version":1}"#).unwrap().op,
            Op::Hello { version: 1 }
        );
        assert_eq!(decode_request(r#"{"op":"shutdown","id":"x"}"#).unwrap().id, Some(json!("x")));
    }

    #[test]
    fn responses_omit_unset_fields() {
        let mut r = Response::ok(Some(json!(1)));
        r.version = Some(1);
        assert_eq!(encode_line(&r), "{\"id\":1,\"ok\":true,\"version\":1}\n");
        let e = Response::error(None, ERR_NO_SUCH_SESSION);
        assert_eq!(encode_line(&e), "{\"ok\":false,\"error\":\"no_such_session\"}\n");
        let exec = decode_response(
            r#"{"ok":true,"status":"runtime_error","stdout":"","stderr":"x","wall_time_ms":3}"#,
        )
        .unwrap();
        assert_eq!(exec.status, Some(ExecStatus::RuntimeError));
    }

    #[test]
    fn embedded_newlines_stay_escaped() {
        let r = Request {
            id: None,
            op: Op::Exec {
                session: "s".into(),
                code: "a = 1\nprint(a)\n".into(),
                timeout_ms: 1,
            },
        };
        let line = encode_line(&r);
        assert_eq!(line.matches('\n').count(), 1);
    }

    #[test]
    fn salvage_reads_id_from_invalid_requests() {
        assert_eq!(salvage_id(r#"{"id": 4, "op": "dance"}"#), Some(json!(4)));
        assert_eq!(salvage_id("not json"), None);
    }
}
