//! Canonical JSON encoding and stable hashing.
//!
//! Canonical form: object keys sorted recursively, compact separators,
//! UTF-8, one trailing newline. It does not depend on whether
//! `serde_json/preserve_order` is enabled somewhere in the build.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CoreError;
use crate::model::Trajectory;

/// Recursively rebuild `value` with object keys in sorted order.
pub fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sort_keys(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

/// Key-sorted compact JSON without the trailing newline.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String, CoreError> {
    let v = serde_json::to_value(value).map_err(|e| CoreError::Malformed(e.to_string()))?;
    serde_json::to_string(&sort_keys(&v)).map_err(|e| CoreError::Malformed(e.to_string()))
}

/// Canonical bytes: key-sorted JSON followed by `\n`.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CoreError> {
    let mut s = to_canonical_string(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn from_json_bytes<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CoreError> {
    serde_json::from_slice(bytes).map_err(|e| CoreError::Malformed(e.to_string()))
}

pub fn serialize_trajectory(traj: &Trajectory) -> Result<Vec<u8>, CoreError> {
    to_canonical_bytes(traj)
}

pub fn deserialize_trajectory(bytes: &[u8]) -> Result<Trajectory, CoreError> {
    if !bytes.ends_with(b"\n") {
        return Err(CoreError::Malformed("missing trailing newline".into()));
    }
    from_json_bytes(bytes)
}

pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// Hash of a committed code prefix: the code texts joined in order, each
/// terminated by a NUL byte. The empty prefix hashes the empty string.
pub fn prefix_hash<S: AsRef<str>>(codes: &[S]) -> String {
    let mut hasher = Sha256::new();
    for c in codes {
        hasher.update(c.as_ref().as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

/// Deterministic 64-bit seed mixed from a base seed and labelled parts.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}
