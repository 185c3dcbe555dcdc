//! Deterministic tool-response cache keyed by normalized request hashes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use stepcode_core::canonical::{sha256_hex, sort_keys};

use crate::error::GatewayError;

/// A recorded upstream response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub body: Json,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: u64,
}

/// Normalized request identity: upper-cased method, URL with sorted query
/// pairs, and the body with keys sorted recursively.
pub fn request_key(method: &str, url: &str, body: Option<&Json>) -> String {
    let mut material = String::new();
    material.push_str(&method.to_ascii_uppercase());
    material.push('\n');
    material.push_str(&normalize_url(url));
    material.push('\n');
    if let Some(b) = body {
        material.push_str(&sort_keys(b).to_string());
    }
    sha256_hex(material.as_bytes())
}

fn normalize_url(url: &str) -> String {
    let (base, query) = match url.split_once('?') {
        Some((b, q)) => (b, q),
        None => return url.to_string(),
    };
    let mut pairs: Vec<&str> = query.split('&').filter(|p| !p.is_empty()).collect();
    pairs.sort_by(|a, b| {
        let ka = a.split('=').next().unwrap_or(a);
        let kb = b.split('=').next().unwrap_or(b);
        ka.cmp(kb).then(a.cmp(b))
    });
    if pairs.is_empty() {
        base.to_string()
    } else {
        format!("{base}?{}", pairs.join("&"))
    }
}

/// Shared cache; many concurrent readers, exclusive writers.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<String, CachedResponse>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lookup that updates the hit/miss counters.
    pub fn lookup(&self, key: &str) -> Option<CachedResponse> {
        let found = self.entries.read().expect("cache lock").get(key).cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Lookup without touching the counters.
    pub fn peek(&self, key: &str) -> Option<CachedResponse> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, response: CachedResponse) {
        self.entries
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(response);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.len() as u64,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let map: BTreeMap<String, CachedResponse> = self
            .entries
            .read()
            .expect("cache lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let text = serde_json::to_string_pretty(&map)
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        let map: HashMap<String, CachedResponse> =
            serde_json::from_str(&text).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(Self {
            entries: RwLock::new(map),
            ..Self::default()
        })
    }
}
