//! Record/replay fixtures for offline tests.
//!
//! A cassette file is a JSON object mapping a request hash (hex SHA-256 of
//! the URL and the canonical request body) to the recorded reply
//! `{status, body}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::http::{HttpReply, Transport};
use super::BackendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    /// Forward to the inner transport and store every reply.
    Record,
    /// Serve stored replies only; unknown requests fail.
    Replay,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Cassette {
    pub entries: BTreeMap<String, HttpReply>,
}

impl Cassette {
    pub fn request_hash(url: &str, body: &Value) -> String {
        let mut h = Sha256::new();
        h.update(url.as_bytes());
        h.update(b"\n");
        // serde_json maps are key-sorted, so this encoding is canonical
        h.update(body.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

pub struct CassetteTransport {
    mode: CassetteMode,
    inner: Option<Arc<dyn Transport>>,
    cassette: Mutex<Cassette>,
    path: Option<PathBuf>,
}

impl CassetteTransport {
    pub fn replay(cassette: Cassette) -> Self {
        Self {
            mode: CassetteMode::Replay,
            inner: None,
            cassette: Mutex::new(cassette),
            path: None,
        }
    }

    pub fn replay_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::replay(Cassette::load(path)?))
    }

    /// Records through `inner`; call [`CassetteTransport::save`] to persist.
    pub fn record(inner: Arc<dyn Transport>, path: Option<PathBuf>) -> Self {
        Self {
            mode: CassetteMode::Record,
            inner: Some(inner),
            cassette: Mutex::new(Cassette::default()),
            path,
        }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().clone()
    }

    pub fn save(&self) -> std::io::Result<()> {
        match &self.path {
            Some(p) => self.cassette.lock().save(p),
            None => Ok(()),
        }
    }
}

impl Transport for CassetteTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<HttpReply, BackendError> {
        let key = Cassette::request_hash(url, body);
        match self.mode {
            CassetteMode::Replay => self
                .cassette
                .lock()
                .entries
                .get(&key)
                .cloned()
                .ok_or(BackendError::CassetteMiss(key)),
            CassetteMode::Record => {
                let inner = self.inner.as_ref().expect("record mode has an inner transport");
                let reply = inner.post_json(url, api_key, body)?;
                // only successful replies are worth replaying
                if (200..300).contains(&reply.status) {
                    self.cassette.lock().entries.insert(key, reply.clone());
                }
                Ok(reply)
            }
        }
    }
}
