use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteMeta {
    pub model: String,
    pub created_at: String,
}

/// Recorded responses keyed by request fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub meta: CassetteMeta,
    pub entries: BTreeMap<String, String>,
}

impl Cassette {
    pub fn new(model: impl Into<String>) -> Self {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self { meta: CassetteMeta { model: model.into(), created_at: secs.to_string() }, entries: BTreeMap::new() }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }

    pub fn lookup(&self, request: &ChatRequest) -> Result<&str, LlmError> {
        let fingerprint = request.fingerprint();
        self.entries.get(&fingerprint).map(String::as_str).ok_or(LlmError::CassetteMiss { fingerprint })
    }
}

/// Answers strictly from a cassette. Never opens a socket.
pub struct ReplayBackend {
    cassette: Cassette,
    hits: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette, hits: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        Ok(Self::new(Cassette::load(path)?))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ReplayBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let text = self.cassette.lookup(request)?;
        self.hits.fetch_add(1, Ordering::SeqCst);
        Ok(text.to_string())
    }
}

/// Forwards to an inner backend and records every successful response.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    cassette: Mutex<Cassette>,
    path: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, cassette: Cassette, path: impl Into<PathBuf>) -> Self {
        Self { inner, cassette: Mutex::new(cassette), path: path.into() }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().clone()
    }

    pub fn flush(&self) -> io::Result<()> {
        self.cassette.lock().save(&self.path)
    }
}

impl ChatBackend for RecordingBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let text = self.inner.chat(request)?;
        self.cassette.lock().entries.insert(request.fingerprint(), text.clone());
        Ok(text)
    }
}
