use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatResponse, LlmClient, LlmError};

/// Request fingerprint: lowercase hex SHA-256 over the model id, system text
/// and user text, each as its UTF-8 bytes preceded by the byte length as a
/// big-endian u64.
pub fn fingerprint(model_id: &str, system_text: &str, user_text: &str) -> String {
    let mut h = Sha256::new();
    for part in [model_id, system_text, user_text] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub fingerprint: String,
    pub model: String,
    pub system: String,
    pub user: String,
    pub text: String,
    pub latency_ms: f64,
}

impl ReplayEntry {
    pub fn new(request: &ChatRequest, text: &str, latency: Duration) -> Self {
        Self {
            fingerprint: request.fingerprint(),
            model: request.model_id.clone(),
            system: request.system_text.clone(),
            user: request.user_text.clone(),
            text: text.to_owned(),
            latency_ms: latency.as_secs_f64() * 1000.0,
        }
    }
}

/// Serves recorded responses by fingerprint. When a fingerprint appears more
/// than once the last line wins.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, (String, Duration)>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut backend = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry =
                serde_json::from_str(line).map_err(|e| LlmError::Config(format!("replay line {}: {e}", n + 1)))?;
            backend.insert(entry);
        }
        Ok(backend)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut backend = Self::default();
        for e in entries {
            backend.insert(e);
        }
        backend
    }

    pub fn insert(&mut self, entry: ReplayEntry) {
        let latency = Duration::from_secs_f64(entry.latency_ms.max(0.0) / 1000.0);
        self.entries.insert(entry.fingerprint, (entry.text, latency));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmClient for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let fp = request.fingerprint();
        let (text, latency) = self.entries.get(&fp).ok_or(LlmError::MissingReplayEntry(fp))?;
        Ok(ChatResponse {
            text: text.clone(),
            latency: *latency,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

/// Appends one exchange to a replay file.
pub fn record_replay(request: &ChatRequest, response: &ChatResponse, path: &Path) -> Result<(), LlmError> {
    let mut file = open_append(path)?;
    write_entry(&mut file, &ReplayEntry::new(request, &response.text, response.latency))
}

fn open_append(path: &Path) -> Result<File, LlmError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))
}

fn write_entry(file: &mut File, entry: &ReplayEntry) -> Result<(), LlmError> {
    let mut line = serde_json::to_string(entry).expect("entry serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| LlmError::Io(e.to_string()))
}

/// Wraps a client and appends every successful exchange to a replay file.
pub struct RecordingClient<C> {
    inner: C,
    file: Mutex<File>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, path: &Path) -> Result<Self, LlmError> {
        Ok(Self {
            inner,
            file: Mutex::new(open_append(path)?),
        })
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let entry = ReplayEntry::new(request, &response.text, response.latency);
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        write_entry(&mut file, &entry)?;
        Ok(response)
    }
}
