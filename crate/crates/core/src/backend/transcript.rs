use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};

/// One attempt against a backend, as written to the JSONL log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp: String,
    pub backend_id: String,
    pub prompt_hash: String,
    pub output: String,
    pub latency: u64,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only call log, kept in memory and optionally mirrored to a file.
pub struct Transcript {
    entries: Mutex<Vec<TranscriptEntry>>,
    file: Option<Mutex<File>>,
    clock: Arc<dyn Clock>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(Vec::new()),
            file: None,
            clock: Arc::new(SystemClock),
        }
    }

    /// Appends to `path`, creating it if needed.
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(file)),
            ..Self::in_memory()
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub(crate) fn record(
        &self,
        backend_id: &str,
        prompt_hash: &str,
        output: &str,
        latency: u64,
        attempt: u32,
        error: Option<&str>,
    ) {
        let entry = TranscriptEntry {
            timestamp: self.clock.timestamp(),
            backend_id: backend_id.to_string(),
            prompt_hash: prompt_hash.to_string(),
            output: output.to_string(),
            latency,
            attempt,
            error: error.map(str::to_string),
        };
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&entry).expect("entry serializes");
            let mut f = file.lock().expect("transcript file lock");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!(error = %e, "cannot append to transcript");
            }
        }
        self.entries.lock().expect("transcript lock").push(entry);
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript lock").clone()
    }

    pub fn load(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let t = Transcript::to_file(&path).unwrap();
        t.record("scripted", "abc", "out", 3, 1, None);
        t.record("scripted", "abc", "", 1, 2, Some("boom"));
        let loaded = Transcript::load(&path).unwrap();
        assert_eq!(loaded, t.entries());
        let raw = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        for key in ["timestamp", "backend_id", "prompt_hash", "output", "latency", "attempt"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }
}
