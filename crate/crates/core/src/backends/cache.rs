//! Append-only response cache.
//!
//! Entries live in `responses.jsonl` under the cache directory, one checksummed
//! record per line. The newest line for a key wins. Lines that fail to parse
//! or verify are reported and never served.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AnswerRecord, BackendError};
use crate::fingerprint;

const CACHE_FILE: &str = "responses.jsonl";

/// Exact-match key: backend fingerprint, image ref or prompt, and question
/// (empty for LLM prompts).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub backend: String,
    pub subject: String,
    pub question: String,
}

impl CacheKey {
    pub fn vqa(backend: &str, image_ref: &str, question: &str) -> Self {
        Self {
            backend: backend.to_string(),
            subject: image_ref.to_string(),
            question: question.to_string(),
        }
    }

    pub fn llm(backend: &str, prompt: &str) -> Self {
        Self {
            backend: backend.to_string(),
            subject: prompt.to_string(),
            question: String::new(),
        }
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {:?}, {:?})",
            self.backend, self.subject, self.question
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CachedValue {
    Answer(AnswerRecord),
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptEntry {
    pub line: usize,
    pub key: Option<CacheKey>,
    pub reason: String,
}

#[derive(Debug, Clone)]
enum Slot {
    Valid(CachedValue),
    Corrupt(String),
}

pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<CacheKey, Slot>>,
    writer: Mutex<File>,
    corrupt: Vec<CorruptEntry>,
}

fn checksum(key: &Value, value: &Value) -> String {
    fingerprint(&[&key.to_string(), &value.to_string()])
}

impl ResponseCache {
    /// Opens (creating if needed) the cache under `dir` and loads every entry.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BackendError::CacheIo { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(CACHE_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;

        let mut entries = HashMap::new();
        let mut corrupt = Vec::new();
        let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            match Self::decode_line(&line) {
                Ok((key, value)) => {
                    entries.insert(key, Slot::Valid(value));
                }
                Err((key, reason)) => {
                    log::warn!(
                        "cache {}: line {} is corrupt: {reason}",
                        path.display(),
                        i + 1
                    );
                    if let Some(key) = &key {
                        entries.insert(key.clone(), Slot::Corrupt(reason.clone()));
                    }
                    corrupt.push(CorruptEntry {
                        line: i + 1,
                        key,
                        reason,
                    });
                }
            }
        }

        // A torn final write must not swallow the next appended record.
        let len = file.metadata().map_err(io_err(&path))?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            let mut probe = File::open(&path).map_err(io_err(&path))?;
            probe.seek(SeekFrom::End(-1)).map_err(io_err(&path))?;
            probe.read_exact(&mut last).map_err(io_err(&path))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io_err(&path))?;
            }
        }

        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(file),
            corrupt,
        })
    }

    fn decode_line(line: &str) -> Result<(CacheKey, CachedValue), (Option<CacheKey>, String)> {
        let mut doc: serde_json::Map<String, Value> =
            serde_json::from_str(line).map_err(|e| (None, format!("invalid JSON: {e}")))?;
        let key_value = doc.remove("key").ok_or((None, "missing key".to_string()))?;
        let key: CacheKey = serde_json::from_value(key_value.clone())
            .map_err(|e| (None, format!("invalid key: {e}")))?;
        let value = doc
            .remove("value")
            .ok_or((Some(key.clone()), "missing value".to_string()))?;
        let stored = doc.get("checksum").and_then(Value::as_str).unwrap_or("");
        if stored != checksum(&key_value, &value) {
            return Err((Some(key), "checksum mismatch".to_string()));
        }
        let value = serde_json::from_value(value)
            .map_err(|e| (Some(key.clone()), format!("invalid value: {e}")))?;
        Ok((key, value))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries skipped while loading.
    pub fn corrupt_entries(&self) -> &[CorruptEntry] {
        &self.corrupt
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CachedValue>, BackendError> {
        match self.entries.read().expect("cache lock").get(key) {
            None => Ok(None),
            Some(Slot::Valid(v)) => Ok(Some(v.clone())),
            Some(Slot::Corrupt(reason)) => Err(BackendError::CorruptEntry {
                key: key.to_string(),
                reason: reason.clone(),
            }),
        }
    }

    pub fn put(&self, key: CacheKey, value: CachedValue) -> Result<(), BackendError> {
        let key_value = serde_json::to_value(&key).expect("key serializes");
        let value_value = serde_json::to_value(&value).expect("value serializes");
        let mut line = serde_json::json!({
            "checksum": checksum(&key_value, &value_value),
            "key": key_value,
            "value": value_value,
        })
        .to_string();
        line.push('\n');

        let mut writer = self.writer.lock().expect("cache writer lock");
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|source| BackendError::CacheIo {
                path: self.path.clone(),
                source,
            })?;
        self.entries
            .write()
            .expect("cache lock")
            .insert(key, Slot::Valid(value));
        Ok(())
    }

    pub fn get_answer(&self, key: &CacheKey) -> Result<Option<AnswerRecord>, BackendError> {
        match self.get(key)? {
            Some(CachedValue::Answer(a)) => Ok(Some(a)),
            Some(CachedValue::Text { .. }) => Err(BackendError::CorruptEntry {
                key: key.to_string(),
                reason: "expected an answer record, found text".into(),
            }),
            None => Ok(None),
        }
    }

    pub fn get_text(&self, key: &CacheKey) -> Result<Option<String>, BackendError> {
        match self.get(key)? {
            Some(CachedValue::Text { text }) => Ok(Some(text)),
            Some(CachedValue::Answer(_)) => Err(BackendError::CorruptEntry {
                key: key.to_string(),
                reason: "expected text, found an answer record".into(),
            }),
            None => Ok(None),
        }
    }
}
