//! LLM and VQA backends.
//!
//! Both backend kinds sit behind small traits so the pipeline does not care
//! whether answers come from a live HTTP endpoint, a fixture file, or the
//! synthetic oracle. Raw answers are normalized here, in one place, into a
//! yes/no/unparseable tri-state.

mod cache;
mod http;
mod stub;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::QuestionTemplates;

pub use cache::{CacheKey, CachedValue, CorruptEntry, ResponseCache};
pub use http::{HttpLlm, HttpVqa};
pub use stub::{FixtureLlm, OracleVqa};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("no fixture entry for prompt {prompt:?}")]
    FixtureMiss { prompt: String },

    #[error("image not found: {0}")]
    ImageNotFound(String),

    #[error("invalid backend configuration: {0}")]
    Config(String),

    #[error("cache I/O error at {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt cache entry for {key}: {reason}")]
    CorruptEntry { key: String, reason: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Normalized VQA answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    Unparseable,
}

impl Answer {
    pub fn is_yes(self) -> bool {
        self == Answer::Yes
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Unparseable => "unparseable",
        }
    }
}

/// Maps a raw answer to a tri-state by its first alphabetic token.
pub fn normalize_answer(raw: &str) -> Answer {
    let token = raw
        .split(|c: char| !c.is_alphabetic())
        .find(|t| !t.is_empty());
    match token {
        Some(t) if t.eq_ignore_ascii_case("yes") => Answer::Yes,
        Some(t) if t.eq_ignore_ascii_case("no") => Answer::No,
        _ => Answer::Unparseable,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub image_ref: String,
    pub question: String,
    pub raw_answer: String,
    pub normalized: Answer,
    pub backend_fingerprint: String,
    pub timestamp: DateTime<Utc>,
}

impl AnswerRecord {
    pub fn new(
        image_ref: impl Into<String>,
        question: impl Into<String>,
        raw_answer: impl Into<String>,
        backend_fingerprint: impl Into<String>,
    ) -> Self {
        let raw_answer = raw_answer.into();
        Self {
            image_ref: image_ref.into(),
            question: question.into(),
            normalized: normalize_answer(&raw_answer),
            raw_answer,
            backend_fingerprint: backend_fingerprint.into(),
            timestamp: Utc::now(),
        }
    }
}

pub trait LlmBackend: Send + Sync {
    /// Identifies the backend and its generation parameters for caching.
    fn fingerprint(&self) -> String;

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        BTreeMap::new()
    }

    fn generate(&self, prompt: &str) -> Result<String, BackendError>;
}

pub trait VqaBackend: Send + Sync {
    fn fingerprint(&self) -> String;

    fn answer(&self, image_ref: &str, question: &str) -> Result<AnswerRecord, BackendError>;
}

/// Retries transport failures with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(1 << (attempt - 1).min(16)),
        )
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// runs out of attempts.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < max => {
                    log::debug!("attempt {attempt}/{max} failed: {e}; retrying");
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LlmBackendHandle {
    Http {
        endpoint: String,
        /// Forwarded verbatim as the request's `params` object.
        #[serde(default)]
        params: BTreeMap<String, serde_json::Value>,
        #[serde(default, skip_serializing)]
        bearer_token: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
    FixtureStub {
        path: PathBuf,
    },
}

impl LlmBackendHandle {
    pub fn open(&self) -> Result<Arc<dyn LlmBackend>, BackendError> {
        match self {
            LlmBackendHandle::Http {
                endpoint,
                params,
                bearer_token,
                timeout_secs,
                retry,
            } => Ok(Arc::new(HttpLlm::new(
                endpoint,
                params.clone(),
                bearer_token.clone(),
                Duration::from_secs(*timeout_secs),
                *retry,
            )?)),
            LlmBackendHandle::FixtureStub { path } => Ok(Arc::new(FixtureLlm::load(path)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VqaBackendHandle {
    Http {
        endpoint: String,
        /// When set, images are read from this directory and sent base64
        /// encoded; otherwise the image reference is sent as a URI.
        #[serde(default)]
        image_root: Option<PathBuf>,
        #[serde(default, skip_serializing)]
        bearer_token: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default)]
        retry: RetryPolicy,
    },
    OracleStub {
        /// Attribute-world bundle providing ground truth.
        world: PathBuf,
        #[serde(default)]
        noise_flip_probability: f64,
        #[serde(default)]
        rng_seed: u64,
    },
}

impl VqaBackendHandle {
    pub fn validate(&self) -> Result<(), BackendError> {
        if let VqaBackendHandle::OracleStub {
            noise_flip_probability,
            ..
        } = self
        {
            stub::check_noise(*noise_flip_probability)?;
        }
        Ok(())
    }

    pub fn open(&self, templates: &QuestionTemplates) -> Result<Arc<dyn VqaBackend>, BackendError> {
        self.validate()?;
        match self {
            VqaBackendHandle::Http {
                endpoint,
                image_root,
                bearer_token,
                timeout_secs,
                retry,
            } => Ok(Arc::new(HttpVqa::new(
                endpoint,
                image_root.clone(),
                bearer_token.clone(),
                Duration::from_secs(*timeout_secs),
                *retry,
            )?)),
            VqaBackendHandle::OracleStub {
                world,
                noise_flip_probability,
                rng_seed,
            } => {
                let world = crate::dataset::AttributeWorld::load(world)
                    .map_err(|e| BackendError::Config(e.to_string()))?;
                Ok(Arc::new(OracleVqa::new(
                    Arc::new(world),
                    *noise_flip_probability,
                    *rng_seed,
                    templates,
                )?))
            }
        }
    }
}
