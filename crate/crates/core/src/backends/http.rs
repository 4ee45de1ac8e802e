//! JSON-over-HTTP adapters.
//!
//! LLM: `POST /v1/generate {"prompt", "params"}` -> `{"text"}`.
//! VQA: `POST /v1/vqa {"image", "image_encoding", "question"}` -> `{"answer"}`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use reqwest::blocking::Client;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{AnswerRecord, BackendError, LlmBackend, RetryPolicy, VqaBackend};
use crate::fingerprint;

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    params: &'a BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Serialize)]
struct VqaRequest<'a> {
    image: &'a str,
    image_encoding: &'a str,
    question: &'a str,
}

#[derive(Deserialize)]
struct VqaResponse {
    answer: String,
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), path)
}

fn build_client(timeout: Duration) -> Result<Client, BackendError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Config(e.to_string()))
}

fn post_json<B: Serialize, R: DeserializeOwned>(
    client: &Client,
    url: &str,
    bearer_token: Option<&str>,
    body: &B,
) -> Result<R, BackendError> {
    let mut request = client.post(url).json(body);
    if let Some(token) = bearer_token {
        request = request.bearer_auth(token);
    }
    let response = request.send().map_err(|e| BackendError::Transport {
        attempts: 1,
        message: e.to_string(),
    })?;
    let status = response.status();
    if status != reqwest::StatusCode::OK {
        let body = response.text().unwrap_or_default();
        return Err(BackendError::Status {
            status: status.as_u16(),
            body,
        });
    }
    let text = response.text().map_err(|e| BackendError::Transport {
        attempts: 1,
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{e}: {text}")))
}

pub struct HttpLlm {
    client: Client,
    url: String,
    params: BTreeMap<String, serde_json::Value>,
    bearer_token: Option<String>,
    retry: RetryPolicy,
}

impl HttpLlm {
    pub fn new(
        endpoint: &str,
        params: BTreeMap<String, serde_json::Value>,
        bearer_token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client(timeout)?,
            url: join_url(endpoint, "/v1/generate"),
            params,
            bearer_token,
            retry,
        })
    }
}

impl LlmBackend for HttpLlm {
    fn fingerprint(&self) -> String {
        let params = serde_json::to_string(&self.params).unwrap_or_default();
        format!("http-llm:{}", fingerprint(&[&self.url, &params]))
    }

    fn params(&self) -> BTreeMap<String, serde_json::Value> {
        self.params.clone()
    }

    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::Config("empty prompt".into()));
        }
        let body = GenerateRequest {
            prompt,
            params: &self.params,
        };
        self.retry
            .run(|| {
                post_json::<_, GenerateResponse>(
                    &self.client,
                    &self.url,
                    self.bearer_token.as_deref(),
                    &body,
                )
            })
            .map(|r| r.text)
    }
}

pub struct HttpVqa {
    client: Client,
    url: String,
    image_root: Option<PathBuf>,
    bearer_token: Option<String>,
    retry: RetryPolicy,
}

impl HttpVqa {
    pub fn new(
        endpoint: &str,
        image_root: Option<PathBuf>,
        bearer_token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client(timeout)?,
            url: join_url(endpoint, "/v1/vqa"),
            image_root,
            bearer_token,
            retry,
        })
    }

    fn encode_image(&self, image_ref: &str) -> Result<(String, &'static str), BackendError> {
        match &self.image_root {
            Some(root) => {
                let path = root.join(image_ref);
                let bytes = std::fs::read(&path)
                    .map_err(|e| BackendError::ImageNotFound(format!("{}: {e}", path.display())))?;
                Ok((
                    base64::engine::general_purpose::STANDARD.encode(bytes),
                    "base64",
                ))
            }
            None => Ok((image_ref.to_string(), "uri")),
        }
    }
}

impl VqaBackend for HttpVqa {
    fn fingerprint(&self) -> String {
        format!("http-vqa:{}", fingerprint(&[&self.url]))
    }

    fn answer(&self, image_ref: &str, question: &str) -> Result<AnswerRecord, BackendError> {
        if question.is_empty() {
            return Err(BackendError::Config("empty question".into()));
        }
        let (image, image_encoding) = self.encode_image(image_ref)?;
        let body = VqaRequest {
            image: &image,
            image_encoding,
            question,
        };
        let response = self.retry.run(|| {
            post_json::<_, VqaResponse>(
                &self.client,
                &self.url,
                self.bearer_token.as_deref(),
                &body,
            )
        })?;
        Ok(AnswerRecord::new(
            image_ref,
            question,
            response.answer,
            self.fingerprint(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urls_join_without_double_slash() {
        assert_eq!(join_url("http://h:1/", "/v1/vqa"), "http://h:1/v1/vqa");
        assert_eq!(
            join_url("http://h:1", "/v1/generate"),
            "http://h:1/v1/generate"
        );
    }

    #[test]
    fn unreachable_endpoint_is_transport_error_after_retries() {
        // Port 9 on localhost is closed in the test sandbox.
        let llm = HttpLlm::new(
            "http://127.0.0.1:9",
            BTreeMap::new(),
            None,
            Duration::from_secs(2),
            RetryPolicy {
                max_attempts: 2,
                initial_backoff_ms: 1,
            },
        )
        .unwrap();
        match llm.generate("hello") {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
