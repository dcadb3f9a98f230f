//! HTTP client for an OpenAI-style chat completion endpoint.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::query::{ReasonerQuery, ReasonerResponse};
use super::{Reasoner, ReasonerError};

pub const SYSTEM_PROMPT: &str = include_str!("../../data/prompts/system.txt");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    /// Schema-repair re-queries after the first attempt.
    pub max_retries: usize,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub const DEFAULT_RETRIES: usize = 3;

    /// Reads `LLM_ENDPOINT`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, ReasonerError> {
        let endpoint = std::env::var("LLM_ENDPOINT")
            .map_err(|_| ReasonerError::Config("LLM_ENDPOINT is not set".into()))?;
        Ok(Self {
            endpoint,
            api_key: std::env::var("LLM_API_KEY").ok(),
            model: std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4o-2024-11-20".into()),
            temperature: 0.0,
            max_retries: Self::DEFAULT_RETRIES,
            timeout_secs: 120,
        })
    }
}

/// One request/response exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: String,
    pub attempt: usize,
    pub messages: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RemoteReasoner {
    config: RemoteConfig,
    agent: ureq::Agent,
    transcript: Mutex<Vec<TranscriptEntry>>,
    log_path: Option<PathBuf>,
}

impl RemoteReasoner {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            transcript: Mutex::new(Vec::new()),
            log_path: None,
        }
    }

    /// Also append every transcript entry as one JSON line to `path`.
    pub fn with_log(mut self, path: PathBuf) -> Self {
        self.log_path = Some(path);
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    fn record(&self, entry: TranscriptEntry) {
        let mut t = self.transcript.lock().expect("transcript lock");
        if let Some(path) = &self.log_path {
            let line = serde_json::to_string(&entry).expect("entry serializes") + "\n";
            // written under the lock as a single write so lines never interleave
            match OpenOptions::new().create(true).append(true).open(path) {
                Ok(mut f) => {
                    if let Err(e) = f.write_all(line.as_bytes()) {
                        log::warn!("transcript log {}: {e}", path.display());
                    }
                }
                Err(e) => log::warn!("transcript log {}: {e}", path.display()),
            }
        }
        t.push(entry);
    }

    fn post(&self, messages: &[Value], query: &ReasonerQuery) -> Result<String, ReasonerError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": query.output_schema.name(),
                    "schema": query.output_schema.json_schema(),
                }
            }
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ReasonerError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ReasonerError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ReasonerError::Http { status, body: text });
        }
        Ok(text)
    }
}

/// Extracts the assistant text from a chat-completion body.
fn message_content(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response body is not JSON: {e}"))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())
}

/// Parses model output as JSON, tolerating a surrounding code fence.
fn parse_content(content: &str) -> Result<Value, String> {
    let trimmed = content.trim();
    let inner = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(inner.trim()).map_err(|e| format!("output is not valid JSON: {e}"))
}

impl Reasoner for RemoteReasoner {
    fn name(&self) -> &str {
        "remote"
    }

    fn answer(&self, query: &ReasonerQuery) -> Result<ReasonerResponse, ReasonerError> {
        let mut messages = vec![
            json!({"role": "system", "content": SYSTEM_PROMPT.trim()}),
            json!({"role": "user", "content": query.render()}),
        ];
        let mut last_violation = String::new();
        for attempt in 0..=self.config.max_retries {
            let body = match self.post(&messages, query) {
                Ok(b) => b,
                Err(e) => {
                    self.record(TranscriptEntry {
                        stage: query.stage.as_str().into(),
                        attempt,
                        messages: messages.clone(),
                        raw_response: None,
                        violation: None,
                        error: Some(e.to_string()),
                    });
                    return Err(e);
                }
            };
            let content = message_content(&body);
            let parsed = content
                .as_deref()
                .map_err(Clone::clone)
                .and_then(parse_content)
                .and_then(|v| query.output_schema.parse(&v));
            let violation = parsed.as_ref().err().cloned();
            self.record(TranscriptEntry {
                stage: query.stage.as_str().into(),
                attempt,
                messages: messages.clone(),
                raw_response: Some(body.clone()),
                violation: violation.clone(),
                error: None,
            });
            match parsed {
                Ok(r) => return Ok(r),
                Err(v) => {
                    log::debug!("{} attempt {attempt}: {v}", query.stage.as_str());
                    messages.push(json!({"role": "assistant", "content": content.unwrap_or(body)}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!(
                            "Your previous answer does not match the output structure: {v}. \
                             Answer again with a single JSON object that matches the schema."
                        )
                    }));
                    last_violation = v;
                }
            }
        }
        Err(ReasonerError::RetriesExhausted {
            attempts: self.config.max_retries + 1,
            last_violation,
        })
    }
}
