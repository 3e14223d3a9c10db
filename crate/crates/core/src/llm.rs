//! Chat-completion client used by query decomposition and motion reasoning.
//!
//! The wire format is the common OpenAI-style `POST /v1/chat/completions`
//! body. Anything implementing [`ChatBackend`] can stand in for the HTTP
//! client, which is how tests drive the retry and fallback paths.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "RVOS_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// `None` omits the field for endpoints that reject it.
    pub top_k: Option<u32>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String>;
}

/// Endpoint and decoding settings shared by every language-model stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    pub llm_endpoint: String,
    pub llm_model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    /// Send `top_k` in the request body. Some servers reject unknown fields.
    pub send_top_k: bool,
    pub retries: u32,
    pub offline: bool,
    pub request_timeout_secs: u64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            llm_endpoint: "http://localhost:8000/v1/chat/completions".into(),
            llm_model: "Meta-Llama-3-8B-Instruct".into(),
            temperature: 0.7,
            top_p: 0.95,
            top_k: 0,
            send_top_k: true,
            retries: 3,
            offline: false,
            request_timeout_secs: 120,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(Error::Config(format!("top_p must be in [0, 1], got {}", self.top_p)));
        }
        Ok(())
    }

    pub fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            top_p: self.top_p,
            top_k: self.send_top_k.then_some(self.top_k),
        }
    }

    /// HTTP client for the configured endpoint, or `None` in offline mode.
    pub fn client(&self) -> Option<HttpChatClient> {
        if self.offline {
            return None;
        }
        Some(HttpChatClient::new(
            &self.llm_endpoint,
            &self.llm_model,
            std::env::var(API_KEY_ENV).ok(),
            Duration::from_secs(self.request_timeout_secs),
        ))
    }
}

pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            agent,
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage], params: &DecodingParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "stream": false,
        });
        if let Some(k) = params.top_k {
            body["top_k"] = json!(k);
        }
        body
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String> {
        let body = self.request_body(messages, params);
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Endpoint(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Endpoint(format!("reading response body: {e}")))?;
        if !status.is_success() {
            return Err(Error::Endpoint(format!("HTTP {status}: {text}")));
        }
        extract_completion_text(&text)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response body.
pub fn extract_completion_text(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::json("completion response", e))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Endpoint("response has no choices[0].message.content".into()))
}

/// One endpoint call as recorded in the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Calls the backend until `parse` accepts a response or the budget runs out.
pub fn complete_with_retries<T>(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    params: &DecodingParams,
    budget: u32,
    mut parse: impl FnMut(&str) -> Result<T>,
) -> (Option<T>, Vec<Attempt>) {
    let mut attempts = Vec::new();
    for _ in 0..budget {
        match backend.complete(messages, params) {
            Ok(text) => match parse(&text) {
                Ok(v) => {
                    attempts.push(Attempt {
                        response: Some(text),
                        error: None,
                    });
                    return (Some(v), attempts);
                }
                Err(e) => attempts.push(Attempt {
                    response: Some(text),
                    error: Some(e.to_string()),
                }),
            },
            Err(e) => attempts.push(Attempt {
                response: None,
                error: Some(e.to_string()),
            }),
        }
    }
    (None, attempts)
}

/// Returns the first balanced `{...}` block, skipping braces inside strings.
pub fn first_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if start.is_none() {
            if b == b'{' {
                start = Some(i);
                depth = 1;
            }
            continue;
        }
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start.unwrap()..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
pub(crate) mod testing {
    use std::sync::Mutex;

    use super::*;

    /// Replays canned responses in order, then keeps failing.
    pub struct ScriptedBackend {
        pub responses: Mutex<Vec<Result<String>>>,
        pub calls: Mutex<Vec<Vec<ChatMessage>>>,
    }

    impl ScriptedBackend {
        pub fn new(responses: Vec<Result<String>>) -> Self {
            let mut responses = responses;
            responses.reverse();
            Self {
                responses: Mutex::new(responses),
                calls: Mutex::new(Vec::new()),
            }
        }

        pub fn call_count(&self) -> usize {
            self.calls.lock().unwrap().len()
        }
    }

    impl ChatBackend for ScriptedBackend {
        fn complete(&self, messages: &[ChatMessage], _params: &DecodingParams) -> Result<String> {
            self.calls.lock().unwrap().push(messages.to_vec());
            self.responses
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(Error::Endpoint("script exhausted".into())))
        }
    }
}
