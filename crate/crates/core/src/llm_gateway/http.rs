//! Blocking clients for OpenAI-style `chat/completions` and `embeddings`
//! HTTP endpoints.

use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{BackendError, BackendUsage, CompletionBackend, CompletionRequest, CompletionResponse, EmbeddingBackend};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Io(_) => {
            BackendError::Unreachable(err.to_string())
        }
        ureq::Error::Timeout(_) => BackendError::Transient(err.to_string()),
        ureq::Error::BadUri(_) | ureq::Error::RequireHttpsOnly(_) => BackendError::Permanent(err.to_string()),
        ureq::Error::Json(_) | ureq::Error::Protocol(_) => BackendError::InvalidResponse(err.to_string()),
        other => BackendError::Transient(other.to_string()),
    }
}

fn post_json(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, BackendError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(classify)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(classify)?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::InvalidResponse(e.to_string())),
        408 | 429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}: {}", snippet(&text)))),
        _ => Err(BackendError::Permanent(format!("HTTP {status}: {}", snippet(&text)))),
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Option values that parse as JSON (numbers, booleans) are sent typed.
fn option_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

#[derive(Debug, Clone)]
pub struct HttpCompletionBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpCompletionBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            api_key,
        }
    }

    fn request_body(request: &CompletionRequest<'_>) -> Value {
        let profile = request.profile;
        let mut body = Map::new();
        body.insert("model".into(), json!(profile.model));
        body.insert(
            "messages".into(),
            json!([{ "role": "user", "content": request.prompt }]),
        );
        body.insert("temperature".into(), json!(profile.temperature));
        body.insert("max_tokens".into(), json!(profile.max_new_tokens));
        for (k, v) in &profile.options {
            body.insert(k.clone(), option_value(v));
        }
        Value::Object(body)
    }
}

pub(crate) fn parse_completion(body: &Value) -> Result<CompletionResponse, BackendError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| BackendError::InvalidResponse("no choices in response".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::InvalidResponse("choice has no text content".into()))?;
    let usage = body.get("usage").and_then(|u| {
        Some(BackendUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(CompletionResponse {
        text: text.to_owned(),
        usage,
    })
}

impl CompletionBackend for HttpCompletionBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let body = post_json(
            &self.agent,
            &self.endpoint,
            self.api_key.as_deref(),
            &Self::request_body(request),
        )?;
        parse_completion(&body)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbeddingBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEmbeddingBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
        }
    }
}

pub(crate) fn parse_embeddings(body: &Value) -> Result<Vec<Vec<f64>>, BackendError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::InvalidResponse("no data array in response".into()))?;
    let mut indexed = BTreeMap::new();
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::InvalidResponse(format!("item {pos} has no embedding")))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| BackendError::InvalidResponse("non-numeric embedding".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        indexed.insert(index, values);
    }
    Ok(indexed.into_values().collect())
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)?;
        parse_embeddings(&resp)
    }
}
