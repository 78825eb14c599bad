use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::EndpointConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Generic chat-completion request. `image` is an opaque URL or data URI
/// forwarded to VQA-capable endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, image: Option<&str>) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            image: image.map(String::from),
        }
    }

    /// Content digest, used to key transcripts.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        format!("{:x}", Sha256::digest(json))
    }

    pub fn prompt(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: rate limits, server errors, timeouts.
    #[error("transient: {0}")]
    Transient(String),
    #[error("permanent: {0}")]
    Permanent(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transient(_))
    }
}

pub trait Transport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// OpenAI-style `POST {base_url}/chat/completions`.
pub struct HttpTransport {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        Self { config, agent }
    }

    fn body(request: &ChatRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| match &request.image {
                Some(url) if m.role == "user" => serde_json::json!({
                    "role": m.role,
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {"url": url}},
                    ],
                }),
                _ => serde_json::json!({"role": m.role, "content": m.content}),
            })
            .collect();
        serde_json::json!({"model": request.model, "messages": messages})
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut call = self.agent.post(&url);
        if let Some(var) = &self.config.auth_env {
            // read at call time so the secret never lives in any config value
            let token = std::env::var(var)
                .map_err(|_| TransportError::Permanent(format!("environment variable {var} is not set")))?;
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        let response = match call.send_json(Self::body(request)) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(TransportError::Transient(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, _)) => return Err(TransportError::Permanent(format!("HTTP {code}"))),
            Err(ureq::Error::Transport(t)) => return Err(TransportError::Transient(t.kind().to_string())),
        };
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Permanent(format!("invalid JSON body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| TransportError::Permanent("response has no choices[0].message.content".into()))
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

/// Scripted transport that counts calls. The first `transient_failures`
/// calls fail with a transient error before the responder is consulted.
pub struct MockTransport {
    responder: Box<Responder>,
    transient_failures: AtomicUsize,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new(responder: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(responder),
            transient_failures: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_transient_failures(self, n: usize) -> Self {
        self.transient_failures.store(n, Ordering::SeqCst);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let pending = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        if pending.is_ok() {
            return Err(TransportError::Transient("HTTP 429 (injected)".into()));
        }
        (self.responder)(request)
    }
}

/// Responses keyed by request digest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub responses: BTreeMap<String, String>,
}

/// Passes calls through and records every successful response.
pub struct RecordingTransport<T> {
    inner: T,
    transcript: Mutex<Transcript>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, transcript: Mutex::new(Transcript::default()) }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let out = self.inner.complete(request)?;
        self.transcript
            .lock()
            .expect("transcript lock")
            .responses
            .insert(request.digest(), out.clone());
        Ok(out)
    }
}

/// Answers only from a transcript; unknown requests fail permanently.
pub struct ReplayTransport {
    transcript: Transcript,
}

impl ReplayTransport {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.transcript
            .responses
            .get(&request.digest())
            .cloned()
            .ok_or_else(|| TransportError::Permanent(format!("request {} not in transcript", request.digest())))
    }
}
