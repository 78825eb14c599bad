use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{with_retry, AttribError, ChatRequest, ResponseCache, RetryPolicy, Sleeper, ThreadSleeper, Transport};

/// Connection settings. The auth token is referenced by environment
/// variable name and read only when a request is sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            auth_env: None,
            model: model.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), AttribError> {
        let bad = |m: &str| Err(AttribError::InvalidConfig(m.to_string()));
        if self.base_url.trim().is_empty() {
            return bad("base_url is empty");
        }
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0");
        }
        if let Some(var) = &self.auth_env {
            if var.is_empty() || var.contains('=') || var.contains('\0') {
                return bad("auth_env must be an environment variable name");
            }
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

/// A model behind a transport, with optional cache and retry handling.
pub struct Endpoint {
    pub config: EndpointConfig,
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    sleeper: Box<dyn Sleeper>,
}

impl Endpoint {
    pub fn new(config: EndpointConfig, transport: Box<dyn Transport>) -> Result<Self, AttribError> {
        config.validate()?;
        Ok(Self { config, transport, cache: None, sleeper: Box::new(ThreadSleeper) })
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_sleeper(mut self, sleeper: Box<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Sends one prompt. `sample` names what the prompt is about (a sample id
    /// or a super-category) and takes part in the cache key.
    pub fn ask(&self, sample: &str, prompt: &str, image: Option<&str>) -> Result<String, AttribError> {
        let model = &self.config.model;
        let cache_sample = match image {
            Some(img) => format!("{sample}\u{1f}{img}"),
            None => sample.to_string(),
        };
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(model, &cache_sample, prompt)) {
            return Ok(hit);
        }
        let request = ChatRequest::user(model, prompt, image);
        let out = with_retry(self.config.retry_policy(), self.sleeper.as_ref(), || {
            self.transport.complete(&request)
        })?;
        if let Some(c) = &self.cache {
            c.put(model, &cache_sample, prompt, &out)?;
        }
        Ok(out)
    }
}
