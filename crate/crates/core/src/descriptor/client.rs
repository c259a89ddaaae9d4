use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{DescriptorError, Result};
use crate::digest::sha256_hex;

pub const ENDPOINT_ENV: &str = "DESCREC_MLLM_ENDPOINT";
pub const API_KEY_ENV: &str = "DESCREC_MLLM_API_KEY";

/// How an image reference is put on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Local files are read and sent as base64 data URLs; remote URLs pass through.
    #[default]
    Inline,
    /// The reference string is sent verbatim as the image URL.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmClientConfig {
    pub endpoint: String,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: usize,
    pub temperature: f64,
    pub image_mode: ImageMode,
    /// Base delay before the first retry; doubles on each further attempt.
    pub retry_backoff_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for MllmClientConfig {
    fn default() -> Self {
        MllmClientConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "gemma-3-27b-it".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            temperature: 0.0,
            image_mode: ImageMode::Inline,
            retry_backoff_ms: 500,
            api_key: None,
        }
    }
}

impl MllmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() || self.model_name.trim().is_empty() {
            return Err(DescriptorError::BadConfig("endpoint and model name are required".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(DescriptorError::BadConfig("timeout must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(DescriptorError::BadConfig("temperature must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies [`ENDPOINT_ENV`] and [`API_KEY_ENV`] when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            if !v.is_empty() {
                self.endpoint = v;
            }
        }
        if let Ok(v) = std::env::var(API_KEY_ENV) {
            if !v.is_empty() {
                self.api_key = Some(v);
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub prompt: String,
    pub image: Option<String>,
}

/// One request/response exchange. Errors are reported as text and retried by
/// [`MllmClient`].
pub trait Transport: Send + Sync {
    fn send(&self, config: &MllmClientConfig, request: &ChatRequest) -> std::result::Result<String, String>;
}

/// Offline provider: `stub-desc <hash>` of the seed, prompt and image reference.
#[derive(Debug, Clone, Copy)]
pub struct StubTransport {
    pub seed: u64,
}

impl Transport for StubTransport {
    fn send(&self, _: &MllmClientConfig, request: &ChatRequest) -> std::result::Result<String, String> {
        let mut bytes = self.seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(request.prompt.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(request.image.as_deref().unwrap_or("").as_bytes());
        Ok(format!("stub-desc {}", &sha256_hex(bytes)[..16]))
    }
}

/// Chat-completions style JSON over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(config: &MllmClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        HttpTransport { agent }
    }
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

fn image_url(reference: &str, mode: ImageMode) -> std::result::Result<String, String> {
    let remote = ["http://", "https://", "data:"].iter().any(|p| reference.starts_with(p));
    if remote || mode == ImageMode::Reference {
        return Ok(reference.to_string());
    }
    let path = Path::new(reference);
    let bytes = std::fs::read(path).map_err(|e| format!("{reference}: {e}"))?;
    let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{};base64,{encoded}", mime_for(path)))
}

pub(crate) fn request_body(config: &MllmClientConfig, request: &ChatRequest) -> std::result::Result<Value, String> {
    let mut content = vec![json!({"type": "text", "text": request.prompt})];
    if let Some(image) = &request.image {
        content.push(json!({"type": "image_url", "image_url": {"url": image_url(image, config.image_mode)?}}));
    }
    Ok(json!({
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [{"role": "user", "content": content}],
    }))
}

/// First text message of a chat-completions response.
pub(crate) fn response_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => parts
            .iter()
            .find_map(|p| p.get("text").and_then(Value::as_str))
            .map(str::to_string),
        _ => None,
    }
}

impl Transport for HttpTransport {
    fn send(&self, config: &MllmClientConfig, request: &ChatRequest) -> std::result::Result<String, String> {
        let body = request_body(config, request)?;
        let mut req = self.agent.post(&config.endpoint);
        if let Some(key) = &config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let value: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        response_text(&value).ok_or_else(|| "response has no text content".to_string())
    }
}

/// Retrying client over a [`Transport`], counting every attempt.
pub struct MllmClient {
    config: MllmClientConfig,
    transport: Box<dyn Transport>,
    attempts: AtomicUsize,
}

impl MllmClient {
    pub fn new(config: MllmClientConfig, transport: Box<dyn Transport>) -> Result<Self> {
        config.validate()?;
        Ok(MllmClient {
            config,
            transport,
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn stub(seed: u64) -> Self {
        Self::new(MllmClientConfig::default(), Box::new(StubTransport { seed })).expect("default config is valid")
    }

    pub fn http(config: MllmClientConfig) -> Result<Self> {
        let transport = HttpTransport::new(&config);
        Self::new(config, Box::new(transport))
    }

    pub fn config(&self) -> &MllmClientConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Transport attempts made so far, including failed ones.
    pub fn calls(&self) -> usize {
        self.attempts.load(Ordering::Relaxed)
    }

    /// Sends `request`, retrying transport failures up to `max_retries` times.
    /// A blank reply is not retried.
    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        let total = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..total {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            match self.transport.send(&self.config, request) {
                Ok(text) if text.trim().is_empty() => return Err(DescriptorError::EmptyResponse),
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("attempt {}/{total} failed: {e}", attempt + 1);
                    last = e;
                    if attempt + 1 < total && self.config.retry_backoff_ms > 0 {
                        let delay = self.config.retry_backoff_ms.saturating_mul(1 << attempt.min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(DescriptorError::Transport {
            attempts: total,
            message: last,
        })
    }
}
