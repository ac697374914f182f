use std::time::Duration;

use serde_json::{json, Value};

use super::client::ChatBackend;
use super::message::ChatMessage;
use crate::error::{Error, Result};

pub const ENV_BASE_URL: &str = "VER_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "VER_LLM_API_KEY";
pub const ENV_MODEL: &str = "VER_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let need = |k: &str| {
            get(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| Error::Config(format!("environment variable {k} is not set")))
        };
        let api_key = need(ENV_API_KEY)?;
        let base_url = need(ENV_BASE_URL)?;
        Ok(Self {
            base_url,
            api_key,
            model: get(ENV_MODEL).unwrap_or_else(|| "gpt-4o".to_string()),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(500),
        })
    }
}

/// Chat-completions style JSON over HTTPS.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn from_env() -> Result<Self> {
        Self::new(HttpConfig::from_env()?)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, messages: &[ChatMessage]) -> Result<Value> {
        let mut wire = Vec::new();
        for m in messages {
            let content = if m.images.is_empty() {
                json!(m.text)
            } else {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for img in &m.images {
                    let url = format!("data:image/png;base64,{}", img.to_base64_png()?);
                    parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
                }
                Value::Array(parts)
            };
            wire.push(json!({"role": m.role.as_str(), "content": content}));
        }
        Ok(json!({"model": self.config.model, "messages": wire, "temperature": 0}))
    }
}

fn parse_reply(v: &Value) -> Result<String> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Transport("response has no choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = self.body(messages)?;
        let mut attempt = 0;
        loop {
            let sent = self
                .client
                .post(self.endpoint())
                .bearer_auth(&self.config.api_key)
                .json(&body)
                .send();
            let transient = match sent {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let v: Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
                        return parse_reply(&v);
                    }
                    let text = resp.text().unwrap_or_default();
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(Error::Transport(format!("HTTP {status}: {text}")));
                    }
                    format!("HTTP {status}: {text}")
                }
                Err(e) if e.is_timeout() || e.is_connect() => e.to_string(),
                Err(e) => return Err(Error::Transport(e.to_string())),
            };
            if attempt >= self.config.max_retries {
                return Err(Error::Transport(transient));
            }
            log::warn!("chat request failed ({transient}); retrying");
            std::thread::sleep(self.config.backoff * 2u32.pow(attempt));
            attempt += 1;
        }
    }
}
