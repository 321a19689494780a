//! Blocking client for chat-completions-compatible HTTP services.

use std::time::Duration;

use serde_json::{json, Value};

use super::gateway::{ChatProvider, ChatRequest, ChatResponse, ProviderConfig, ProviderError};

/// Attempts on 429 and 5xx responses before giving up.
const TRANSIENT_ATTEMPTS: u32 = 3;
const BACKOFF_BASE: Duration = Duration::from_millis(250);

#[derive(Debug)]
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpProvider {
    /// Builds a client for `config.endpoint`; the bearer token is read from
    /// the environment variable named by `config.api_key_env`, if set.
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let base = config.endpoint.trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ProviderError::Config(format!("`{base}` is not an http(s) URL")));
        }
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(HttpProvider { client, url, api_key })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Extracts the reply text and usage from a chat-completions response body.
pub fn parse_completion(body: &Value) -> Result<ChatResponse, ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()))?;
    Ok(ChatResponse {
        text: text.to_string(),
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut delay = BACKOFF_BASE;
        for attempt in 1..=TRANSIENT_ATTEMPTS {
            let mut call = self.client.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                call = call.bearer_auth(key);
            }
            let response = call.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
            let status = response.status();
            if (status.as_u16() == 429 || status.is_server_error()) && attempt < TRANSIENT_ATTEMPTS {
                tracing::warn!(%status, attempt, "transient provider error, backing off");
                std::thread::sleep(delay);
                delay *= 2;
                continue;
            }
            if !status.is_success() {
                let text = response.text().unwrap_or_default();
                return Err(ProviderError::Transport(format!("HTTP {status}: {}", text.chars().take(500).collect::<String>())));
            }
            let value: Value = response.json().map_err(|e| ProviderError::Transport(e.to_string()))?;
            return parse_completion(&value);
        }
        unreachable!("the final attempt always returns")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_openai_shape() {
        let body = json!({
            "choices": [{"message": {"role": "assistant", "content": "{\"critique\": \"\"}"}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 5}
        });
        let r = parse_completion(&body).unwrap();
        assert_eq!(r.text, "{\"critique\": \"\"}");
        assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(12), Some(5)));
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn endpoint_normalization() {
        let mut c = ProviderConfig::online();
        c.endpoint = "http://localhost:8000/v1/".into();
        assert_eq!(HttpProvider::new(&c).unwrap().url(), "http://localhost:8000/v1/chat/completions");
        c.endpoint = "mock".into();
        assert!(HttpProvider::new(&c).is_err());
    }
}
