use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::schema::parse_reply;
use super::templates::{render_with, PromptOptions, TemplateError, TemplateId};

/// One prompt sent to a provider. Template id and variables travel along as
/// metadata so scripted providers can match on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template: Option<TemplateId>,
    pub variables: BTreeMap<String, String>,
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    /// 0 for the first attempt, incremented on each retry.
    pub attempt: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("no scripted reply for {0}")]
    Unscripted(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderRole {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub role: ProviderRole,
    /// `mock` for the built-in synthetic world, `script:<path>` for a fixture
    /// file, otherwise the base URL of a chat-completions service.
    pub endpoint: String,
    pub model_name: String,
    pub sampling_temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> usize {
    2
}

fn default_key_env() -> String {
    "STRATEGIST_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

impl ProviderConfig {
    pub fn online() -> Self {
        ProviderConfig {
            role: ProviderRole::Online,
            endpoint: "mock".into(),
            model_name: "mock".into(),
            sampling_temperature: 0.7,
            max_retries: default_retries(),
            api_key_env: default_key_env(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn offline() -> Self {
        ProviderConfig {
            role: ProviderRole::Offline,
            sampling_temperature: 0.8,
            ..Self::online()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sampling_temperature >= 0.0 && self.sampling_temperature.is_finite()) {
            return Err(format!("sampling_temperature must be >= 0, got {}", self.sampling_temperature));
        }
        if self.endpoint.trim().is_empty() {
            return Err("endpoint must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub calls: u64,
    pub attempts: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: f64,
}

/// Call, token and latency counters. Tokens fall back to a word-count
/// estimate when the provider does not report usage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: f64,
    pub by_template: BTreeMap<String, TemplateStats>,
}

fn estimate_tokens(text: &str) -> u64 {
    (text.split_whitespace().count() as u64 * 4).div_ceil(3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Structured<T> {
    pub value: T,
    pub raw: String,
    pub retry_count: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{template}: {source}")]
    Transport {
        template: TemplateId,
        #[source]
        source: ProviderError,
    },
    #[error("{template}: no valid structured output after {attempts} attempts: {message}")]
    Structured {
        template: TemplateId,
        attempts: usize,
        message: String,
        raw: String,
    },
}

impl GatewayError {
    /// Raw text of the last reply, when there was one.
    pub fn raw(&self) -> Option<&str> {
        match self {
            GatewayError::Structured { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// Provider boundary with templating, structured parsing and bounded retry.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    config: ProviderConfig,
    stats: Mutex<GatewayStats>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, config: ProviderConfig) -> Self {
        Gateway {
            provider,
            config,
            stats: Mutex::new(GatewayStats::default()),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider(&self) -> &Arc<dyn ChatProvider> {
        &self.provider
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats.lock().clone()
    }

    pub fn reset_stats(&self) {
        *self.stats.lock() = GatewayStats::default();
    }

    pub fn complete_structured<T: DeserializeOwned>(
        &self,
        template: TemplateId,
        vars: &BTreeMap<String, String>,
        opts: PromptOptions,
    ) -> Result<Structured<T>, GatewayError> {
        self.complete_structured_with(template, vars, opts, |_: &T| Ok(()))
    }

    /// Like [`Gateway::complete_structured`], with an extra semantic check whose
    /// failure counts as a malformed reply (and so triggers a retry).
    pub fn complete_structured_with<T: DeserializeOwned>(
        &self,
        template: TemplateId,
        vars: &BTreeMap<String, String>,
        opts: PromptOptions,
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<Structured<T>, GatewayError> {
        let prompt = render_with(template, vars, opts)?;
        let mut last_raw = String::new();
        let mut last_message = String::new();
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            let request = ChatRequest {
                template: Some(template),
                variables: vars.clone(),
                prompt: prompt.clone(),
                model: self.config.model_name.clone(),
                temperature: self.config.sampling_temperature,
                attempt,
            };
            let started = Instant::now();
            let result = self.provider.complete(&request);
            let latency = started.elapsed().as_secs_f64() * 1e3;
            let response = match result {
                Ok(r) => r,
                Err(e) => {
                    self.account(template, &prompt, None, latency, attempt, false);
                    tracing::warn!(%template, attempt, error = %e, "provider call failed");
                    return Err(GatewayError::Transport { template, source: e });
                }
            };
            let parsed = parse_reply::<T>(template, &response.text, opts)
                .map_err(|e| e.to_string())
                .and_then(|v| check(&v).map(|_| v));
            let ok = parsed.is_ok();
            self.account(template, &prompt, Some(&response), latency, attempt, ok || attempt + 1 == attempts);
            match parsed {
                Ok(value) => {
                    return Ok(Structured {
                        value,
                        raw: response.text,
                        retry_count: attempt,
                    })
                }
                Err(message) => {
                    tracing::debug!(%template, attempt, %message, "malformed reply");
                    last_raw = response.text;
                    last_message = message;
                }
            }
        }
        self.stats.lock().failures += 1;
        if let Some(t) = self.stats.lock().by_template.get_mut(template.as_str()) {
            t.failures += 1;
        }
        Err(GatewayError::Structured {
            template,
            attempts,
            message: last_message,
            raw: last_raw,
        })
    }

    fn account(
        &self,
        template: TemplateId,
        prompt: &str,
        response: Option<&ChatResponse>,
        latency_ms: f64,
        attempt: usize,
        final_attempt: bool,
    ) {
        let prompt_tokens = response.and_then(|r| r.prompt_tokens).unwrap_or_else(|| estimate_tokens(prompt));
        let completion_tokens = response
            .map(|r| r.completion_tokens.unwrap_or_else(|| estimate_tokens(&r.text)))
            .unwrap_or(0);
        let mut s = self.stats.lock();
        s.attempts += 1;
        if attempt > 0 {
            s.retries += 1;
        }
        if final_attempt {
            s.calls += 1;
        }
        s.prompt_tokens += prompt_tokens;
        s.completion_tokens += completion_tokens;
        s.latency_ms += latency_ms;
        let t = s.by_template.entry(template.as_str().to_string()).or_default();
        t.attempts += 1;
        if final_attempt {
            t.calls += 1;
        }
        t.prompt_tokens += prompt_tokens;
        t.completion_tokens += completion_tokens;
        t.latency_ms += latency_ms;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{MockProvider, Unmatched};
    use crate::llm::schema::DstReply;

    fn dst_vars() -> BTreeMap<String, String> {
        TemplateId::Dst
            .variables()
            .into_iter()
            .map(|v| (v.to_string(), "x".to_string()))
            .collect()
    }

    const VALID: &str = r#"{"critique": "", "belief_state": {"hotel": {"area": "east"}}, "reason": "user said east"}"#;

    fn gateway(mock: &Arc<MockProvider>) -> Gateway {
        Gateway::new(mock.clone(), ProviderConfig::online())
    }

    #[test]
    fn happy_path_parses_belief_state() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        mock.script(TemplateId::Dst, [VALID]);
        let g = gateway(&mock);
        let r: Structured<DstReply> = g.complete_structured(TemplateId::Dst, &dst_vars(), PromptOptions::default()).unwrap();
        assert_eq!(r.value.belief_state.domain("hotel").unwrap()["area"], "east");
        assert_eq!(r.retry_count, 0);
        assert_eq!(g.stats().calls, 1);
    }

    #[test]
    fn prose_then_json_succeeds_on_retry() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        mock.script(TemplateId::Dst, ["Here is the state you asked for.", VALID]);
        let g = gateway(&mock);
        let r: Structured<DstReply> = g.complete_structured(TemplateId::Dst, &dst_vars(), PromptOptions::default()).unwrap();
        assert_eq!(r.retry_count, 1);
        let s = g.stats();
        assert_eq!((s.calls, s.attempts, s.retries), (1, 2, 1));
        assert_eq!(mock.call_count(), 2);
    }

    #[test]
    fn persistent_garbage_surfaces_raw_text() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        mock.script(TemplateId::Dst, ["not json at all"]);
        let g = gateway(&mock);
        let err = g
            .complete_structured::<DstReply>(TemplateId::Dst, &dst_vars(), PromptOptions::default())
            .unwrap_err();
        assert_eq!(err.raw(), Some("not json at all"));
        assert!(matches!(err, GatewayError::Structured { attempts: 3, .. }));
        assert_eq!(mock.call_count(), 3);
        assert_eq!(g.stats().failures, 1);
    }

    #[test]
    fn semantic_check_triggers_retry() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        mock.script(TemplateId::Dst, [VALID]);
        let g = gateway(&mock);
        let err = g
            .complete_structured_with::<DstReply>(TemplateId::Dst, &dst_vars(), PromptOptions::default(), |_| {
                Err("never good enough".into())
            })
            .unwrap_err();
        assert!(err.to_string().contains("never good enough"));
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn transport_errors_and_unbound_variables() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        let g = gateway(&mock);
        let err = g
            .complete_structured::<DstReply>(TemplateId::Dst, &dst_vars(), PromptOptions::default())
            .unwrap_err();
        assert!(matches!(err, GatewayError::Transport { .. }));
        let err = g
            .complete_structured::<DstReply>(TemplateId::Dst, &BTreeMap::new(), PromptOptions::default())
            .unwrap_err();
        assert!(matches!(err, GatewayError::Template(_)));
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn token_estimates_are_recorded() {
        let mock = Arc::new(MockProvider::new(Unmatched::Error));
        mock.script(TemplateId::Dst, [VALID]);
        let g = gateway(&mock);
        g.complete_structured::<DstReply>(TemplateId::Dst, &dst_vars(), PromptOptions::default())
            .unwrap();
        let s = g.stats();
        assert!(s.prompt_tokens > 50 && s.completion_tokens > 5);
        assert_eq!(s.by_template["dst"].calls, 1);
    }
}
