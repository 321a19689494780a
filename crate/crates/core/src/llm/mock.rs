//! Scripted provider for tests and fixtures.
//!
//! Calls are answered by the first registered script whose matcher accepts
//! them (replies in order, the last one repeating), then by responders, and
//! finally by the unmatched policy. Every call is logged.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::Value;

use super::gateway::{ChatProvider, ChatRequest, ChatResponse, ProviderError};
use super::templates::TemplateId;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unmatched {
    Error,
    Default(String),
}

type Predicate = Box<dyn Fn(&BTreeMap<String, String>) -> bool + Send + Sync>;
type Responder = Arc<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

struct Script {
    template: Option<TemplateId>,
    predicate: Predicate,
    replies: Vec<String>,
    next: usize,
}

pub struct MockProvider {
    scripts: Mutex<Vec<Script>>,
    responders: Mutex<Vec<(Option<TemplateId>, Responder)>>,
    unmatched: Unmatched,
    log: Mutex<Vec<ChatRequest>>,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider")
            .field("scripts", &self.scripts.lock().len())
            .field("unmatched", &self.unmatched)
            .field("calls", &self.log.lock().len())
            .finish()
    }
}

impl MockProvider {
    pub fn new(unmatched: Unmatched) -> Self {
        MockProvider {
            scripts: Mutex::new(Vec::new()),
            responders: Mutex::new(Vec::new()),
            unmatched,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Registers canned replies for calls of `template` (or any template when
    /// `None`) whose variables satisfy `predicate`.
    pub fn register_script<I, S>(
        &self,
        template: Option<TemplateId>,
        predicate: impl Fn(&BTreeMap<String, String>) -> bool + Send + Sync + 'static,
        replies: I,
    ) where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        assert!(!replies.is_empty(), "a script needs at least one reply");
        self.scripts.lock().push(Script {
            template,
            predicate: Box::new(predicate),
            replies,
            next: 0,
        });
    }

    /// Shorthand for a script matching every call of `template`.
    pub fn script<I, S>(&self, template: TemplateId, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.register_script(Some(template), |_| true, replies);
    }

    /// Registers a closure consulted after the scripts; `None` passes the call on.
    pub fn register_responder(
        &self,
        template: Option<TemplateId>,
        f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static,
    ) {
        self.responders.lock().push((template, Arc::new(f)));
    }

    /// Loads a fixture file:
    ///
    /// ```json
    /// {"unmatched": "error" | {"default": "..."},
    ///  "scripts": [{"template": "dst", "when": {"var": "substring"}, "replies": ["...", {...}]}]}
    /// ```
    ///
    /// Non-string replies are serialized to JSON text.
    pub fn from_fixture(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_fixture_str(&text)
    }

    pub fn from_fixture_str(text: &str) -> Result<Self, ProviderError> {
        #[derive(Deserialize)]
        struct Fixture {
            #[serde(default = "unmatched_error")]
            unmatched: Unmatched,
            scripts: Vec<FixtureScript>,
        }
        #[derive(Deserialize)]
        struct FixtureScript {
            template: Option<TemplateId>,
            #[serde(default)]
            when: BTreeMap<String, String>,
            replies: Vec<Value>,
        }
        fn unmatched_error() -> Unmatched {
            Unmatched::Error
        }
        let fixture: Fixture = serde_json::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        let mock = MockProvider::new(fixture.unmatched);
        for (i, s) in fixture.scripts.into_iter().enumerate() {
            if s.replies.is_empty() {
                return Err(ProviderError::Config(format!("script {i} has no replies")));
            }
            let replies: Vec<String> = s
                .replies
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect();
            let when = s.when;
            mock.register_script(
                s.template,
                move |vars| when.iter().all(|(k, sub)| vars.get(k).is_some_and(|v| v.contains(sub.as_str()))),
                replies,
            );
        }
        Ok(mock)
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.log.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().len()
    }

    pub fn calls_for(&self, template: TemplateId) -> usize {
        self.log.lock().iter().filter(|c| c.template == Some(template)).count()
    }

    pub fn requests_for(&self, template: TemplateId) -> Vec<ChatRequest> {
        self.log.lock().iter().filter(|c| c.template == Some(template)).cloned().collect()
    }

    pub fn clear_log(&self) {
        self.log.lock().clear();
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.log.lock().push(request.clone());
        {
            let mut scripts = self.scripts.lock();
            let hit = scripts.iter_mut().find(|s| {
                s.template.is_none_or(|t| Some(t) == request.template) && (s.predicate)(&request.variables)
            });
            if let Some(s) = hit {
                let reply = s.replies[s.next.min(s.replies.len() - 1)].clone();
                s.next += 1;
                return Ok(ChatResponse::text(reply));
            }
        }
        let responders: Vec<Responder> = self
            .responders
            .lock()
            .iter()
            .filter(|(t, _)| t.is_none_or(|t| Some(t) == request.template))
            .map(|(_, f)| f.clone())
            .collect();
        for f in responders {
            if let Some(reply) = f(request) {
                return Ok(ChatResponse::text(reply));
            }
        }
        match &self.unmatched {
            Unmatched::Default(text) => Ok(ChatResponse::text(text.clone())),
            Unmatched::Error => Err(ProviderError::Unscripted(
                request.template.map_or("untemplated call".to_string(), |t| t.to_string()),
            )),
        }
    }
}
