//! Reply schemas of the prompt templates.
//!
//! Validation works on `serde_json::Value` first, so that a violation names the
//! offending field, then normalizes scalars (slot values become strings) before
//! deserializing into the typed reply.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::templates::{PromptOptions, TemplateId};
use crate::pipeline::belief::BeliefState;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("reply is not JSON: {0}")]
    NotJson(String),
    #[error("missing field `{0}`")]
    Missing(String),
    #[error("field `{field}` must be {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("{0}")]
    Invalid(String),
}

/// Strips surrounding whitespace and at most one markdown code fence.
pub fn unwrap_lenient(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        if let Some(body) = rest.strip_suffix("```") {
            // drop the info string (e.g. `json`) on the opening line
            let body = match body.find('\n') {
                Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => &body[nl + 1..],
                _ => body,
            };
            return body.trim();
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Any string, possibly empty.
    Text,
    /// Non-empty string.
    NonEmpty,
    Bool,
    Belief,
    /// `{domain, state}` object, or null.
    Query,
    Any,
    Score,
}

fn fields(template: TemplateId) -> &'static [(&'static str, Kind)] {
    use Kind::*;
    match template {
        TemplateId::Dst => &[("critique", Text), ("belief_state", Belief), ("reason", Text)],
        TemplateId::Dp => &[
            ("critique", Text),
            ("system_action", NonEmpty),
            ("reason", Text),
            ("query_db", Bool),
            ("query", Query),
        ],
        TemplateId::Nlg => &[("critique", Text), ("system_utterance", NonEmpty), ("reason", Text)],
        TemplateId::UserSim => &[("critique", Text)],
        TemplateId::E2ePart1 => &[
            ("critique", Text),
            ("belief_state", Belief),
            ("system_action", NonEmpty),
            ("reason", Text),
            ("db_query_needed", Bool),
            ("query", Query),
            ("system_utterance", Text),
        ],
        TemplateId::E2ePart2 => &[("system_utterance", NonEmpty), ("reason", Text)],
        TemplateId::Arbiter => &[("final_output", Any), ("reason", Text), ("critique_accepted", Bool)],
        TemplateId::Genesis => &[("reason", Text), ("content", NonEmpty)],
        TemplateId::Mutation => &[("agent_type", NonEmpty), ("content", NonEmpty), ("reason", Text), ("score", Score)],
        TemplateId::Consolidation => &[("content", NonEmpty), ("reason", Text)],
    }
}

fn optional(template: TemplateId, name: &str, opts: PromptOptions) -> bool {
    template.is_online() && ((name == "critique" && !opts.critique) || (name == "reason" && !opts.reasoning))
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn normalize_state(field: &str, v: &Value) -> Result<Value, SchemaError> {
    let wrong = || SchemaError::WrongType {
        field: field.to_string(),
        expected: "an object of domain -> {slot: value}",
    };
    let obj = v.as_object().ok_or_else(wrong)?;
    let mut out = Map::new();
    for (domain, slots) in obj {
        let slots = slots.as_object().ok_or_else(wrong)?;
        let mut inner = Map::new();
        for (slot, value) in slots {
            if value.is_null() {
                continue;
            }
            let s = scalar_string(value).ok_or_else(wrong)?;
            inner.insert(slot.trim().to_lowercase(), Value::String(s));
        }
        out.insert(domain.trim().to_lowercase(), Value::Object(inner));
    }
    Ok(Value::Object(out))
}

fn check_object(template: TemplateId, obj: &Map<String, Value>, opts: PromptOptions, prefix: &str) -> Result<Map<String, Value>, SchemaError> {
    let mut out = obj.clone();
    for &(name, kind) in fields(template) {
        let path = format!("{prefix}{name}");
        let Some(v) = obj.get(name) else {
            if optional(template, name, opts) {
                out.insert(name.to_string(), Value::String(String::new()));
                continue;
            }
            return Err(SchemaError::Missing(path));
        };
        let wrong = |expected| SchemaError::WrongType {
            field: path.clone(),
            expected,
        };
        let normalized = match kind {
            Kind::Text => Value::String(match v {
                Value::Null => String::new(),
                other => scalar_string(other).ok_or_else(|| wrong("a string"))?,
            }),
            Kind::NonEmpty => {
                let s = v.as_str().map(str::trim).ok_or_else(|| wrong("a string"))?;
                if s.is_empty() {
                    return Err(wrong("a non-empty string"));
                }
                Value::String(s.to_string())
            }
            Kind::Bool => match v {
                Value::Bool(b) => Value::Bool(*b),
                Value::String(s) if s.eq_ignore_ascii_case("true") => Value::Bool(true),
                Value::String(s) if s.eq_ignore_ascii_case("false") => Value::Bool(false),
                _ => return Err(wrong("a boolean")),
            },
            Kind::Belief => normalize_state(&path, v)?,
            Kind::Query => match v {
                Value::Null => Value::Null,
                Value::Object(q) => {
                    let domain = q.get("domain").and_then(scalar_string).unwrap_or_default().to_lowercase();
                    let state = match q.get("state") {
                        None | Some(Value::Null) => Value::Object(Map::new()),
                        Some(s) => normalize_state(&format!("{path}.state"), s)?,
                    };
                    serde_json::json!({"domain": domain, "state": state})
                }
                _ => return Err(wrong("an object or null")),
            },
            Kind::Any => v.clone(),
            Kind::Score => {
                let n = match v {
                    Value::Number(n) => n.as_i64(),
                    Value::String(s) => s.trim().parse::<i64>().ok(),
                    _ => None,
                };
                match n {
                    Some(n @ -1..=1) => Value::from(n),
                    _ => return Err(wrong("one of 1, 0, -1")),
                }
            }
        };
        out.insert(name.to_string(), normalized);
    }
    Ok(out)
}

/// Validates a parsed reply and returns its normalized form.
pub fn validate_value(template: TemplateId, value: &Value, opts: PromptOptions) -> Result<Value, SchemaError> {
    match template {
        TemplateId::Genesis => {
            let list = value.as_array().ok_or_else(|| SchemaError::WrongType {
                field: "$".into(),
                expected: "a JSON array",
            })?;
            if list.is_empty() {
                return Err(SchemaError::Invalid("empty strategy list".into()));
            }
            let mut out = Vec::with_capacity(list.len());
            for (i, item) in list.iter().enumerate() {
                let obj = item.as_object().ok_or_else(|| SchemaError::WrongType {
                    field: format!("[{i}]"),
                    expected: "an object",
                })?;
                out.push(Value::Object(check_object(template, obj, opts, &format!("[{i}]."))?));
            }
            Ok(Value::Array(out))
        }
        TemplateId::Mutation => {
            let inner = value
                .get("strategy")
                .ok_or_else(|| SchemaError::Missing("strategy".into()))?
                .as_object()
                .ok_or_else(|| SchemaError::WrongType {
                    field: "strategy".into(),
                    expected: "an object",
                })?;
            let checked = check_object(template, inner, opts, "strategy.")?;
            Ok(serde_json::json!({ "strategy": checked }))
        }
        _ => {
            let obj = value.as_object().ok_or_else(|| SchemaError::WrongType {
                field: "$".into(),
                expected: "a JSON object",
            })?;
            let checked = check_object(template, obj, opts, "")?;
            let query_flag = match template {
                TemplateId::Dp => Some("query_db"),
                TemplateId::E2ePart1 => Some("db_query_needed"),
                _ => None,
            };
            if let Some(flag) = query_flag {
                if checked[flag] == Value::Bool(true) && checked["query"].is_null() {
                    return Err(SchemaError::Invalid(format!("`{flag}` is true but `query` is null")));
                }
            }
            Ok(Value::Object(checked))
        }
    }
}

/// Lenient unwrap, JSON parse, schema check, typed decode.
pub fn parse_reply<T: DeserializeOwned>(template: TemplateId, raw: &str, opts: PromptOptions) -> Result<T, SchemaError> {
    let value: Value = serde_json::from_str(unwrap_lenient(raw)).map_err(|e| SchemaError::NotJson(e.to_string()))?;
    let normalized = validate_value(template, &value, opts)?;
    serde_json::from_value(normalized).map_err(|e| SchemaError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbQuery {
    pub domain: String,
    pub state: BTreeMap<String, BTreeMap<String, String>>,
}

impl DbQuery {
    /// Constraints for the queried domain, falling back to the sole state entry.
    pub fn constraints(&self) -> BTreeMap<String, String> {
        self.state
            .get(&self.domain)
            .or_else(|| (self.state.len() == 1).then(|| self.state.values().next()).flatten())
            .cloned()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstReply {
    pub critique: String,
    pub belief_state: BeliefState,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpReply {
    pub critique: String,
    pub system_action: String,
    pub reason: String,
    pub query_db: bool,
    pub query: Option<DbQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlgReply {
    pub critique: String,
    pub system_utterance: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSimReply {
    pub critique: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2ePart1Reply {
    pub critique: String,
    pub belief_state: BeliefState,
    pub system_action: String,
    pub reason: String,
    pub db_query_needed: bool,
    pub query: Option<DbQuery>,
    pub system_utterance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2ePart2Reply {
    pub system_utterance: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbiterReply {
    pub final_output: Value,
    pub reason: String,
    pub critique_accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyStub {
    pub reason: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutatedStrategy {
    pub agent_type: String,
    pub content: String,
    pub reason: String,
    pub score: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationReply {
    pub strategy: MutatedStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidationReply {
    pub content: String,
    pub reason: String,
}
