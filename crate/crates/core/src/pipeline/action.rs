//! Parser for the system-action grammar exchanged between the policy and the
//! generator agents:
//!
//! ```text
//! action := act ( "," act )*
//! act    := name "(" [ arg ( "," arg )* ] ")"
//! arg    := slot "=" value | value
//! name   := inform | request | recommend | select | nooffer | book
//!         | nobook | offerbook | offerbooked
//! ```
//!
//! Slots may carry a domain prefix (`train.departure`).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Schema;
use crate::types::DomainSet;

/// Slots valid in every domain: result counts, booking references, and the
/// placeholder for argument-free acts.
pub const GENERIC_SLOTS: [&str; 3] = ["choice", "ref", "none"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionError {
    #[error("empty system action")]
    Empty,
    #[error("unknown dialog act `{0}`")]
    UnknownAct(String),
    #[error("malformed action near `{0}`")]
    Malformed(String),
    #[error("slot `{0}` is not defined for domains {1}")]
    UnknownSlot(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActType {
    Inform,
    Request,
    Recommend,
    Select,
    NoOffer,
    Book,
    NoBook,
    OfferBook,
    OfferBooked,
}

impl ActType {
    pub fn name(self) -> &'static str {
        match self {
            ActType::Inform => "inform",
            ActType::Request => "request",
            ActType::Recommend => "recommend",
            ActType::Select => "select",
            ActType::NoOffer => "nooffer",
            ActType::Book => "book",
            ActType::NoBook => "nobook",
            ActType::OfferBook => "offerbook",
            ActType::OfferBooked => "offerbooked",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "inform" => ActType::Inform,
            "request" => ActType::Request,
            "recommend" => ActType::Recommend,
            "select" => ActType::Select,
            "nooffer" => ActType::NoOffer,
            "book" => ActType::Book,
            "nobook" => ActType::NoBook,
            "offerbook" => ActType::OfferBook,
            "offerbooked" => ActType::OfferBooked,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActArg {
    Pair { slot: String, value: String },
    Bare(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogAct {
    pub act: ActType,
    pub args: Vec<ActArg>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemAction(pub Vec<DialogAct>);

impl SystemAction {
    pub fn parse(text: &str) -> Result<Self, ActionError> {
        let mut acts = Vec::new();
        let mut rest = text.trim();
        if rest.is_empty() {
            return Err(ActionError::Empty);
        }
        while !rest.is_empty() {
            let open = rest.find('(').ok_or_else(|| ActionError::Malformed(rest.to_string()))?;
            let name = rest[..open].trim();
            let act = ActType::parse(name).ok_or_else(|| ActionError::UnknownAct(name.to_string()))?;
            let close = rest[open..]
                .find(')')
                .map(|i| i + open)
                .ok_or_else(|| ActionError::Malformed(rest.to_string()))?;
            let inner = &rest[open + 1..close];
            if inner.contains('(') {
                return Err(ActionError::Malformed(rest[..=close].to_string()));
            }
            let args = inner
                .split(',')
                .map(str::trim)
                .filter(|a| !a.is_empty())
                .map(|a| match a.split_once('=') {
                    Some((s, v)) => ActArg::Pair {
                        slot: s.trim().to_lowercase(),
                        value: v.trim().trim_matches(['"', '\'']).to_string(),
                    },
                    None => ActArg::Bare(a.trim_matches(['"', '\'']).to_string()),
                })
                .collect();
            acts.push(DialogAct { act, args });
            rest = rest[close + 1..].trim_start();
            if let Some(r) = rest.strip_prefix([',', ';']) {
                rest = r.trim_start();
                if rest.is_empty() {
                    return Err(ActionError::Malformed(",".into()));
                }
            } else if !rest.is_empty() && !rest.starts_with(char::is_alphabetic) {
                return Err(ActionError::Malformed(rest.to_string()));
            }
        }
        Ok(SystemAction(acts))
    }

    /// Checks that every named slot exists in the schema of one of `domains`
    /// or is one of the domain-independent [`GENERIC_SLOTS`].
    pub fn validate_slots(&self, schema: &Schema, domains: &DomainSet) -> Result<(), ActionError> {
        for act in &self.0 {
            for arg in &act.args {
                let slot = match (act.act, arg) {
                    (_, ActArg::Pair { slot, .. }) => slot.as_str(),
                    (ActType::Request, ActArg::Bare(slot)) => slot.as_str(),
                    _ => continue,
                };
                if GENERIC_SLOTS.contains(&slot) {
                    continue;
                }
                let ok = match slot.split_once('.') {
                    Some((d, s)) => domains.contains(d) && schema.has_slot(d, &s.replace(' ', "")),
                    None => domains.iter().any(|d| schema.has_slot(d, &slot.replace(' ', ""))),
                };
                if !ok {
                    return Err(ActionError::UnknownSlot(slot.to_string(), domains.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Values that may name an entity: bare arguments of offer acts and values
    /// of key-like slots, in order of appearance.
    pub fn mentioned_values(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for act in &self.0 {
            for arg in &act.args {
                match arg {
                    ActArg::Bare(v)
                        if matches!(
                            act.act,
                            ActType::Recommend | ActType::Select | ActType::OfferBooked | ActType::Inform
                        ) =>
                    {
                        out.push(v.as_str())
                    }
                    ActArg::Pair { value, .. } => out.push(value.as_str()),
                    _ => {}
                }
            }
        }
        out
    }

    pub fn acts(&self) -> &[DialogAct] {
        &self.0
    }
}

impl fmt::Display for SystemAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|a| {
                let args: Vec<String> = a
                    .args
                    .iter()
                    .map(|arg| match arg {
                        ActArg::Pair { slot, value } => format!("{slot}={value}"),
                        ActArg::Bare(v) => v.clone(),
                    })
                    .collect();
                format!("{}({})", a.act.name(), args.join(","))
            })
            .collect();
        f.write_str(&parts.join(", "))
    }
}
