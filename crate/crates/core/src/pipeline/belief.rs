use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::DomainSet;

/// Wildcard slot value that matches anything.
pub const DONTCARE: &str = "dontcare";

/// Per-domain slot -> value map tracked by the state tracker.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState(pub BTreeMap<String, BTreeMap<String, String>>);

impl BeliefState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn domain(&self, domain: &str) -> Option<&BTreeMap<String, String>> {
        self.0.get(domain)
    }

    pub fn set(&mut self, domain: &str, slot: &str, value: &str) {
        self.0
            .entry(domain.to_string())
            .or_default()
            .insert(slot.to_string(), value.to_string());
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(|m| m.is_empty())
    }

    /// True when every domain key lies in `allowed`.
    pub fn within(&self, allowed: &DomainSet) -> bool {
        self.0.keys().all(|d| allowed.contains(d))
    }

    /// Drops domains outside `allowed`; returns the dropped domain names.
    pub fn restrict_to(&mut self, allowed: &DomainSet) -> Vec<String> {
        let dropped: Vec<String> = self.0.keys().filter(|d| !allowed.contains(d)).cloned().collect();
        for d in &dropped {
            self.0.remove(d);
        }
        self.0.retain(|_, slots| !slots.is_empty());
        dropped
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("belief state serializes")
    }
}
