//! Task-success assessment over a finished dialog.
//!
//! Inform holds when, for every goal domain with constraints, the last entity
//! the system offered satisfies them. Success additionally requires that every
//! requested slot's value (or its `[domain_slot]` placeholder) appears in some
//! system response.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::action::SystemAction;
use super::database::satisfies;
use crate::corpus::{DomainDatabase, UserGoal};
use crate::memory::TurnRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogVerdict {
    pub inform: bool,
    pub success: bool,
    /// Key value of the last offered entity per goal domain.
    pub offered: BTreeMap<String, Option<String>>,
}

/// Finds `needle` in `haystack` as a whole-word match; returns the last start.
pub(crate) fn rfind_whole(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    let mut last = None;
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let at = start + pos;
        let before = haystack[..at].chars().next_back();
        let after = haystack[at + needle.len()..].chars().next();
        if boundary(before) && boundary(after) {
            last = Some(at);
        }
        start = at + needle.len().max(1);
        while !haystack.is_char_boundary(start) {
            start += 1;
        }
    }
    last
}

/// Key value of the entity of `domain` mentioned last across `turns`.
/// Within a turn, the action precedes the response.
pub fn last_offered(turns: &[TurnRecord], domain: &str, db: &DomainDatabase) -> Option<String> {
    let key = &db.schema.domain(domain)?.key;
    let keys: Vec<String> = db
        .domain(domain)?
        .iter()
        .filter_map(|e| e.get(key))
        .map(|v| v.to_lowercase())
        .collect();
    let mut last = None;
    for turn in turns {
        if let Ok(action) = SystemAction::parse(&turn.system_action) {
            for v in action.mentioned_values() {
                let v = v.trim().to_lowercase();
                if keys.contains(&v) {
                    last = Some(v);
                }
            }
        }
        let response = turn.system_response.to_lowercase();
        let mut best: Option<(usize, usize, &String)> = None;
        for k in &keys {
            if let Some(pos) = rfind_whole(&response, k) {
                // later position wins; at equal position the longer name wins
                let cand = (pos, k.len(), k);
                if best.is_none_or(|b| (cand.0, cand.1) > (b.0, b.1)) {
                    best = Some(cand);
                }
            }
        }
        if let Some((_, _, k)) = best {
            last = Some(k.clone());
        }
    }
    last
}

pub fn evaluate_dialog(goal: &UserGoal, turns: &[TurnRecord], db: &DomainDatabase) -> DialogVerdict {
    let responses: Vec<String> = turns.iter().map(|t| t.system_response.to_lowercase()).collect();
    let mut inform = true;
    let mut requests_met = true;
    let mut offered = BTreeMap::new();
    for (domain, g) in &goal.domains {
        let key = last_offered(turns, domain, db);
        let entity = key.as_deref().and_then(|k| db.entity_by_key(domain, k));
        if !g.inform.is_empty() && !entity.is_some_and(|e| satisfies(e, &g.inform)) {
            inform = false;
        }
        for slot in &g.request {
            let placeholder = format!("[{domain}_{slot}]");
            let value = entity.and_then(|e| e.get(slot)).map(|v| v.to_lowercase());
            let found = responses.iter().any(|r| {
                r.contains(&placeholder) || value.as_deref().is_some_and(|v| !v.is_empty() && r.contains(v))
            });
            if !found {
                requests_met = false;
            }
        }
        offered.insert(domain.clone(), key);
    }
    DialogVerdict {
        inform,
        success: inform && requests_met,
        offered,
    }
}
