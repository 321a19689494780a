use std::collections::BTreeMap;

use thiserror::Error;

use super::belief::DONTCARE;
use crate::corpus::{DomainDatabase, Entity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown slot `{slot}` for domain `{domain}`")]
    UnknownSlot { domain: String, slot: String },
}

/// Entities of `domain` matching every constraint. Matching is
/// case-insensitive string equality; `dontcare` and empty values match all.
pub fn query_database<'a>(
    db: &'a DomainDatabase,
    domain: &str,
    constraints: &BTreeMap<String, String>,
) -> Result<Vec<&'a Entity>, QueryError> {
    let schema = db
        .schema
        .domain(domain)
        .ok_or_else(|| QueryError::UnknownDomain(domain.to_string()))?;
    let mut active = Vec::new();
    for (slot, value) in constraints {
        if !schema.has_slot(slot) {
            return Err(QueryError::UnknownSlot {
                domain: domain.to_string(),
                slot: slot.clone(),
            });
        }
        let v = value.trim().to_lowercase();
        if !v.is_empty() && v != DONTCARE {
            active.push((slot.as_str(), v));
        }
    }
    let entities = db.domain(domain).unwrap_or_default();
    Ok(entities
        .iter()
        .filter(|e| {
            active
                .iter()
                .all(|(slot, v)| e.get(*slot).is_some_and(|x| x.to_lowercase() == *v))
        })
        .collect())
}

/// Whether `entity` satisfies every goal constraint of its domain.
pub fn satisfies(entity: &Entity, constraints: &BTreeMap<String, String>) -> bool {
    constraints.iter().all(|(slot, value)| {
        let v = value.trim().to_lowercase();
        v.is_empty() || v == DONTCARE || entity.get(slot).is_some_and(|x| x.to_lowercase() == v)
    })
}
