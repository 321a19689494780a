//! Converter from MultiWOZ 2.x raw files (`data.json`, `*_db.json`, split lists)
//! into the neutral corpus and database formats.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use super::{Corpus, CorpusError, CorpusTurn, Dialog, DomainGoal, DomainSchema, Entity, Schema, Split, UserGoal};
use crate::types::DomainSet;

pub const MULTIWOZ_DOMAINS: [&str; 7] = [
    "attraction", "hotel", "restaurant", "taxi", "train", "hospital", "police",
];

/// Slot inventory of the MultiWOZ 2.x domains, with normalized lower-case slot names.
pub fn multiwoz_schema() -> Schema {
    let d = |informable: &[&str], requestable: &[&str], key: &str, bookable: &[&str]| DomainSchema {
        informable: informable.iter().map(|s| s.to_string()).collect(),
        requestable: requestable.iter().map(|s| s.to_string()).collect(),
        key: key.to_string(),
        bookable: bookable.iter().map(|s| s.to_string()).collect(),
    };
    let mut domains = BTreeMap::new();
    domains.insert(
        "attraction".into(),
        d(&["area", "type", "name"], &["address", "phone", "postcode", "entrancefee", "openhours"], "name", &[]),
    );
    domains.insert(
        "hotel".into(),
        d(
            &["area", "internet", "name", "parking", "pricerange", "stars", "type"],
            &["address", "phone", "postcode", "ref"],
            "name",
            &["day", "people", "stay"],
        ),
    );
    domains.insert(
        "restaurant".into(),
        d(
            &["area", "food", "name", "pricerange"],
            &["address", "phone", "postcode", "ref"],
            "name",
            &["day", "people", "time"],
        ),
    );
    domains.insert(
        "taxi".into(),
        d(&["arriveby", "departure", "destination", "leaveat"], &["car", "phone"], "car", &[]),
    );
    domains.insert(
        "train".into(),
        d(
            &["arriveby", "day", "departure", "destination", "leaveat"],
            &["duration", "price", "trainid", "ref"],
            "trainid",
            &["people"],
        ),
    );
    domains.insert("hospital".into(), d(&["department"], &["address", "phone", "postcode"], "department", &[]));
    domains.insert("police".into(), d(&["name"], &["address", "phone", "postcode"], "name", &[]));
    Schema { domains }
}

/// Normalizes a raw MultiWOZ slot name (`pricerange`, `leaveAt`, `trainID`, `entrance fee`).
pub fn normalize_slot(raw: &str) -> String {
    let s: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .collect::<String>()
        .to_lowercase();
    match s.as_str() {
        "price" => "price".into(),
        "reference" => "ref".into(),
        "cartype" | "taxitypes" => "car".into(),
        "id" => "trainid".into(),
        _ => s,
    }
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_lowercase()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

/// Dialog-id lists for the dev and test splits (`valListFile.txt`, `testListFile.txt`).
#[derive(Debug, Clone, Default)]
pub struct SplitLists {
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitLists {
    pub fn from_text(dev: &str, test: &str) -> Self {
        let ids = |t: &str| t.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
        SplitLists {
            dev: ids(dev),
            test: ids(test),
        }
    }

    fn split_of(&self, id: &str) -> Split {
        if self.test.contains(id) {
            Split::Test
        } else if self.dev.contains(id) {
            Split::Dev
        } else {
            Split::Train
        }
    }
}

/// Converts a raw `data.json` document. Slots outside `schema` are dropped.
pub fn convert_dialogs(raw: &str, splits: &SplitLists, schema: &Schema) -> Result<Corpus, CorpusError> {
    let root: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
        path: "data.json".into(),
        message: e.to_string(),
    })?;
    let obj = root.as_object().ok_or_else(|| CorpusError::Parse {
        path: "data.json".into(),
        message: "expected an object keyed by dialog id".into(),
    })?;
    let mut dialogs = Vec::with_capacity(obj.len());
    for (id, raw_dialog) in obj {
        let fail = |field: &str, message: &str| CorpusError::Invalid {
            dialog_id: id.clone(),
            field: field.into(),
            message: message.into(),
        };
        let goal_raw = raw_dialog.get("goal").and_then(Value::as_object).ok_or_else(|| fail("goal", "missing"))?;
        let mut goal = UserGoal::default();
        for (domain, g) in goal_raw {
            let Some(ds) = schema.domain(domain) else { continue };
            let Some(g) = g.as_object() else { continue };
            if g.is_empty() {
                continue;
            }
            let mut dg = DomainGoal::default();
            if let Some(info) = g.get("info").and_then(Value::as_object) {
                for (k, v) in info {
                    let slot = normalize_slot(k);
                    if ds.has_slot(&slot) {
                        if let Some(v) = value_to_string(v) {
                            dg.inform.insert(slot, v);
                        }
                    }
                }
            }
            if let Some(reqt) = g.get("reqt").and_then(Value::as_array) {
                for r in reqt.iter().filter_map(Value::as_str) {
                    let slot = normalize_slot(r);
                    if ds.has_slot(&slot) && !dg.request.contains(&slot) {
                        dg.request.push(slot);
                    }
                }
            }
            if let Some(book) = g.get("book").and_then(Value::as_object) {
                for (k, v) in book {
                    let slot = normalize_slot(k);
                    if ds.bookable.contains(&slot) {
                        if let Some(v) = value_to_string(v) {
                            dg.book.insert(slot, v);
                        }
                    }
                }
            }
            goal.domains.insert(domain.clone(), dg);
        }
        if let Some(msg) = goal_raw.get("message") {
            let text = match msg {
                Value::Array(parts) => parts.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" "),
                Value::String(s) => s.clone(),
                _ => String::new(),
            };
            let text = strip_tags(&text);
            if !text.trim().is_empty() {
                goal.description = Some(text.trim().to_string());
            }
        }
        let domains = goal.domain_set().ok_or_else(|| fail("goal", "no known domain"))?;
        let log = raw_dialog.get("log").and_then(Value::as_array).ok_or_else(|| fail("log", "missing"))?;
        let texts: Vec<String> = log
            .iter()
            .map(|t| t.get("text").and_then(Value::as_str).unwrap_or_default().trim().to_string())
            .collect();
        let turns: Vec<CorpusTurn> = texts
            .chunks(2)
            .map(|pair| CorpusTurn {
                user: pair[0].clone(),
                system: pair.get(1).cloned().unwrap_or_default(),
            })
            .collect();
        let id_stem = id.trim_end_matches(".json").to_string();
        let split = splits.split_of(id).max(splits.split_of(&id_stem));
        dialogs.push(Dialog {
            dialog_id: id_stem,
            split,
            domains: DomainSet::new(domains.iter()).expect("non-empty"),
            goal,
            turns,
        });
    }
    Ok(Corpus { dialogs })
}

/// Converts one raw `<domain>_db.json` entity list, keeping schema slots only.
pub fn convert_db(domain: &str, raw: &str, schema: &Schema) -> Result<Vec<Entity>, CorpusError> {
    let ds = schema
        .domain(domain)
        .ok_or_else(|| CorpusError::Schema(format!("unknown domain `{domain}`")))?;
    let root: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
        path: format!("{domain}_db.json"),
        message: e.to_string(),
    })?;
    let list = root.as_array().ok_or_else(|| CorpusError::Parse {
        path: format!("{domain}_db.json"),
        message: "expected an array".into(),
    })?;
    let mut out = Vec::with_capacity(list.len());
    for item in list {
        let Some(obj) = item.as_object() else { continue };
        let mut e = Entity::new();
        for (k, v) in obj {
            let slot = normalize_slot(k);
            if ds.has_slot(&slot) {
                if let Some(v) = value_to_string(v) {
                    e.insert(slot, v);
                }
            }
        }
        if e.contains_key(&ds.key) {
            out.push(e);
        }
    }
    Ok(out)
}
