//! Corpus ingestion: goals, reference dialogs, domain schemas and entity databases.
//!
//! The on-disk formats are deliberately neutral JSON documents (see
//! `docs/formats.md`); [`multiwoz`] converts MultiWOZ 2.x raw files into them and
//! [`synth`] generates a deterministic mini-corpus whose ground truth is known.

mod delex;
pub mod multiwoz;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DomainSet;

pub use delex::Delexicalizer;

/// Default cap on turns per dialog.
pub const DEFAULT_MAX_TURNS: usize = 30;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dialog `{dialog_id}`: field `{field}`: {message}")]
    Invalid {
        dialog_id: String,
        field: String,
        message: String,
    },
    #[error("database: {0}")]
    Database(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Slots of one domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    /// Constraint slots a user may state.
    pub informable: Vec<String>,
    /// Attribute slots a user may ask for.
    pub requestable: Vec<String>,
    /// Slot naming the entity (e.g. `name`, `trainid`).
    pub key: String,
    #[serde(default)]
    pub bookable: Vec<String>,
}

impl DomainSchema {
    pub fn has_slot(&self, slot: &str) -> bool {
        slot == self.key
            || self.informable.iter().any(|s| s == slot)
            || self.requestable.iter().any(|s| s == slot)
            || self.bookable.iter().any(|s| s == slot)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub domains: BTreeMap<String, DomainSchema>,
}

impl Schema {
    pub fn domain(&self, name: &str) -> Option<&DomainSchema> {
        self.domains.get(name)
    }

    pub fn has_slot(&self, domain: &str, slot: &str) -> bool {
        self.domains.get(domain).is_some_and(|d| d.has_slot(slot))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        read_json(path.as_ref())
    }
}

pub type Entity = BTreeMap<String, String>;

/// Per-domain entity lists plus the schema they conform to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainDatabase {
    pub schema: Schema,
    pub entities: BTreeMap<String, Vec<Entity>>,
}

impl DomainDatabase {
    /// Builds a database and checks that every entity carries its domain's key slot
    /// and only schema slots.
    pub fn new(schema: Schema, entities: BTreeMap<String, Vec<Entity>>) -> Result<Self, CorpusError> {
        for (domain, list) in &entities {
            let ds = schema
                .domain(domain)
                .ok_or_else(|| CorpusError::Database(format!("domain `{domain}` missing from schema")))?;
            for (i, e) in list.iter().enumerate() {
                if !e.contains_key(&ds.key) {
                    return Err(CorpusError::Database(format!(
                        "{domain} entity {i} lacks key slot `{}`",
                        ds.key
                    )));
                }
                if let Some(bad) = e.keys().find(|k| !ds.has_slot(k)) {
                    return Err(CorpusError::Database(format!(
                        "{domain} entity {i} has slot `{bad}` outside the schema"
                    )));
                }
            }
        }
        Ok(DomainDatabase { schema, entities })
    }

    pub fn domain(&self, name: &str) -> Option<&[Entity]> {
        self.entities.get(name).map(Vec::as_slice)
    }

    /// Finds an entity of `domain` by its key value, case-insensitively.
    pub fn entity_by_key(&self, domain: &str, key_value: &str) -> Option<&Entity> {
        let key = &self.schema.domain(domain)?.key;
        let wanted = key_value.trim().to_lowercase();
        self.domain(domain)?
            .iter()
            .find(|e| e.get(key).is_some_and(|v| v.to_lowercase() == wanted))
    }

    /// Loads entities either from one JSON object `{domain: [entity, ...]}` or
    /// from a directory holding one `<domain>.json` array per domain.
    pub fn load(schema: Schema, path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let entities = if path.is_dir() {
            let mut map = BTreeMap::new();
            let mut files: Vec<_> = fs::read_dir(path)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for file in files {
                let domain = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_lowercase();
                map.insert(domain, read_json::<Vec<Entity>>(&file)?);
            }
            map
        } else {
            read_json(path)?
        };
        DomainDatabase::new(schema, entities)
    }

    pub fn save_entities(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        write_json(path.as_ref(), &self.entities)
    }
}

/// What the user wants from one domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    /// Informable constraints, slot -> value.
    #[serde(default)]
    pub inform: BTreeMap<String, String>,
    /// Requested attribute slots.
    #[serde(default)]
    pub request: Vec<String>,
    /// Booking requirements, slot -> value.
    #[serde(default)]
    pub book: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub domains: BTreeMap<String, DomainGoal>,
    /// Free-text goal description, when the corpus provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl UserGoal {
    pub fn domain_set(&self) -> Option<DomainSet> {
        DomainSet::new(self.domains.keys()).ok()
    }

    /// Human-readable goal listing for prompts.
    pub fn render(&self) -> String {
        if let Some(d) = &self.description {
            return d.clone();
        }
        let mut out = Vec::new();
        for (domain, g) in &self.domains {
            let inform: Vec<String> = g.inform.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let mut line = format!("{domain}: constraints [{}]", inform.join(", "));
            if !g.request.is_empty() {
                line.push_str(&format!("; requests [{}]", g.request.join(", ")));
            }
            if !g.book.is_empty() {
                let book: Vec<String> = g.book.iter().map(|(k, v)| format!("{k}={v}")).collect();
                line.push_str(&format!("; booking [{}]", book.join(", ")));
            }
            out.push(line);
        }
        out.join("\n")
    }

    pub fn validate(&self, schema: Option<&Schema>) -> Result<(), String> {
        if self.domains.is_empty() {
            return Err("goal has no domains".into());
        }
        if let Some(schema) = schema {
            for (domain, g) in &self.domains {
                let ds = schema
                    .domain(domain)
                    .ok_or_else(|| format!("domain `{domain}` not in schema"))?;
                let slots = g.inform.keys().chain(&g.request).chain(g.book.keys());
                for slot in slots {
                    if !ds.has_slot(slot) {
                        return Err(format!("slot `{domain}.{slot}` not in schema"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One user utterance and the reference system reply that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusTurn {
    pub user: String,
    #[serde(default)]
    pub system: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub split: Split,
    pub domains: DomainSet,
    pub goal: UserGoal,
    pub turns: Vec<CorpusTurn>,
}

impl Dialog {
    pub fn user_utterances(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.user.as_str())
    }

    pub fn reference_responses(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.system.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogs: Vec<Dialog>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Dialog> {
        self.dialogs.iter().filter(move |d| d.split == split)
    }

    pub fn validate(&self, schema: Option<&Schema>, max_turns: usize) -> Result<(), CorpusError> {
        for d in &self.dialogs {
            let fail = |field: &str, message: String| CorpusError::Invalid {
                dialog_id: d.dialog_id.clone(),
                field: field.to_string(),
                message,
            };
            d.goal.validate(schema).map_err(|m| fail("goal", m))?;
            let goal_domains = d.goal.domain_set().ok_or_else(|| fail("goal", "empty".into()))?;
            if !goal_domains.is_subset(&d.domains) {
                return Err(fail("domains", format!("goal domains {goal_domains} not within {}", d.domains)));
            }
            if d.turns.is_empty() {
                return Err(fail("turns", "no turns".into()));
            }
            if d.turns.len() * 2 > 2 * max_turns {
                return Err(fail("turns", format!("{} turns exceed the cap {max_turns}", d.turns.len())));
            }
            if let Some(i) = d.turns.iter().position(|t| t.user.trim().is_empty()) {
                return Err(fail("turns", format!("user utterance {i} is empty")));
            }
        }
        Ok(())
    }

    /// Parses a corpus document and validates it. Dialog order is preserved.
    pub fn from_json(text: &str, schema: Option<&Schema>) -> Result<Self, CorpusError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
            path: "<corpus>".into(),
            message: e.to_string(),
        })?;
        let items = raw
            .get("dialogs")
            .and_then(|d| d.as_array())
            .ok_or_else(|| CorpusError::Parse {
                path: "<corpus>".into(),
                message: "expected an object with a `dialogs` array".into(),
            })?;
        let mut dialogs = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let dialog_id = item
                .get("dialog_id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{i}"));
            let dialog: Dialog = serde_json::from_value(item.clone()).map_err(|e| {
                let msg = e.to_string();
                let field = msg
                    .split('`')
                    .nth(1)
                    .unwrap_or("record")
                    .to_string();
                CorpusError::Invalid {
                    dialog_id: dialog_id.clone(),
                    field,
                    message: msg,
                }
            })?;
            dialogs.push(dialog);
        }
        let corpus = Corpus { dialogs };
        corpus.validate(schema, DEFAULT_MAX_TURNS)?;
        Ok(corpus)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("corpus serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    Corpus::from_json(&text, schema).map_err(|e| match e {
        CorpusError::Parse { message, .. } => CorpusError::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text)?;
    Ok(())
}
