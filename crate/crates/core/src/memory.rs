//! Append-only store of complete dialog trajectories.
//!
//! On disk the store is a JSON Lines log (one trajectory per line) plus an
//! index file of `{record_id, offset, len, sha256}` lines used to address
//! windows without re-parsing the whole log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::UserGoal;
use crate::pipeline::action::SystemAction;
use crate::pipeline::belief::BeliefState;
use crate::types::{AgentRole, AgentType, DomainSet, StrategyId};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("trajectory `{dialog_id}`: field `{field}`: {message}")]
    Invalid {
        dialog_id: String,
        field: String,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CorpusReplay,
    LiveChat,
}

/// One critique produced during a turn. Empty `text` means no issue found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueEntry {
    pub author: AgentRole,
    pub target: AgentRole,
    pub text: String,
    #[serde(default)]
    pub rationale: String,
}

impl CritiqueEntry {
    pub fn is_negative(&self) -> bool {
        !self.text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    pub user_utterance: String,
    pub belief_state: BeliefState,
    pub system_action: String,
    pub system_response: String,
    pub critiques: Vec<CritiqueEntry>,
    #[serde(default)]
    pub db_result_count: Option<usize>,
    /// Set when an agent produced no valid structured output after retries.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arbitrations: Vec<ArbitrationRecord>,
}

/// Outcome of one arbiter call on a critique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArbitrationRecord {
    pub target: AgentRole,
    pub critic: AgentRole,
    pub accepted: bool,
    /// Whether the arbiter's final output replaced the target's output.
    pub applied: bool,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Assigned by the store on append; 0 before that.
    #[serde(default)]
    pub record_id: u64,
    pub dialog_id: String,
    pub domains: DomainSet,
    pub goal: UserGoal,
    pub strategies_used: BTreeMap<AgentType, StrategyId>,
    pub turns: Vec<TurnRecord>,
    pub outcome: Outcome,
    pub source: Source,
}

impl Trajectory {
    pub fn validate(&self, max_turns: usize) -> Result<(), MemoryError> {
        let fail = |field: &str, message: String| MemoryError::Invalid {
            dialog_id: self.dialog_id.clone(),
            field: field.to_string(),
            message,
        };
        if self.turns.is_empty() {
            return Err(fail("turns", "no turns".into()));
        }
        if self.turns.len() > max_turns {
            return Err(fail("turns", format!("{} turns exceed the cap {max_turns}", self.turns.len())));
        }
        for t in AgentType::ALL {
            if !self.strategies_used.contains_key(&t) {
                return Err(fail("strategies_used", format!("no {t} strategy")));
            }
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if !turn.belief_state.within(&self.domains) {
                return Err(fail(
                    "turns.belief_state",
                    format!("turn {i} tracks a domain outside {}", self.domains),
                ));
            }
            if !turn.aborted {
                SystemAction::parse(&turn.system_action)
                    .map_err(|e| fail("turns.system_action", format!("turn {i}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Used strategies that mutation should revisit: all of them on failure,
    /// otherwise those whose agent was the target of a non-empty critique.
    pub fn flagged_strategies(&self) -> BTreeSet<StrategyId> {
        if !self.outcome.is_success() {
            return self.strategies_used.values().cloned().collect();
        }
        self.turns
            .iter()
            .flat_map(|t| &t.critiques)
            .filter(|c| c.is_negative())
            .filter_map(|c| c.target.as_agent_type())
            .filter_map(|a| self.strategies_used.get(&a).cloned())
            .collect()
    }

    /// Whether any non-empty critique in the dialog targets `agent`.
    pub fn criticized(&self, agent: AgentType) -> bool {
        self.turns
            .iter()
            .flat_map(|t| &t.critiques)
            .any(|c| c.is_negative() && c.target.as_agent_type() == Some(agent))
    }
}

/// Which stored trajectories a query addresses. Cursors are record ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    All,
    /// Records with id strictly greater than the cursor.
    Since(u64),
    /// Records with `from <= id < to`.
    Range(u64, u64),
}

impl Window {
    fn contains(self, id: u64) -> bool {
        match self {
            Window::All => true,
            Window::Since(c) => id > c,
            Window::Range(a, b) => a <= id && id < b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    record_id: u64,
    offset: u64,
    len: u64,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The append-only trajectory store. Without a path it lives only in memory.
#[derive(Debug, Default)]
pub struct MemoryStore {
    path: Option<PathBuf>,
    records: Vec<Trajectory>,
    index: Vec<IndexEntry>,
    offset: u64,
    max_turns: usize,
}

impl MemoryStore {
    pub fn in_memory(max_turns: usize) -> Self {
        MemoryStore {
            max_turns,
            ..Default::default()
        }
    }

    /// Opens (or creates) a log at `path`; the index lives at `<path>.idx`.
    /// A missing or stale index is rebuilt from the log.
    pub fn open(path: impl AsRef<Path>, max_turns: usize) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut store = MemoryStore {
            path: Some(path.clone()),
            max_turns,
            ..Default::default()
        };
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.split(b'\n').enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let traj: Trajectory = serde_json::from_slice(&line).map_err(|e| MemoryError::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                store.index.push(IndexEntry {
                    record_id: traj.record_id,
                    offset: store.offset,
                    len: line.len() as u64,
                    sha256: hex(&Sha256::digest(&line)),
                });
                store.offset += line.len() as u64 + 1;
                store.records.push(traj);
            }
        }
        let idx_path = store.index_path().expect("path set");
        let on_disk = fs::read_to_string(&idx_path).unwrap_or_default();
        let parsed: Vec<IndexEntry> = on_disk
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect();
        if parsed != store.index {
            let mut text = String::new();
            for e in &store.index {
                text.push_str(&serde_json::to_string(e).expect("index serializes"));
                text.push('\n');
            }
            fs::write(&idx_path, text)?;
        }
        Ok(store)
    }

    fn index_path(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".idx");
            PathBuf::from(s)
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Id of the newest record, 0 when empty.
    pub fn last_id(&self) -> u64 {
        self.records.last().map_or(0, |t| t.record_id)
    }

    /// Validates and appends; returns the assigned record id.
    pub fn append(&mut self, mut traj: Trajectory) -> Result<u64, MemoryError> {
        traj.validate(self.max_turns)?;
        traj.record_id = self.last_id() + 1;
        let line = serde_json::to_string(&traj).expect("trajectory serializes");
        let entry = IndexEntry {
            record_id: traj.record_id,
            offset: self.offset,
            len: line.len() as u64,
            sha256: hex(&Sha256::digest(line.as_bytes())),
        };
        if let (Some(path), Some(idx)) = (self.path.clone(), self.index_path()) {
            let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
            log.write_all(line.as_bytes())?;
            log.write_all(b"\n")?;
            log.sync_data()?;
            let mut ix = OpenOptions::new().create(true).append(true).open(idx)?;
            writeln!(ix, "{}", serde_json::to_string(&entry).expect("index serializes"))?;
        }
        self.offset += line.len() as u64 + 1;
        self.index.push(entry);
        let id = traj.record_id;
        self.records.push(traj);
        Ok(id)
    }

    pub fn get(&self, record_id: u64) -> Option<&Trajectory> {
        // ids are dense from 1
        self.records
            .get(record_id.checked_sub(1)? as usize)
            .filter(|t| t.record_id == record_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.records.iter()
    }

    pub fn window(&self, window: Window) -> impl Iterator<Item = &Trajectory> {
        self.records.iter().filter(move |t| window.contains(t.record_id))
    }

    /// Trajectories in `window`, each with the strategies flagged for mutation.
    pub fn query_for_evolution(&self, window: Window) -> Vec<(&Trajectory, BTreeSet<StrategyId>)> {
        self.window(window).map(|t| (t, t.flagged_strategies())).collect()
    }

    /// SHA-256 over the per-record hashes; changes iff any stored byte changes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.index {
            h.update(e.sha256.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Re-reads the log from disk and checks it against the in-memory index.
    pub fn verify(&self) -> Result<bool, MemoryError> {
        let Some(path) = &self.path else {
            return Ok(true);
        };
        let bytes = fs::read(path)?;
        Ok(self.index.iter().all(|e| {
            let (a, b) = (e.offset as usize, (e.offset + e.len) as usize);
            bytes.get(a..b).is_some_and(|line| hex(&Sha256::digest(line)) == e.sha256)
        }))
    }
}
