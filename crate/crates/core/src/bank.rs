//! The evolvable strategy bank.
//!
//! Holds every strategy ever created (dead ones are kept for lineage audits),
//! the feedback counters that drive fitness, and the JSON snapshot format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AgentType, DomainSet, PopulationKey, StrategyId};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("strategy `{0}` not found")]
    NotFound(StrategyId),
    #[error("strategy `{0}` is not alive")]
    Dead(StrategyId),
    #[error("invalid strategy: {0}")]
    Invalid(String),
    #[error("snapshot record {index}{}: {message}", .id.as_ref().map(|i| format!(" (id `{i}`)")).unwrap_or_default())]
    Snapshot {
        index: usize,
        id: Option<String>,
        message: String,
    },
    #[error("snapshot is not a JSON array of strategy records: {0}")]
    SnapshotShape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feedback and lineage counters of one strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMetadata {
    pub positive_feedback: u64,
    pub negative_feedback: u64,
    pub usage_count: u64,
    pub generation_index: u64,
    /// Part of `usage_count` inherited from parents at creation time.
    #[serde(default)]
    pub inherited_usage: u64,
}

impl StrategyMetadata {
    pub fn fresh(generation_index: u64) -> Self {
        StrategyMetadata {
            generation_index,
            ..Default::default()
        }
    }

    /// Component-wise average of the feedback counters, rounded half-up.
    /// The generation index is left at zero for the caller to set.
    pub fn averaged<'a>(sources: impl IntoIterator<Item = &'a StrategyMetadata>) -> Self {
        let sources: Vec<_> = sources.into_iter().collect();
        let n = sources.len() as u64;
        if n == 0 {
            return StrategyMetadata::default();
        }
        let avg = |f: fn(&StrategyMetadata) -> u64| round_half_up_div(sources.iter().map(|m| f(m)).sum(), n);
        let usage = avg(|m| m.usage_count);
        StrategyMetadata {
            positive_feedback: avg(|m| m.positive_feedback),
            negative_feedback: avg(|m| m.negative_feedback),
            usage_count: usage,
            generation_index: 0,
            inherited_usage: usage,
        }
    }
}

/// `round(sum / n)` with ties rounded up, in integer arithmetic.
pub fn round_half_up_div(sum: u64, n: u64) -> u64 {
    (2 * sum + n) / (2 * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        FitnessParams {
            alpha: 0.3,
            epsilon: 0.01,
        }
    }
}

impl FitnessParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0) {
            return Err(format!("fitness epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.alpha >= 0.0) {
            return Err(format!("fitness alpha must be >= 0, got {}", self.alpha));
        }
        Ok(())
    }
}

/// Smoothed net feedback plus a bonus for newer generations:
/// `(H+ - H-) / (N + eps) + alpha * gen_norm`.
pub fn compute_fitness(meta: &StrategyMetadata, gen_norm: f64, params: &FitnessParams) -> f64 {
    let net = meta.positive_feedback as f64 - meta.negative_feedback as f64;
    net / (meta.usage_count as f64 + params.epsilon) + params.alpha * gen_norm
}

/// Min-max normalize generation indices into `[0, 1]`. A population whose
/// generations are all equal maps to zero.
pub fn normalize_generations(generations: &[u64]) -> Vec<f64> {
    let (Some(&min), Some(&max)) = (generations.iter().min(), generations.iter().max()) else {
        return Vec::new();
    };
    if max == min {
        return vec![0.0; generations.len()];
    }
    let span = (max - min) as f64;
    generations.iter().map(|&g| (g - min) as f64 / span).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: StrategyId,
    pub agent_type: AgentType,
    pub domains: DomainSet,
    pub content: String,
    pub rationale: String,
    pub metadata: StrategyMetadata,
    pub alive: bool,
    /// Strategies this one was derived from; empty for Genesis output.
    #[serde(default)]
    pub parents: Vec<StrategyId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSignal {
    Positive,
    Negative,
    Used,
}

/// Fields of a strategy about to be inserted; the bank assigns the id.
#[derive(Debug, Clone)]
pub struct NewStrategy {
    pub agent_type: AgentType,
    pub domains: DomainSet,
    pub content: String,
    pub rationale: String,
    pub metadata: StrategyMetadata,
    pub parents: Vec<StrategyId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StrategyBank {
    strategies: IndexMap<StrategyId, Strategy>,
    next_serial: u64,
}

impl StrategyBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive().count()
    }

    pub fn insert(&mut self, new: NewStrategy) -> Result<StrategyId, BankError> {
        if new.content.trim().is_empty() {
            return Err(BankError::Invalid("strategy content must not be empty".into()));
        }
        self.next_serial += 1;
        let id = StrategyId(format!("s{:06}", self.next_serial));
        let strategy = Strategy {
            id: id.clone(),
            agent_type: new.agent_type,
            domains: new.domains,
            content: new.content,
            rationale: new.rationale,
            metadata: new.metadata,
            alive: true,
            parents: new.parents,
        };
        self.strategies.insert(id.clone(), strategy);
        Ok(id)
    }

    pub fn get(&self, id: &StrategyId) -> Option<&Strategy> {
        self.strategies.get(id)
    }

    pub fn get_alive(&self, id: &StrategyId) -> Result<&Strategy, BankError> {
        let s = self.strategies.get(id).ok_or_else(|| BankError::NotFound(id.clone()))?;
        if !s.alive {
            return Err(BankError::Dead(id.clone()));
        }
        Ok(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Strategy> {
        self.strategies.values()
    }

    pub fn alive(&self) -> impl Iterator<Item = &Strategy> {
        self.strategies.values().filter(|s| s.alive)
    }

    pub fn record_feedback(
        &mut self,
        id: &StrategyId,
        signal: FeedbackSignal,
    ) -> Result<StrategyMetadata, BankError> {
        let s = self
            .strategies
            .get_mut(id)
            .ok_or_else(|| BankError::NotFound(id.clone()))?;
        if !s.alive {
            return Err(BankError::Dead(id.clone()));
        }
        match signal {
            FeedbackSignal::Positive => s.metadata.positive_feedback += 1,
            FeedbackSignal::Negative => s.metadata.negative_feedback += 1,
            FeedbackSignal::Used => s.metadata.usage_count += 1,
        }
        Ok(s.metadata)
    }

    /// Marks a strategy dead. It stays in the bank for lineage audits.
    pub fn retire(&mut self, id: &StrategyId) -> Result<(), BankError> {
        let s = self
            .strategies
            .get_mut(id)
            .ok_or_else(|| BankError::NotFound(id.clone()))?;
        if !s.alive {
            return Err(BankError::Dead(id.clone()));
        }
        s.alive = false;
        Ok(())
    }

    /// Alive strategies of `agent_type` whose domain set equals `domains` exactly.
    pub fn candidates_for(&self, domains: &DomainSet, agent_type: AgentType) -> Vec<&Strategy> {
        self.alive()
            .filter(|s| s.agent_type == agent_type && &s.domains == domains)
            .collect()
    }

    /// Alive strategies of `agent_type` that include `domain` in their domain set.
    pub fn alive_covering(&self, domain: &str, agent_type: AgentType) -> Vec<&Strategy> {
        self.alive()
            .filter(|s| s.agent_type == agent_type && s.domains.contains(domain))
            .collect()
    }

    pub fn is_covered(&self, domains: &DomainSet, agent_type: AgentType) -> bool {
        self.alive()
            .any(|s| s.agent_type == agent_type && &s.domains == domains)
    }

    /// Alive population sizes keyed by (agent type, domain set).
    pub fn population_sizes(&self) -> BTreeMap<PopulationKey, usize> {
        let mut out = BTreeMap::new();
        for s in self.alive() {
            *out.entry((s.agent_type, s.domains.clone())).or_insert(0) += 1;
        }
        out
    }

    pub fn population_keys(&self) -> BTreeSet<PopulationKey> {
        self.population_sizes().into_keys().collect()
    }

    /// Normalized generation of every alive strategy, scoped per agent type.
    pub fn gen_norms(&self) -> BTreeMap<StrategyId, f64> {
        let mut out = BTreeMap::new();
        for agent in AgentType::ALL {
            let members: Vec<&Strategy> = self.alive().filter(|s| s.agent_type == agent).collect();
            let gens: Vec<u64> = members.iter().map(|s| s.metadata.generation_index).collect();
            for (s, g) in members.iter().zip(normalize_generations(&gens)) {
                out.insert(s.id.clone(), g);
            }
        }
        out
    }

    /// Fitness of every alive strategy under the current population.
    pub fn fitness_map(&self, params: &FitnessParams) -> BTreeMap<StrategyId, f64> {
        let norms = self.gen_norms();
        self.alive()
            .map(|s| {
                let g = norms.get(&s.id).copied().unwrap_or(0.0);
                (s.id.clone(), compute_fitness(&s.metadata, g, params))
            })
            .collect()
    }

    /// Fitness of one alive strategy.
    pub fn fitness(&self, id: &StrategyId, params: &FitnessParams) -> Result<f64, BankError> {
        let s = self.get_alive(id)?;
        let gens: Vec<u64> = self
            .alive()
            .filter(|o| o.agent_type == s.agent_type)
            .map(|o| o.metadata.generation_index)
            .collect();
        let (min, max) = (
            *gens.iter().min().expect("contains s"),
            *gens.iter().max().expect("contains s"),
        );
        let g = if max == min {
            0.0
        } else {
            (s.metadata.generation_index - min) as f64 / (max - min) as f64
        };
        Ok(compute_fitness(&s.metadata, g, params))
    }

    pub fn to_snapshot(&self) -> Vec<SnapshotRecord> {
        self.strategies.values().map(SnapshotRecord::from).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| BankError::SnapshotShape(e.to_string()))?;
        let serde_json::Value::Array(items) = raw else {
            return Err(BankError::SnapshotShape("top-level value is not an array".into()));
        };
        let mut bank = StrategyBank::new();
        for (index, item) in items.into_iter().enumerate() {
            let id = item.get("id").and_then(|v| v.as_str()).map(str::to_string);
            let fail = |message: String| BankError::Snapshot {
                index,
                id: id.clone(),
                message,
            };
            let record: SnapshotRecord =
                serde_json::from_value(item).map_err(|e| fail(e.to_string()))?;
            if record.content.trim().is_empty() {
                return Err(fail("field `content` is empty".into()));
            }
            let strategy = Strategy::try_from(record).map_err(fail)?;
            if bank.strategies.contains_key(&strategy.id) {
                return Err(fail("duplicate id".into()));
            }
            if let Some(serial) = strategy
                .id
                .0
                .strip_prefix('s')
                .and_then(|n| n.parse::<u64>().ok())
            {
                bank.next_serial = bank.next_serial.max(serial);
            }
            bank.strategies.insert(strategy.id.clone(), strategy);
        }
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BankError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk form of one strategy. Field names follow the bank tuple
/// `{id, d, c, m}` plus rationale and lifecycle flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub id: String,
    pub agent_type: AgentType,
    pub domains: Vec<String>,
    pub content: String,
    pub reason: String,
    pub h_plus: u64,
    pub h_minus: u64,
    pub n_used: u64,
    pub generation: u64,
    pub alive: bool,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub n_inherited: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl From<&Strategy> for SnapshotRecord {
    fn from(s: &Strategy) -> Self {
        SnapshotRecord {
            id: s.id.0.clone(),
            agent_type: s.agent_type,
            domains: s.domains.clone().into(),
            content: s.content.clone(),
            reason: s.rationale.clone(),
            h_plus: s.metadata.positive_feedback,
            h_minus: s.metadata.negative_feedback,
            n_used: s.metadata.usage_count,
            generation: s.metadata.generation_index,
            alive: s.alive,
            n_inherited: s.metadata.inherited_usage,
            parents: s.parents.iter().map(|p| p.0.clone()).collect(),
        }
    }
}

impl TryFrom<SnapshotRecord> for Strategy {
    type Error = String;

    fn try_from(r: SnapshotRecord) -> Result<Self, Self::Error> {
        if r.id.trim().is_empty() {
            return Err("field `id` is empty".into());
        }
        let domains = DomainSet::new(&r.domains).map_err(|e| format!("field `domains`: {e}"))?;
        if r.n_inherited > r.n_used {
            return Err("field `n_inherited` exceeds `n_used`".into());
        }
        Ok(Strategy {
            id: StrategyId(r.id),
            agent_type: r.agent_type,
            domains,
            content: r.content,
            rationale: r.reason,
            metadata: StrategyMetadata {
                positive_feedback: r.h_plus,
                negative_feedback: r.h_minus,
                usage_count: r.n_used,
                generation_index: r.generation,
                inherited_usage: r.n_inherited,
            },
            alive: r.alive,
            parents: r.parents.into_iter().map(StrategyId).collect(),
        })
    }
}
