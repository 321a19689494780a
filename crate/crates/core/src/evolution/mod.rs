//! Offline evolution of the strategy bank.
//!
//! An epoch applies, in order: coverage repair (genesis and multi-domain
//! composition), mutation of flagged strategies, consolidation of similar
//! strategies, and pruning to the population bound. Operator failures are
//! isolated: the affected strategies stay as they were and the epoch goes on.

mod operators;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use operators::{format_trajectory, strategies_text};

use crate::bank::{BankError, FitnessParams, StrategyBank};
use crate::embedding::{Embedder, EmbeddingError};
use crate::llm::{Gateway, GatewayError};
use crate::memory::Trajectory;
use crate::types::{AgentType, DomainSet, StrategyId};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("{agent} strategies already exist for {domains}")]
    AlreadyCovered { agent: AgentType, domains: DomainSet },
    #[error("no alive {agent} strategy covers domain `{domain}`")]
    MissingConstituent { agent: AgentType, domain: String },
    #[error("composition needs at least two domains, got {0}")]
    NotMultiDomain(DomainSet),
    #[error("genesis is for single domains, got {0}")]
    NotSingleDomain(DomainSet),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionParams {
    /// Cosine similarity at or above which strategies are merged.
    pub delta: f64,
    /// Strategies created by genesis per (agent type, domain).
    pub genesis_count: usize,
    /// Alive strategies kept per (agent type, domain set).
    pub max_population: usize,
    pub mutate: bool,
    pub consolidate: bool,
    pub prune: bool,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        EvolutionParams {
            delta: 0.8,
            genesis_count: 10,
            max_population: 10,
            mutate: true,
            consolidate: true,
            prune: true,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(format!("delta must lie in [-1, 1], got {}", self.delta));
        }
        if self.genesis_count == 0 {
            return Err("genesis_count must be >= 1".into());
        }
        if self.max_population == 0 {
            return Err("max_population must be >= 1".into());
        }
        Ok(())
    }
}

/// When offline evolution fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerPolicy {
    #[default]
    PerEpisode,
    PerNDialogs {
        n: usize,
    },
    /// After every turn (critique-driven only) and after every episode.
    PerTurn,
}

impl TriggerPolicy {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            TriggerPolicy::PerNDialogs { n: 0 } => Err("per_n_dialogs needs n >= 1".into()),
            _ => Ok(()),
        }
    }

    /// Whether an episode-level epoch is due after `pending` unprocessed dialogs.
    pub fn due(&self, pending: usize) -> bool {
        match self {
            TriggerPolicy::PerEpisode | TriggerPolicy::PerTurn => pending >= 1,
            TriggerPolicy::PerNDialogs { n } => pending >= *n,
        }
    }
}

impl fmt::Display for TriggerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerPolicy::PerEpisode => f.write_str("per_episode"),
            TriggerPolicy::PerNDialogs { n } => write!(f, "per_n_dialogs:{n}"),
            TriggerPolicy::PerTurn => f.write_str("per_turn"),
        }
    }
}

impl FromStr for TriggerPolicy {
    type Err = String;

    /// Accepts `per_episode`, `per_turn` and `per_n_dialogs:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let policy = match s {
            "per_episode" => TriggerPolicy::PerEpisode,
            "per_turn" => TriggerPolicy::PerTurn,
            _ => {
                let n = s
                    .strip_prefix("per_n_dialogs")
                    .and_then(|r| r.strip_prefix([':', '=']))
                    .ok_or_else(|| format!("unknown trigger `{s}`"))?;
                TriggerPolicy::PerNDialogs {
                    n: n.parse().map_err(|_| format!("bad dialog count in `{s}`"))?,
                }
            }
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Genesis,
    Composition,
    Mutation,
    Consolidation,
    Pruning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub operator: Operator,
    pub inputs: Vec<StrategyId>,
    pub outputs: Vec<StrategyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<i8>,
}

/// Key of a population in serialized reports: `AGENT|domain+domain`.
pub fn population_label(agent: AgentType, domains: &DomainSet) -> String {
    format!("{agent}|{domains}")
}

fn population_map(bank: &StrategyBank) -> BTreeMap<String, usize> {
    bank.population_sizes()
        .into_iter()
        .map(|((a, d), n)| (population_label(a, &d), n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub epoch_index: u64,
    /// Trajectories consumed by this epoch.
    pub trajectories: usize,
    pub operations: Vec<Operation>,
    /// Operator failures that left their inputs untouched.
    pub failures: Vec<String>,
    pub flagged: usize,
    /// Fraction of alive strategies flagged for mutation.
    pub measured_p: f64,
    /// Mean fitness change of mutation children over their parents.
    pub measured_mu: Option<f64>,
    pub population_before: BTreeMap<String, usize>,
    pub population_after: BTreeMap<String, usize>,
    pub alive_before: usize,
    pub alive_after: usize,
    pub mean_alive_fitness: Option<f64>,
}

impl EvolutionReport {
    pub fn count(&self, op: Operator) -> usize {
        self.operations.iter().filter(|o| o.operator == op).count()
    }

    pub fn is_noop(&self) -> bool {
        self.operations.is_empty()
    }
}

/// Mean fitness over all alive strategies, `None` for an empty bank.
pub fn mean_alive_fitness(bank: &StrategyBank, params: &FitnessParams) -> Option<f64> {
    let f = bank.fitness_map(params);
    (!f.is_empty()).then(|| f.values().sum::<f64>() / f.len() as f64)
}

/// The offline operators bound to a provider, an embedder and parameters.
pub struct Evolver<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn Embedder,
    pub params: EvolutionParams,
    pub fitness: FitnessParams,
    /// Whether critique rationales are shown to the mutation operator.
    pub with_reasoning: bool,
}

impl<'a> Evolver<'a> {
    pub fn new(gateway: &'a Gateway, embedder: &'a dyn Embedder, params: EvolutionParams, fitness: FitnessParams) -> Self {
        Evolver {
            gateway,
            embedder,
            params,
            fitness,
            with_reasoning: true,
        }
    }

    /// Creates whatever strategies `domains` lacks for each agent type:
    /// genesis for single domains, composition (after covering each
    /// constituent) for combinations. Returns the operations performed.
    pub fn ensure_coverage<R: Rng + ?Sized>(
        &self,
        bank: &mut StrategyBank,
        domains: &DomainSet,
        rng: &mut R,
    ) -> Result<Vec<Operation>, EvolutionError> {
        let mut ops = Vec::new();
        for agent in AgentType::ALL {
            if bank.is_covered(domains, agent) {
                continue;
            }
            if domains.len() == 1 {
                let outputs = self.genesis(bank, domains, agent)?;
                ops.push(Operation {
                    operator: Operator::Genesis,
                    inputs: vec![],
                    outputs,
                    score: None,
                });
                continue;
            }
            for d in domains.iter() {
                let single = DomainSet::single(d);
                if !bank.is_covered(&single, agent) {
                    let outputs = self.genesis(bank, &single, agent)?;
                    ops.push(Operation {
                        operator: Operator::Genesis,
                        inputs: vec![],
                        outputs,
                        score: None,
                    });
                }
            }
            let (inputs, out) = self.compose_multidomain(bank, domains, agent, rng)?;
            ops.push(Operation {
                operator: Operator::Composition,
                inputs,
                outputs: vec![out],
                score: None,
            });
        }
        Ok(ops)
    }

    /// Runs one epoch over `window`, each trajectory paired with the
    /// strategies it flags for mutation.
    pub fn evolve_epoch<R: Rng + ?Sized>(
        &self,
        bank: &mut StrategyBank,
        window: &[(&Trajectory, BTreeSet<StrategyId>)],
        epoch_index: u64,
        rng: &mut R,
    ) -> EvolutionReport {
        let population_before = population_map(bank);
        let alive_before = bank.alive_count();
        let mut operations = Vec::new();
        let mut failures = Vec::new();

        let combos: BTreeSet<DomainSet> = window.iter().map(|(t, _)| t.domains.clone()).collect();
        for combo in &combos {
            match self.ensure_coverage(bank, combo, rng) {
                Ok(ops) => operations.extend(ops),
                Err(e) => failures.push(format!("coverage {combo}: {e}")),
            }
        }

        let flagged: BTreeSet<&StrategyId> = window.iter().flat_map(|(_, f)| f).collect();
        let flagged_alive = flagged.iter().filter(|id| bank.get_alive(id).is_ok()).count();
        let mut deltas = Vec::new();
        if self.params.mutate {
            for (traj, ids) in window {
                for id in ids {
                    if bank.get_alive(id).is_err() {
                        tracing::debug!(%id, "flagged strategy no longer alive; skipping");
                        continue;
                    }
                    let before = bank.fitness(id, &self.fitness).ok();
                    match self.mutate(bank, id, traj) {
                        Ok((score, child)) => {
                            if let (Some(b), Ok(a)) = (before, bank.fitness(&child, &self.fitness)) {
                                deltas.push(a - b);
                            }
                            operations.push(Operation {
                                operator: Operator::Mutation,
                                inputs: vec![id.clone()],
                                outputs: vec![child],
                                score: Some(score),
                            });
                        }
                        Err(e) => failures.push(format!("mutation {id}: {e}")),
                    }
                }
            }
        }

        if self.params.consolidate {
            for key in bank.population_keys() {
                match self.consolidate_population(bank, key.0, &key.1) {
                    Ok((ops, errs)) => {
                        operations.extend(ops);
                        failures.extend(errs);
                    }
                    Err(e) => failures.push(format!("consolidation {}: {e}", population_label(key.0, &key.1))),
                }
            }
        }

        if self.params.prune {
            let removed = prune(bank, self.params.max_population, &self.fitness);
            if !removed.is_empty() {
                operations.push(Operation {
                    operator: Operator::Pruning,
                    inputs: removed,
                    outputs: vec![],
                    score: None,
                });
            }
        }

        for f in &failures {
            tracing::warn!(epoch = epoch_index, "{f}");
        }
        EvolutionReport {
            epoch_index,
            trajectories: window.len(),
            operations,
            failures,
            flagged: flagged_alive,
            measured_p: if alive_before == 0 {
                0.0
            } else {
                flagged_alive as f64 / alive_before as f64
            },
            measured_mu: (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
            population_before,
            population_after: population_map(bank),
            alive_before,
            alive_after: bank.alive_count(),
            mean_alive_fitness: mean_alive_fitness(bank, &self.fitness),
        }
    }
}

/// Retires all but the `max` fittest alive strategies of every population.
/// Ties rank the newer generation first, then the smaller id.
pub fn prune(bank: &mut StrategyBank, max: usize, params: &FitnessParams) -> Vec<StrategyId> {
    let fitness = bank.fitness_map(params);
    let mut removed = Vec::new();
    for (agent, domains) in bank.population_keys() {
        let mut members: Vec<(f64, u64, StrategyId)> = bank
            .candidates_for(&domains, agent)
            .into_iter()
            .map(|s| (fitness[&s.id], s.metadata.generation_index, s.id.clone()))
            .collect();
        if members.len() <= max {
            continue;
        }
        members.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| b.1.cmp(&a.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        let mut cut: Vec<StrategyId> = members.drain(max..).map(|m| m.2).collect();
        cut.sort();
        for id in cut {
            bank.retire(&id).expect("member is alive");
            removed.push(id);
        }
    }
    removed
}

#[cfg(test)]
mod tests;
