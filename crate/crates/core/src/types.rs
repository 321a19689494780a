//! Identifiers and small value types shared across modules.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three online agents whose behavior is steered by an evolvable strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentType {
    #[serde(rename = "DST")]
    Dst,
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "NLG")]
    Nlg,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Dst, AgentType::Dp, AgentType::Nlg];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentType::Dst => "DST",
            AgentType::Dp => "DP",
            AgentType::Nlg => "NLG",
        }
    }

    /// Role description passed to the operator prompts.
    pub fn role(self) -> &'static str {
        match self {
            AgentType::Dst => "Dialog State Tracker",
            AgentType::Dp => "Dialog Policy",
            AgentType::Nlg => "Natural Language Generator",
        }
    }

    /// What the agent is supposed to achieve, for the mutation prompt.
    pub fn goal(self) -> &'static str {
        match self {
            AgentType::Dst => "Track the user's constraints accurately as a belief state over domain slots",
            AgentType::Dp => "Choose the system action and database queries that complete the user's task in few turns",
            AgentType::Nlg => "Produce a natural, concise system response that realizes the chosen system action",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DST" => Ok(AgentType::Dst),
            "DP" => Ok(AgentType::Dp),
            "NLG" => Ok(AgentType::Nlg),
            other => Err(format!("unknown agent type `{other}`")),
        }
    }
}

/// Authors and targets of critique entries. Superset of [`AgentType`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    #[serde(rename = "DST")]
    Dst,
    #[serde(rename = "DP")]
    Dp,
    #[serde(rename = "NLG")]
    Nlg,
    #[serde(rename = "UserSim")]
    UserSim,
    /// The monolithic agent used by the end-to-end ablation.
    #[serde(rename = "E2E")]
    E2e,
    /// Gateway or pipeline failures recorded in the critique log.
    #[serde(rename = "System")]
    System,
}

impl AgentRole {
    pub fn as_agent_type(self) -> Option<AgentType> {
        match self {
            AgentRole::Dst => Some(AgentType::Dst),
            AgentRole::Dp => Some(AgentType::Dp),
            AgentRole::Nlg => Some(AgentType::Nlg),
            _ => None,
        }
    }
}

impl From<AgentType> for AgentRole {
    fn from(t: AgentType) -> Self {
        match t {
            AgentType::Dst => AgentRole::Dst,
            AgentType::Dp => AgentRole::Dp,
            AgentType::Nlg => AgentRole::Nlg,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentRole::Dst => "DST",
            AgentRole::Dp => "DP",
            AgentRole::Nlg => "NLG",
            AgentRole::UserSim => "UserSim",
            AgentRole::E2e => "E2E",
            AgentRole::System => "System",
        })
    }
}

/// Opaque strategy identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(pub String);

impl StrategyId {
    pub fn new(id: impl Into<String>) -> Self {
        StrategyId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A non-empty set of lower-cased domain names, e.g. `{hotel, taxi}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct DomainSet(BTreeSet<String>);

impl DomainSet {
    pub fn new<I, S>(domains: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = domains
            .into_iter()
            .map(|d| d.as_ref().trim().to_lowercase())
            .filter(|d| !d.is_empty())
            .collect();
        if set.is_empty() {
            return Err("domain set must not be empty".to_string());
        }
        Ok(DomainSet(set))
    }

    pub fn single(domain: &str) -> Self {
        DomainSet::new([domain]).expect("non-empty domain name")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.0.contains(domain)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn is_subset(&self, other: &DomainSet) -> bool {
        self.0.is_subset(&other.0)
    }

    /// Comma-separated listing used in prompts.
    pub fn joined(&self, sep: &str) -> String {
        self.0.iter().cloned().collect::<Vec<_>>().join(sep)
    }
}

impl TryFrom<Vec<String>> for DomainSet {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        DomainSet::new(v)
    }
}

impl From<DomainSet> for Vec<String> {
    fn from(d: DomainSet) -> Self {
        d.0.into_iter().collect()
    }
}

impl fmt::Display for DomainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined("+"))
    }
}

impl FromStr for DomainSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainSet::new(s.split(['+', ',']))
    }
}

/// Key of one sub-population in the bank.
pub type PopulationKey = (AgentType, DomainSet);
