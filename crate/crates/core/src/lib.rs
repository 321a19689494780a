//! A task-oriented dialog system whose agents follow natural-language
//! strategies drawn from an evolving bank.
//!
//! Online, each turn runs belief tracking, policy and generation agents with
//! peer critique, every agent guided by a strategy sampled from the bank by
//! fitness. Offline, finished trajectories drive Genesis, Mutation,
//! Consolidation and Pruning over the bank.
//!
//! [`Engine`] owns both loops. [`experiment::run_experiment`] drives the
//! phased train-and-evaluate protocol and [`service::Service`] the live
//! chat facade. [`mock::SyntheticWorld`] stands in for the language model so
//! every loop runs offline and deterministically.

pub mod bank;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod evolution;
pub mod experiment;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod mock;
pub mod pipeline;
pub mod selection;
pub mod service;
pub mod types;

pub use bank::{compute_fitness, FeedbackSignal, FitnessParams, Strategy, StrategyBank, StrategyMetadata};
pub use config::EngineConfig;
pub use corpus::{Corpus, Dialog, DomainDatabase, UserGoal};
pub use engine::{Engine, EngineError, FinishedDialog};
pub use evolution::{EvolutionParams, EvolutionReport, TriggerPolicy};
pub use memory::{MemoryStore, Outcome, Source, Trajectory, TurnRecord};
pub use metrics::{BankAnalytics, MetricReport};
pub use pipeline::{DialogContext, ModeFlags};
pub use selection::{SelectionKind, SelectionPolicy};
pub use types::{AgentRole, AgentType, DomainSet, StrategyId};
