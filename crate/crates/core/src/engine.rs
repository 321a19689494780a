//! The running system: bank, memory, providers and the two loops.
//!
//! Online, [`Engine::start_dialog`] covers the dialog's domain combination,
//! draws one strategy per agent type, and [`Engine::run_turn`] drives the
//! agents. [`Engine::finish_dialog`] scores the dialog, records usage, appends
//! the trajectory and fires evolution when the trigger policy says so.
//! Offline, [`Engine::trigger_evolution`] runs one epoch over the trajectories
//! appended since the previous epoch.
//!
//! Locking: the bank is read-locked only while strategies are drawn and
//! write-locked by feedback and epochs, so dialogs pause while an epoch runs.
//! At most one epoch runs at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, FeedbackSignal, StrategyBank};
use crate::config::{ConfigError, EngineConfig};
use crate::corpus::multiwoz::multiwoz_schema;
use crate::corpus::{load_corpus, Corpus, CorpusError, Dialog, DomainDatabase, Schema, UserGoal};
use crate::embedding::{CachedEmbedder, Embedder, EmbeddingError};
use crate::evolution::{EvolutionError, EvolutionReport, Evolver};
use crate::llm::http::HttpProvider;
use crate::llm::{static_strategy, ChatProvider, Gateway, MockProvider, ProviderConfig, ProviderError};
use crate::memory::{MemoryError, MemoryStore, Outcome, Source, Trajectory, TurnRecord, Window};
use crate::mock::SyntheticWorld;
use crate::pipeline::{evaluate_dialog, ActiveStrategy, DialogContext, DialogVerdict, TurnRunner};
use crate::selection::{select, SelectionError};
use crate::types::{AgentType, DomainSet, StrategyId};

/// Id prefix of the hand-written strategies used in zero-shot mode.
pub const STATIC_PREFIX: &str = "static:";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error("no {agent} strategy for {domains}: {source}")]
    Selection {
        agent: AgentType,
        domains: DomainSet,
        source: SelectionError,
    },
    #[error("an evolution epoch is already running")]
    EpochInFlight,
    #[error("evolution is disabled in zero-shot mode")]
    EvolutionDisabled,
    #[error("dialog `{0}` has no turns")]
    EmptyDialog(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Reads (or generates) the corpus and database named by `config`.
pub fn load_data(config: &EngineConfig) -> Result<(Corpus, DomainDatabase), EngineError> {
    if let Some(spec) = &config.synth {
        return Ok(spec.generate());
    }
    let schema = match &config.paths.schema {
        Some(p) => Schema::load(p)?,
        None => multiwoz_schema(),
    };
    let missing = |what: &str| ConfigError::Invalid(format!("paths.{what} is not set"));
    let db = DomainDatabase::load(schema, config.paths.db.as_ref().ok_or_else(|| missing("db"))?)?;
    let corpus = load_corpus(config.paths.corpus.as_ref().ok_or_else(|| missing("corpus"))?, Some(&db.schema))?;
    corpus.validate(Some(&db.schema), config.max_turns)?;
    Ok((corpus, db))
}

/// Provider for `cfg`: `mock` is the synthetic world, `script:<path>` a
/// fixture file, anything else a chat-completions endpoint.
pub fn build_provider(
    cfg: &ProviderConfig,
    db: &DomainDatabase,
    seed: u64,
    improve_prob: f64,
) -> Result<Arc<dyn ChatProvider>, ProviderError> {
    let endpoint = cfg.endpoint.trim();
    if endpoint == "mock" {
        let mut world = SyntheticWorld::new(db.clone(), seed);
        world.improve_prob = improve_prob;
        Ok(Arc::new(world))
    } else if let Some(path) = endpoint.strip_prefix("script:") {
        Ok(Arc::new(MockProvider::from_fixture(path)?))
    } else {
        Ok(Arc::new(HttpProvider::new(cfg)?))
    }
}

/// Pieces an engine is assembled from; [`Engine::new`] builds them from a config.
pub struct EngineParts {
    pub db: DomainDatabase,
    pub online: Arc<dyn ChatProvider>,
    pub offline: Arc<dyn ChatProvider>,
    pub embedder: Box<dyn Embedder>,
    pub bank: StrategyBank,
    pub memory: MemoryStore,
}

/// What finishing a dialog produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinishedDialog {
    pub record_id: u64,
    pub verdict: DialogVerdict,
    pub outcome: Outcome,
    /// The epoch this dialog triggered, if any.
    pub epoch: Option<EvolutionReport>,
    /// Why a due epoch did not run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_error: Option<String>,
}

pub struct Engine {
    config: EngineConfig,
    db: DomainDatabase,
    online: Gateway,
    offline: Gateway,
    embedder: CachedEmbedder,
    bank: RwLock<StrategyBank>,
    memory: Mutex<MemoryStore>,
    rng: Mutex<ChaCha8Rng>,
    epochs: Mutex<Vec<EvolutionReport>>,
    /// Newest SSM record already consumed by an epoch.
    cursor: Mutex<u64>,
    evolving: AtomicBool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("alive", &self.bank.read().alive_count())
            .field("trajectories", &self.memory.lock().len())
            .field("epochs", &self.epochs.lock().len())
            .finish()
    }
}

impl Engine {
    /// Builds providers, embedder, bank and memory from `config`. The bank
    /// and SSM are loaded from their paths when those files exist.
    pub fn new(config: EngineConfig, db: DomainDatabase) -> Result<Self, EngineError> {
        config.validate()?;
        let online = build_provider(&config.online, &db, config.seed, config.mock_improve_prob)?;
        let offline = build_provider(&config.offline, &db, config.seed ^ 0x5eed, config.mock_improve_prob)?;
        let embedder = config.embedding.build()?;
        let bank = match &config.paths.bank {
            Some(p) if p.exists() => StrategyBank::load(p)?,
            _ => StrategyBank::new(),
        };
        let memory = match &config.paths.ssm {
            Some(p) => MemoryStore::open(p, config.max_turns)?,
            None => MemoryStore::in_memory(config.max_turns),
        };
        Self::from_parts(
            config,
            EngineParts {
                db,
                online,
                offline,
                embedder: Box::new(embedder),
                bank,
                memory,
            },
        )
    }

    pub fn from_parts(config: EngineConfig, parts: EngineParts) -> Result<Self, EngineError> {
        config.validate()?;
        let cursor = parts.memory.last_id();
        let mut epochs = Vec::new();
        if let Some(p) = config.paths.epochs.as_ref().filter(|p| p.exists()) {
            for line in std::fs::read_to_string(p)?.lines().filter(|l| !l.trim().is_empty()) {
                let report: EvolutionReport = serde_json::from_str(line)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                epochs.push(report);
            }
        }
        Ok(Engine {
            online: Gateway::new(parts.online, config.online.clone()),
            offline: Gateway::new(parts.offline, config.offline.clone()),
            embedder: CachedEmbedder::new(parts.embedder),
            db: parts.db,
            bank: RwLock::new(parts.bank),
            memory: Mutex::new(parts.memory),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            epochs: Mutex::new(epochs),
            cursor: Mutex::new(cursor),
            evolving: AtomicBool::new(false),
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn db(&self) -> &DomainDatabase {
        &self.db
    }

    pub fn online_gateway(&self) -> &Gateway {
        &self.online
    }

    pub fn offline_gateway(&self) -> &Gateway {
        &self.offline
    }

    pub fn embedder(&self) -> &dyn Embedder {
        &self.embedder
    }

    /// Runs `f` against the bank under the read lock.
    pub fn with_bank<T>(&self, f: impl FnOnce(&StrategyBank) -> T) -> T {
        f(&self.bank.read())
    }

    pub fn bank_snapshot(&self) -> StrategyBank {
        self.bank.read().clone()
    }

    pub fn with_memory<T>(&self, f: impl FnOnce(&MemoryStore) -> T) -> T {
        f(&self.memory.lock())
    }

    pub fn epochs(&self) -> Vec<EvolutionReport> {
        self.epochs.lock().clone()
    }

    pub fn epoch_count(&self) -> u64 {
        self.epochs.lock().len() as u64
    }

    /// SSM records not yet consumed by an epoch.
    pub fn pending(&self) -> usize {
        let cursor = *self.cursor.lock();
        self.memory.lock().window(Window::Since(cursor)).count()
    }

    pub fn is_evolving(&self) -> bool {
        self.evolving.load(Ordering::SeqCst)
    }

    pub fn save_bank(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        Ok(self.bank.read().save(path)?)
    }

    fn evolver(&self) -> Evolver<'_> {
        let mut e = Evolver::new(&self.offline, &self.embedder, self.config.evolution.clone(), self.config.fitness);
        e.with_reasoning = self.config.modes.with_reasoning;
        e
    }

    fn static_strategies() -> BTreeMap<AgentType, ActiveStrategy> {
        AgentType::ALL
            .into_iter()
            .map(|a| {
                (
                    a,
                    ActiveStrategy {
                        id: StrategyId::new(format!("{STATIC_PREFIX}{a}")),
                        content: static_strategy(a).to_string(),
                    },
                )
            })
            .collect()
    }

    /// Draws one strategy per agent type from `bank` for `domains`.
    fn draw(
        &self,
        bank: &StrategyBank,
        domains: &DomainSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<AgentType, ActiveStrategy>, EngineError> {
        let fitness = bank.fitness_map(&self.config.fitness);
        let mut out = BTreeMap::new();
        for agent in AgentType::ALL {
            let pool = bank.candidates_for(domains, agent);
            let scores: Vec<f64> = pool.iter().map(|s| fitness[&s.id]).collect();
            let pick = select(&pool, &scores, &self.config.selection, rng).map_err(|source| EngineError::Selection {
                agent,
                domains: domains.clone(),
                source,
            })?;
            out.insert(
                agent,
                ActiveStrategy {
                    id: pick.id.clone(),
                    content: pick.content.clone(),
                },
            );
        }
        Ok(out)
    }

    /// Creates the strategies `domains` lacks (genesis or composition).
    pub fn ensure_coverage(&self, domains: &DomainSet) -> Result<usize, EngineError> {
        if self.config.modes.zero_shot {
            return Ok(0);
        }
        let covered = {
            let bank = self.bank.read();
            AgentType::ALL.iter().all(|a| bank.is_covered(domains, *a))
        };
        if covered {
            return Ok(0);
        }
        let mut bank = self.bank.write();
        let mut rng = self.rng.lock();
        let ops = self.evolver().ensure_coverage(&mut bank, domains, &mut *rng)?;
        Ok(ops.len())
    }

    /// Opens a dialog: coverage first, then one strategy per agent type.
    pub fn start_dialog(&self, dialog_id: &str, domains: DomainSet, goal: UserGoal) -> Result<DialogContext, EngineError> {
        let strategies = if self.config.modes.zero_shot {
            Self::static_strategies()
        } else {
            self.ensure_coverage(&domains)?;
            let bank = self.bank.read();
            let mut rng = self.rng.lock();
            self.draw(&bank, &domains, &mut rng)?
        };
        Ok(DialogContext::new(
            dialog_id,
            domains,
            goal,
            strategies,
            self.config.modes,
            self.config.max_turns,
        ))
    }

    /// One turn. Under the per-turn trigger, a critique-driven epoch follows.
    pub fn run_turn(&self, ctx: &mut DialogContext, user_utterance: &str) -> TurnRecord {
        let record = TurnRunner::new(&self.online, &self.db).run_turn(ctx, user_utterance);
        if self.config.trigger == crate::evolution::TriggerPolicy::PerTurn && !self.config.modes.zero_shot {
            if let Err(e) = self.turn_epoch(ctx, &record) {
                tracing::warn!(error = %e, dialog = %ctx.dialog_id, "per-turn epoch skipped");
            }
        }
        record
    }

    /// Epoch over the dialog so far, flagging only strategies criticized in `record`.
    fn turn_epoch(&self, ctx: &DialogContext, record: &TurnRecord) -> Result<Option<EvolutionReport>, EngineError> {
        let flags: BTreeSet<StrategyId> = record
            .critiques
            .iter()
            .filter(|c| c.is_negative())
            .filter_map(|c| c.target.as_agent_type())
            .filter_map(|a| ctx.strategies.get(&a).map(|s| s.id.clone()))
            .collect();
        if flags.is_empty() {
            return Ok(None);
        }
        let provisional = Trajectory {
            record_id: 0,
            dialog_id: ctx.dialog_id.clone(),
            domains: ctx.domains.clone(),
            goal: ctx.goal.clone(),
            strategies_used: ctx.strategy_ids(),
            turns: ctx.history.clone(),
            outcome: Outcome::Failure,
            source: Source::CorpusReplay,
        };
        self.run_epoch(&[(&provisional, flags)], None).map(Some)
    }

    fn outcome_of(ctx: &DialogContext, verdict: &DialogVerdict) -> Outcome {
        if ctx.goal.domains.is_empty() {
            // no goal to score against: judge by the last turn's critiques
            let clean = ctx
                .history
                .last()
                .is_some_and(|t| !t.aborted && t.critiques.iter().all(|c| !c.is_negative()));
            return if clean { Outcome::Success } else { Outcome::Failure };
        }
        if verdict.success {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }

    /// Scores the dialog, records usage of its strategies, appends it to the
    /// SSM and runs an epoch if the trigger policy is due.
    pub fn finish_dialog(&self, ctx: DialogContext, source: Source) -> Result<FinishedDialog, EngineError> {
        if ctx.history.is_empty() {
            return Err(EngineError::EmptyDialog(ctx.dialog_id));
        }
        let verdict = evaluate_dialog(&ctx.goal, &ctx.history, &self.db);
        let outcome = Self::outcome_of(&ctx, &verdict);
        if !self.config.modes.zero_shot {
            let mut bank = self.bank.write();
            for s in ctx.strategies.values() {
                match bank.record_feedback(&s.id, FeedbackSignal::Used) {
                    Ok(_) => {}
                    // retired mid-dialog by a per-turn epoch
                    Err(BankError::Dead(_)) => tracing::debug!(id = %s.id, "used strategy retired before the dialog ended"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let traj = Trajectory {
            record_id: 0,
            dialog_id: ctx.dialog_id.clone(),
            domains: ctx.domains.clone(),
            goal: ctx.goal.clone(),
            strategies_used: ctx.strategy_ids(),
            turns: ctx.history,
            outcome,
            source,
        };
        let record_id = self.memory.lock().append(traj)?;
        let mut finished = FinishedDialog {
            record_id,
            verdict,
            outcome,
            epoch: None,
            epoch_error: None,
        };
        if !self.config.modes.zero_shot && self.config.trigger.due(self.pending()) {
            match self.trigger_evolution() {
                Ok(r) => finished.epoch = Some(r),
                Err(e) => finished.epoch_error = Some(e.to_string()),
            }
        }
        Ok(finished)
    }

    /// Replays a corpus dialog: its user turns in order until they run out,
    /// the goal is met, or the turn cap is reached.
    pub fn run_episode(&self, dialog: &Dialog, source: Source) -> Result<(Trajectory, FinishedDialog), EngineError> {
        let mut ctx = self.start_dialog(&dialog.dialog_id, dialog.domains.clone(), dialog.goal.clone())?;
        Self::replay(self, &mut ctx, dialog);
        let finished = self.finish_dialog(ctx, source)?;
        let traj = self
            .memory
            .lock()
            .get(finished.record_id)
            .cloned()
            .expect("just appended");
        Ok((traj, finished))
    }

    fn replay(&self, ctx: &mut DialogContext, dialog: &Dialog) {
        for utterance in dialog.user_utterances() {
            if ctx.exhausted() {
                break;
            }
            self.run_turn(ctx, utterance);
            if evaluate_dialog(&ctx.goal, &ctx.history, &self.db).success {
                break;
            }
        }
    }

    /// Runs `dialog` against `bank` without touching the engine's bank,
    /// memory or rng. Missing coverage is created in `bank`.
    pub fn evaluate_episode(
        &self,
        dialog: &Dialog,
        bank: &mut StrategyBank,
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory, EngineError> {
        let strategies = if self.config.modes.zero_shot {
            Self::static_strategies()
        } else {
            self.evolver().ensure_coverage(bank, &dialog.domains, rng)?;
            self.draw(bank, &dialog.domains, rng)?
        };
        let mut ctx = DialogContext::new(
            &dialog.dialog_id,
            dialog.domains.clone(),
            dialog.goal.clone(),
            strategies,
            self.config.modes,
            self.config.max_turns,
        );
        for utterance in dialog.user_utterances() {
            if ctx.exhausted() {
                break;
            }
            TurnRunner::new(&self.online, &self.db).run_turn(&mut ctx, utterance);
            if evaluate_dialog(&ctx.goal, &ctx.history, &self.db).success {
                break;
            }
        }
        let verdict = evaluate_dialog(&ctx.goal, &ctx.history, &self.db);
        Ok(Trajectory {
            record_id: 0,
            outcome: Self::outcome_of(&ctx, &verdict),
            dialog_id: ctx.dialog_id.clone(),
            domains: ctx.domains.clone(),
            goal: ctx.goal.clone(),
            strategies_used: ctx.strategy_ids(),
            turns: ctx.history,
            source: Source::CorpusReplay,
        })
    }

    /// One epoch over the SSM records appended since the previous epoch.
    pub fn trigger_evolution(&self) -> Result<EvolutionReport, EngineError> {
        if self.config.modes.zero_shot {
            return Err(EngineError::EvolutionDisabled);
        }
        if self.evolving.swap(true, Ordering::SeqCst) {
            return Err(EngineError::EpochInFlight);
        }
        let result = (|| {
            let (window, last): (Vec<(Trajectory, BTreeSet<StrategyId>)>, u64) = {
                let memory = self.memory.lock();
                let cursor = *self.cursor.lock();
                let w: Vec<_> = memory
                    .query_for_evolution(Window::Since(cursor))
                    .into_iter()
                    .map(|(t, f)| (t.clone(), f))
                    .collect();
                let last = w.last().map_or(cursor, |(t, _)| t.record_id);
                (w, last)
            };
            let refs: Vec<(&Trajectory, BTreeSet<StrategyId>)> = window.iter().map(|(t, f)| (t, f.clone())).collect();
            let report = self.run_epoch_locked(&refs, Some(last))?;
            Ok(report)
        })();
        self.evolving.store(false, Ordering::SeqCst);
        result
    }

    fn run_epoch(
        &self,
        window: &[(&Trajectory, BTreeSet<StrategyId>)],
        advance_to: Option<u64>,
    ) -> Result<EvolutionReport, EngineError> {
        if self.evolving.swap(true, Ordering::SeqCst) {
            return Err(EngineError::EpochInFlight);
        }
        let r = self.run_epoch_locked(window, advance_to);
        self.evolving.store(false, Ordering::SeqCst);
        r
    }

    /// Caller holds the `evolving` flag.
    fn run_epoch_locked(
        &self,
        window: &[(&Trajectory, BTreeSet<StrategyId>)],
        advance_to: Option<u64>,
    ) -> Result<EvolutionReport, EngineError> {
        let report = {
            let mut bank = self.bank.write();
            let mut rng = self.rng.lock();
            let index = self.epoch_count();
            self.evolver().evolve_epoch(&mut bank, window, index, &mut *rng)
        };
        if let Some(last) = advance_to {
            *self.cursor.lock() = last;
        }
        if let Some(p) = &self.config.paths.epochs {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            writeln!(f, "{}", serde_json::to_string(&report).expect("report serializes"))?;
        }
        self.epochs.lock().push(report.clone());
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::SynthSpec;
    use crate::evolution::{Operator, TriggerPolicy};
    use crate::llm::TemplateId;

    fn engine(n: usize, domains: &[&str], tweak: impl FnOnce(&mut EngineConfig)) -> (Engine, Corpus) {
        let mut cfg = EngineConfig::synthetic(3, SynthSpec::new(3, n, domains));
        tweak(&mut cfg);
        let (corpus, db) = load_data(&cfg).unwrap();
        (Engine::new(cfg, db).unwrap(), corpus)
    }

    #[test]
    fn first_dialog_runs_genesis_before_the_episode() {
        let (e, corpus) = engine(1, &["restaurant"], |c| {
            c.synth.as_mut().unwrap().multi_domain_prob = 0.0;
        });
        let (traj, done) = e.run_episode(&corpus.dialogs[0], Source::CorpusReplay).unwrap();
        assert_eq!(e.with_bank(|b| b.alive_count()), 30 - done.epoch.as_ref().map_or(0, |r| r.alive_before - r.alive_after));
        assert_eq!(traj.strategies_used.len(), 3);
        let epoch = done.epoch.unwrap();
        assert_eq!(epoch.count(Operator::Genesis), 0, "coverage preceded the episode");
        assert_eq!(e.pending(), 0);
    }

    #[test]
    fn usage_counts_follow_episodes() {
        let (e, corpus) = engine(6, &["hotel"], |c| c.evolution.mutate = false);
        let mut uses: BTreeMap<StrategyId, u64> = BTreeMap::new();
        for d in &corpus.dialogs {
            let (t, _) = e.run_episode(d, Source::CorpusReplay).unwrap();
            for id in t.strategies_used.values() {
                *uses.entry(id.clone()).or_default() += 1;
            }
        }
        e.with_bank(|b| {
            for (id, n) in &uses {
                let m = b.get(id).unwrap().metadata;
                assert_eq!(m.usage_count - m.inherited_usage, *n);
            }
        });
    }

    #[test]
    fn zero_shot_leaves_the_bank_alone() {
        let (e, corpus) = engine(3, &["hotel"], |c| c.modes.zero_shot = true);
        for d in &corpus.dialogs {
            let (t, done) = e.run_episode(d, Source::CorpusReplay).unwrap();
            assert!(t.strategies_used.values().all(|id| id.as_str().starts_with(STATIC_PREFIX)));
            assert!(done.epoch.is_none());
        }
        assert!(e.with_bank(|b| b.is_empty()));
        assert!(matches!(e.trigger_evolution(), Err(EngineError::EvolutionDisabled)));
    }

    #[test]
    fn batched_trigger_waits_for_n_dialogs() {
        let (e, corpus) = engine(4, &["hotel"], |c| c.trigger = TriggerPolicy::PerNDialogs { n: 3 });
        let fired: Vec<bool> = corpus
            .dialogs
            .iter()
            .map(|d| e.run_episode(d, Source::CorpusReplay).unwrap().1.epoch.is_some())
            .collect();
        assert_eq!(fired, vec![false, false, true, false]);
        assert_eq!(e.pending(), 1);
        let r = e.trigger_evolution().unwrap();
        assert_eq!(r.trajectories, 1);
        assert_eq!(e.pending(), 0);
        assert!(e.trigger_evolution().unwrap().trajectories == 0);
    }

    #[test]
    fn concurrent_trigger_is_refused() {
        let (e, _) = engine(1, &["hotel"], |_| {});
        e.evolving.store(true, Ordering::SeqCst);
        assert!(matches!(e.trigger_evolution(), Err(EngineError::EpochInFlight)));
    }

    #[test]
    fn evaluation_does_not_touch_engine_state() {
        let (e, corpus) = engine(3, &["hotel"], |_| {});
        let mut bank = e.bank_snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = e.evaluate_episode(&corpus.dialogs[0], &mut bank, &mut rng).unwrap();
        assert!(!t.turns.is_empty());
        assert!(e.with_bank(|b| b.is_empty()));
        assert_eq!(e.with_memory(|m| m.len()), 0);
        assert_eq!(bank.alive_count(), 30);
    }

    #[test]
    fn per_turn_trigger_runs_extra_epochs() {
        let (e, corpus) = engine(8, &["hotel"], |c| {
            c.trigger = TriggerPolicy::PerTurn;
            c.synth.as_mut().unwrap().multi_domain_prob = 0.0;
        });
        for d in &corpus.dialogs {
            e.run_episode(d, Source::CorpusReplay).unwrap();
        }
        assert!(e.epoch_count() >= 8);
        let calls = e.offline_gateway().stats().by_template.get(TemplateId::Mutation.as_str()).map_or(0, |s| s.calls);
        assert!(calls > 0);
    }
}
