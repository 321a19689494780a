//! Live operation on top of an [`Engine`]: chat sessions, bank inspection,
//! analytics and manual evolution. Transport-free; the HTTP layer in the CLI
//! maps [`ServiceError`] onto status codes.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::StrategyMetadata;
use crate::corpus::UserGoal;
use crate::engine::{Engine, EngineError, FinishedDialog};
use crate::evolution::EvolutionReport;
use crate::memory::{CritiqueEntry, Outcome, Source, TurnRecord};
use crate::metrics::{bank_stats, BankAnalytics, MetricError};
use crate::pipeline::{BeliefState, DialogContext, DialogVerdict};
use crate::types::{AgentType, DomainSet, StrategyId};

/// Utterance that closes a session instead of running a turn.
pub const END_COMMAND: &str = "/end";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` has ended")]
    SessionEnded(String),
    #[error("session `{0}` already has a turn in flight")]
    TurnInFlight(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl ServiceError {
    /// Whether the request collided with concurrent work and may be retried.
    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            ServiceError::TurnInFlight(_) | ServiceError::SessionEnded(_) | ServiceError::Engine(EngineError::EpochInFlight)
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    /// Scored at `/end` when present.
    pub goal: Option<UserGoal>,
    /// Domains the chat covers; taken from the goal when omitted.
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Ended,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub domains: DomainSet,
    pub status: SessionStatus,
    pub strategies: BTreeMap<AgentType, StrategyId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_index: usize,
    pub system_response: String,
    pub belief_state: BeliefState,
    pub system_action: String,
    pub critiques: Vec<CritiqueEntry>,
    pub strategies: BTreeMap<AgentType, StrategyId>,
    pub aborted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndView {
    pub record_id: u64,
    pub outcome: Outcome,
    pub verdict: DialogVerdict,
    pub turns: usize,
    pub epoch: Option<EvolutionReport>,
    pub epoch_error: Option<String>,
}

/// Reply to a message: either a turn or, for [`END_COMMAND`], the closing score.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TurnReply {
    Turn(TurnView),
    Ended(EndView),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BankFilter {
    pub agent_type: Option<AgentType>,
    pub domain: Option<String>,
    pub include_dead: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRow {
    pub id: StrategyId,
    pub agent_type: AgentType,
    pub domains: DomainSet,
    pub content: String,
    pub alive: bool,
    /// Absent for dead strategies, which have no population to rank within.
    pub fitness: Option<f64>,
    pub metadata: StrategyMetadata,
    pub parents: Vec<StrategyId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsView {
    pub epochs: u64,
    pub pending_dialogs: usize,
    pub ssm_records: usize,
    pub alive: usize,
    pub total: usize,
    /// Absent while the bank has no alive strategy.
    pub bank: Option<BankAnalytics>,
    pub last_p: Option<f64>,
    pub last_mu: Option<f64>,
}

struct Session {
    id: String,
    domains: DomainSet,
    /// `None` once ended.
    ctx: Option<DialogContext>,
}

pub struct Service {
    engine: Arc<Engine>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(engine: Arc<Engine>) -> Self {
        Service {
            engine,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionInfo, ServiceError> {
        let goal = req.goal.unwrap_or_default();
        let domains = if req.domains.is_empty() {
            goal.domain_set()
                .ok_or_else(|| ServiceError::BadRequest("either `domains` or a goal is required".into()))?
        } else {
            DomainSet::new(&req.domains).map_err(ServiceError::BadRequest)?
        };
        for d in domains.iter() {
            if self.engine.db().domain(d).is_none() {
                return Err(ServiceError::BadRequest(format!("unknown domain `{d}`")));
            }
        }
        if let Some(gd) = goal.domain_set() {
            if gd != domains {
                return Err(ServiceError::BadRequest(format!("goal covers {gd}, session declares {domains}")));
            }
        }
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let ctx = self.engine.start_dialog(&format!("live-{id}"), domains.clone(), goal)?;
        let info = SessionInfo {
            session_id: id.clone(),
            domains,
            status: SessionStatus::Open,
            strategies: ctx.strategy_ids(),
        };
        self.sessions.lock().insert(
            id.clone(),
            Arc::new(Mutex::new(Session {
                id,
                domains: info.domains.clone(),
                ctx: Some(ctx),
            })),
        );
        Ok(info)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Runs one turn, or closes the session on [`END_COMMAND`]. A second
    /// message while one is in flight fails instead of queueing.
    pub fn handle_turn(&self, session_id: &str, utterance: &str) -> Result<TurnReply, ServiceError> {
        let handle = self.session(session_id)?;
        let mut session = handle
            .try_lock()
            .ok_or_else(|| ServiceError::TurnInFlight(session_id.to_string()))?;
        let text = utterance.trim();
        if text.is_empty() {
            return Err(ServiceError::BadRequest("empty utterance".into()));
        }
        let ctx = session
            .ctx
            .as_mut()
            .ok_or_else(|| ServiceError::SessionEnded(session_id.to_string()))?;
        if text == END_COMMAND {
            if ctx.history.is_empty() {
                return Err(ServiceError::BadRequest("nothing to end: the session has no turns".into()));
            }
            let ctx = session.ctx.take().expect("checked above");
            let turns = ctx.history.len();
            let FinishedDialog {
                record_id,
                verdict,
                outcome,
                epoch,
                epoch_error,
            } = self.engine.finish_dialog(ctx, Source::LiveChat)?;
            tracing::info!(session = %session.id, record_id, ?outcome, "session ended");
            return Ok(TurnReply::Ended(EndView {
                record_id,
                outcome,
                verdict,
                turns,
                epoch,
                epoch_error,
            }));
        }
        if ctx.history.len() >= ctx.max_turns {
            return Err(ServiceError::BadRequest(format!(
                "turn cap of {} reached; send {END_COMMAND}",
                ctx.max_turns
            )));
        }
        let strategies = ctx.strategy_ids();
        let TurnRecord {
            turn_index,
            belief_state,
            system_action,
            system_response,
            critiques,
            aborted,
            ..
        } = self.engine.run_turn(ctx, text);
        Ok(TurnReply::Turn(TurnView {
            turn_index,
            system_response,
            belief_state,
            system_action,
            critiques,
            strategies,
            aborted,
        }))
    }

    /// Forgets a session without scoring it.
    pub fn delete_session(&self, session_id: &str) -> Result<(), ServiceError> {
        self.sessions
            .lock()
            .remove(session_id)
            .map(|_| ())
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    pub fn session_info(&self, session_id: &str) -> Result<SessionInfo, ServiceError> {
        let handle = self.session(session_id)?;
        let s = handle
            .try_lock()
            .ok_or_else(|| ServiceError::TurnInFlight(session_id.to_string()))?;
        Ok(SessionInfo {
            session_id: s.id.clone(),
            domains: s.domains.clone(),
            status: if s.ctx.is_some() { SessionStatus::Open } else { SessionStatus::Ended },
            strategies: s.ctx.as_ref().map(DialogContext::strategy_ids).unwrap_or_default(),
        })
    }

    /// Bank rows matching `filter`, with fitness computed on one snapshot.
    pub fn bank_view(&self, filter: &BankFilter) -> Vec<BankRow> {
        let params = self.engine.config().fitness;
        self.engine.with_bank(|bank| {
            let fitness = bank.fitness_map(&params);
            bank.iter()
                .filter(|s| filter.include_dead || s.alive)
                .filter(|s| filter.agent_type.is_none() || filter.agent_type == Some(s.agent_type))
                .filter(|s| match filter.domain.as_deref() {
                    Some(d) => s.domains.contains(d),
                    None => true,
                })
                .map(|s| BankRow {
                    id: s.id.clone(),
                    agent_type: s.agent_type,
                    domains: s.domains.clone(),
                    content: s.content.clone(),
                    alive: s.alive,
                    fitness: fitness.get(&s.id).copied(),
                    metadata: s.metadata,
                    parents: s.parents.clone(),
                })
                .collect()
        })
    }

    pub fn analytics(&self) -> Result<AnalyticsView, ServiceError> {
        let bank = self.engine.bank_snapshot();
        let stats = if bank.alive_count() > 0 {
            Some(bank_stats(&bank, self.engine.embedder(), &self.engine.config().fitness)?)
        } else {
            None
        };
        let last = self.engine.epochs().pop();
        Ok(AnalyticsView {
            epochs: self.engine.epoch_count(),
            pending_dialogs: self.engine.pending(),
            ssm_records: self.engine.with_memory(|m| m.len()),
            alive: bank.alive_count(),
            total: bank.len(),
            bank: stats,
            last_p: last.as_ref().map(|r| r.measured_p),
            last_mu: last.and_then(|r| r.measured_mu),
        })
    }

    pub fn evolve(&self) -> Result<EvolutionReport, ServiceError> {
        Ok(self.engine.trigger_evolution()?)
    }

    pub fn epochs(&self) -> Vec<EvolutionReport> {
        self.engine.epochs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::corpus::synth::SynthSpec;
    use crate::engine::load_data;

    fn service() -> Service {
        let cfg = EngineConfig::synthetic(3, SynthSpec::new(3, 4, &["hotel"]));
        let (_, db) = load_data(&cfg).unwrap();
        Service::new(Arc::new(Engine::new(cfg, db).unwrap()))
    }

    fn open(svc: &Service) -> String {
        svc.create_session(CreateSession {
            goal: None,
            domains: vec!["hotel".into()],
        })
        .unwrap()
        .session_id
    }

    #[test]
    fn two_turns_then_end_logs_one_live_trajectory() {
        let svc = service();
        let id = open(&svc);
        for u in ["i need a hotel in the north", "what is the phone number?"] {
            assert!(matches!(svc.handle_turn(&id, u).unwrap(), TurnReply::Turn(_)));
        }
        let TurnReply::Ended(end) = svc.handle_turn(&id, "/end").unwrap() else {
            panic!("expected the session to end")
        };
        assert_eq!(end.turns, 2);
        svc.engine().with_memory(|m| {
            assert_eq!(m.len(), 1);
            assert_eq!(m.iter().next().unwrap().source, Source::LiveChat);
        });
        assert!(matches!(svc.handle_turn(&id, "hello"), Err(ServiceError::SessionEnded(_))));
        assert_eq!(svc.session_info(&id).unwrap().status, SessionStatus::Ended);
    }

    #[test]
    fn lifecycle_errors() {
        let svc = service();
        assert!(matches!(svc.handle_turn("nope", "hi"), Err(ServiceError::UnknownSession(_))));
        let id = open(&svc);
        assert!(matches!(svc.handle_turn(&id, "/end"), Err(ServiceError::BadRequest(_))));
        let handle = svc.session(&id).unwrap();
        let guard = handle.lock();
        let err = svc.handle_turn(&id, "hi").unwrap_err();
        assert!(err.is_conflict(), "{err}");
        drop(guard);
        svc.delete_session(&id).unwrap();
        assert!(matches!(svc.delete_session(&id), Err(ServiceError::UnknownSession(_))));
        let bad = svc.create_session(CreateSession {
            goal: None,
            domains: vec!["spaceport".into()],
        });
        assert!(matches!(bad, Err(ServiceError::BadRequest(_))));
    }

    #[test]
    fn bank_view_matches_engine_fitness_and_filters() {
        let svc = service();
        assert!(svc.bank_view(&BankFilter::default()).is_empty());
        let analytics = svc.analytics().unwrap();
        assert!(analytics.bank.is_none());
        open(&svc);
        let rows = svc.bank_view(&BankFilter::default());
        assert_eq!(rows.len(), 30);
        let params = svc.engine().config().fitness;
        svc.engine().with_bank(|b| {
            for r in &rows {
                assert_eq!(r.fitness.unwrap(), b.fitness(&r.id, &params).unwrap());
            }
        });
        let dp = svc.bank_view(&BankFilter {
            agent_type: Some(AgentType::Dp),
            ..Default::default()
        });
        assert_eq!(dp.len(), 10);
        assert!(dp.iter().all(|r| r.agent_type == AgentType::Dp));
        let analytics = svc.analytics().unwrap();
        assert_eq!(analytics.alive, 30);
        assert!(analytics.bank.unwrap().entropy_bits > 0.0);
    }
}
