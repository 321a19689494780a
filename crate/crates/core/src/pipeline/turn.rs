//! One dialog turn through the online agents.
//!
//! Standard mode calls DST, DP and NLG in order, then the user simulator when
//! peer critique is on. Each agent critiques the output that precedes its own:
//! DST the user, DP the tracker, NLG the policy, the simulator the response.
//! End-to-end mode replaces the chain with one agent in at most two calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::action::SystemAction;
use super::belief::BeliefState;
use super::database::query_database;
use crate::corpus::{DomainDatabase, Entity, Schema, UserGoal};
use crate::llm::schema::{
    ArbiterReply, DbQuery, DpReply, DstReply, E2ePart1Reply, E2ePart2Reply, NlgReply, UserSimReply,
};
use crate::llm::{Gateway, GatewayError, PromptOptions, TemplateId};
use crate::memory::{ArbitrationRecord, CritiqueEntry, TurnRecord};
use crate::types::{AgentRole, AgentType, DomainSet, StrategyId};

/// Entities listed verbatim in the NLG prompt; the count is always given.
pub const DB_RESULTS_SHOWN: usize = 5;

/// Ablation switches for the online pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeFlags {
    pub with_reasoning: bool,
    pub with_peer_critique: bool,
    pub e2e_agent: bool,
    pub arbitration: bool,
    /// Static hand-written strategies, no bank reads or writes.
    pub zero_shot: bool,
}

impl Default for ModeFlags {
    fn default() -> Self {
        ModeFlags {
            with_reasoning: true,
            with_peer_critique: true,
            e2e_agent: false,
            arbitration: false,
            zero_shot: false,
        }
    }
}

impl ModeFlags {
    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            critique: self.with_peer_critique,
            reasoning: self.with_reasoning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveStrategy {
    pub id: StrategyId,
    pub content: String,
}

/// Mutable state of one dialog in progress.
#[derive(Debug, Clone)]
pub struct DialogContext {
    pub dialog_id: String,
    pub domains: DomainSet,
    pub goal: UserGoal,
    pub strategies: BTreeMap<AgentType, ActiveStrategy>,
    pub belief: BeliefState,
    pub history: Vec<TurnRecord>,
    pub modes: ModeFlags,
    pub max_turns: usize,
}

impl DialogContext {
    pub fn new(
        dialog_id: impl Into<String>,
        domains: DomainSet,
        goal: UserGoal,
        strategies: BTreeMap<AgentType, ActiveStrategy>,
        modes: ModeFlags,
        max_turns: usize,
    ) -> Self {
        DialogContext {
            dialog_id: dialog_id.into(),
            domains,
            goal,
            strategies,
            belief: BeliefState::new(),
            history: Vec::new(),
            modes,
            max_turns,
        }
    }

    pub fn turn_index(&self) -> usize {
        self.history.len()
    }

    pub fn exhausted(&self) -> bool {
        self.history.len() >= self.max_turns
    }

    pub fn strategy_ids(&self) -> BTreeMap<AgentType, StrategyId> {
        self.strategies.iter().map(|(a, s)| (*a, s.id.clone())).collect()
    }
}

fn format_history(history: &[TurnRecord]) -> String {
    let mut out = String::from("## Dialog History\n");
    if history.is_empty() {
        out.push_str("(no previous turns)");
        return out;
    }
    for t in history {
        out.push_str(&format!("User: {}\nSystem: {}\n", t.user_utterance, t.system_response));
    }
    out.truncate(out.trim_end().len());
    out
}

fn format_strategy(content: &str) -> String {
    format!("## Strategy\n{content}")
}

fn format_db_results(query: Option<(&DbQuery, &[&Entity])>) -> String {
    let Some((q, rows)) = query else {
        return "## Database Results\nNo database query was made this turn.".to_string();
    };
    let constraints = serde_json::to_string(&q.constraints()).expect("constraints serialize");
    let mut out = format!(
        "## Database Results\nQuery: {} {constraints}\n{} matching entities",
        q.domain,
        rows.len()
    );
    for (i, e) in rows.iter().take(DB_RESULTS_SHOWN).enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, serde_json::to_string(e).expect("entity serializes")));
    }
    out
}

/// Resolves the queried domain: an empty or unknown name falls back to the
/// sole dialog domain.
fn query_domain(q: &DbQuery, domains: &DomainSet) -> Option<String> {
    let d = q.domain.trim().to_lowercase();
    if domains.contains(&d) {
        Some(d)
    } else if domains.len() == 1 {
        domains.iter().next().map(str::to_string)
    } else {
        None
    }
}

fn check_action(text: &str, schema: &Schema, domains: &DomainSet) -> Result<(), String> {
    let action = SystemAction::parse(text).map_err(|e| e.to_string())?;
    action.validate_slots(schema, domains).map_err(|e| e.to_string())
}

fn check_query(q: &DbQuery, db: &DomainDatabase, domains: &DomainSet) -> Result<(), String> {
    let domain = query_domain(q, domains).ok_or_else(|| format!("query domain `{}` is not a dialog domain", q.domain))?;
    query_database(db, &domain, &q.constraints())
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Drops domains outside the dialog and slots the schema does not know.
fn sanitize_belief(mut belief: BeliefState, schema: &Schema, domains: &DomainSet) -> BeliefState {
    let dropped = belief.restrict_to(domains);
    if !dropped.is_empty() {
        tracing::debug!(?dropped, "belief state mentioned domains outside the dialog");
    }
    for (domain, slots) in belief.0.iter_mut() {
        slots.retain(|slot, _| schema.has_slot(domain, slot));
    }
    belief.0.retain(|_, slots| !slots.is_empty());
    belief
}

fn system_failure(target: AgentRole, err: &GatewayError) -> CritiqueEntry {
    CritiqueEntry {
        author: AgentRole::System,
        target,
        text: format!("agent failure: {err}"),
        rationale: err.raw().unwrap_or_default().to_string(),
    }
}

/// Runs turns against one gateway and database.
pub struct TurnRunner<'a> {
    pub gateway: &'a Gateway,
    pub db: &'a DomainDatabase,
}

struct Outputs {
    belief: BeliefState,
    belief_reason: String,
    action: String,
    action_reason: String,
    response: String,
    response_reason: String,
    db_count: Option<usize>,
}

impl<'a> TurnRunner<'a> {
    pub fn new(gateway: &'a Gateway, db: &'a DomainDatabase) -> Self {
        TurnRunner { gateway, db }
    }

    fn strategy(&self, ctx: &DialogContext, agent: AgentType) -> String {
        ctx.strategies.get(&agent).map(|s| s.content.clone()).unwrap_or_default()
    }

    fn base_vars(&self, ctx: &DialogContext, user_utterance: &str) -> BTreeMap<String, String> {
        let mut v = BTreeMap::new();
        v.insert("domains".into(), ctx.domains.joined(", "));
        v.insert("user_utterance".into(), user_utterance.to_string());
        v.insert("formatted_history".into(), format_history(&ctx.history));
        v
    }

    /// Executes one turn and appends it to `ctx.history`. Agent failures are
    /// recorded in the turn rather than returned.
    pub fn run_turn(&self, ctx: &mut DialogContext, user_utterance: &str) -> TurnRecord {
        let record = if ctx.modes.e2e_agent {
            self.run_e2e(ctx, user_utterance)
        } else {
            self.run_standard(ctx, user_utterance)
        };
        ctx.belief = record.belief_state.clone();
        ctx.history.push(record.clone());
        record
    }

    fn run_standard(&self, ctx: &DialogContext, user_utterance: &str) -> TurnRecord {
        let opts = ctx.modes.prompt_options();
        let schema = &self.db.schema;
        let mut critiques = Vec::new();
        let mut arbitrations = Vec::new();
        let mut aborted = false;
        let mut out = Outputs {
            belief: ctx.belief.clone(),
            belief_reason: String::new(),
            action: String::new(),
            action_reason: String::new(),
            response: String::new(),
            response_reason: String::new(),
            db_count: None,
        };
        let base = self.base_vars(ctx, user_utterance);

        // DST
        let mut vars = base.clone();
        vars.insert("previous_belief_state".into(), format!("Previous Belief State: {}", ctx.belief.to_json()));
        vars.insert("formatted_esb".into(), format_strategy(&self.strategy(ctx, AgentType::Dst)));
        match self.gateway.complete_structured::<DstReply>(TemplateId::Dst, &vars, opts) {
            Ok(r) => {
                out.belief = sanitize_belief(r.value.belief_state, schema, &ctx.domains);
                out.belief_reason = r.value.reason;
                if opts.critique {
                    critiques.push(CritiqueEntry {
                        author: AgentRole::Dst,
                        target: AgentRole::UserSim,
                        text: r.value.critique,
                        rationale: String::new(),
                    });
                }
            }
            Err(e) => {
                aborted = true;
                critiques.push(system_failure(AgentRole::Dst, &e));
            }
        }

        // DP
        let mut vars = base.clone();
        vars.insert("belief_state".into(), out.belief.to_json());
        vars.insert("pre_belief_state".into(), ctx.belief.to_json());
        vars.insert("formatted_esb".into(), format_strategy(&self.strategy(ctx, AgentType::Dp)));
        let domains = ctx.domains.clone();
        let dp = self
            .gateway
            .complete_structured_with::<DpReply>(TemplateId::Dp, &vars, opts, |r| {
                check_action(&r.system_action, schema, &domains)?;
                match (&r.query_db, &r.query) {
                    (true, Some(q)) => check_query(q, self.db, &domains),
                    _ => Ok(()),
                }
            });
        let mut query = None;
        match dp {
            Ok(r) => {
                out.action = r.value.system_action;
                out.action_reason = r.value.reason;
                if r.value.query_db {
                    query = r.value.query;
                }
                if opts.critique {
                    let critique = CritiqueEntry {
                        author: AgentRole::Dp,
                        target: AgentRole::Dst,
                        text: r.value.critique,
                        rationale: String::new(),
                    };
                    if let Some(a) = self.arbitrate(ctx, &critique, &mut out) {
                        arbitrations.push(a);
                    }
                    critiques.push(critique);
                }
            }
            Err(e) => {
                critiques.push(system_failure(AgentRole::Dp, &e));
                return TurnRecord {
                    turn_index: ctx.turn_index(),
                    user_utterance: user_utterance.to_string(),
                    belief_state: out.belief,
                    system_action: String::new(),
                    system_response: String::new(),
                    critiques,
                    db_result_count: None,
                    aborted: true,
                    arbitrations,
                };
            }
        }

        let rows: Vec<&Entity> = query
            .as_ref()
            .and_then(|q| {
                let d = query_domain(q, &ctx.domains)?;
                query_database(self.db, &d, &q.constraints()).ok()
            })
            .unwrap_or_default();
        out.db_count = query.as_ref().map(|_| rows.len());

        // NLG
        let mut vars = base.clone();
        vars.insert("system_action".into(), out.action.clone());
        vars.insert(
            "formatted_db_results".into(),
            format_db_results(query.as_ref().map(|q| (q, rows.as_slice()))),
        );
        vars.insert("formatted_esb".into(), format_strategy(&self.strategy(ctx, AgentType::Nlg)));
        let nlg = self
            .gateway
            .complete_structured_with::<NlgReply>(TemplateId::Nlg, &vars, opts, |r| {
                if r.system_utterance.trim().is_empty() {
                    Err("empty system utterance".to_string())
                } else {
                    Ok(())
                }
            });
        let mut nlg_ok = false;
        match nlg {
            Ok(r) => {
                nlg_ok = true;
                out.response = r.value.system_utterance;
                out.response_reason = r.value.reason;
                if opts.critique {
                    let critique = CritiqueEntry {
                        author: AgentRole::Nlg,
                        target: AgentRole::Dp,
                        text: r.value.critique,
                        rationale: String::new(),
                    };
                    if let Some(a) = self.arbitrate(ctx, &critique, &mut out) {
                        arbitrations.push(a);
                    }
                    critiques.push(critique);
                }
            }
            Err(e) => {
                aborted = true;
                critiques.push(system_failure(AgentRole::Nlg, &e));
            }
        }

        // User simulator, critic of the response
        if opts.critique && nlg_ok {
            let mut vars = BTreeMap::new();
            vars.insert("domains".into(), ctx.domains.joined(", "));
            vars.insert("goal".into(), ctx.goal.render());
            let mut prev = format!("- System Action: {}\n- System Response: {}", out.action, out.response);
            if opts.reasoning {
                prev.push_str(&format!("\n- Reason: {}", out.response_reason));
            }
            vars.insert("formatted_prev_agent_output".into(), prev);
            vars.insert("belief_state".into(), out.belief.to_json());
            vars.insert("formatted_history".into(), format_history(&ctx.history));
            match self.gateway.complete_structured::<UserSimReply>(TemplateId::UserSim, &vars, opts) {
                Ok(r) => {
                    let critique = CritiqueEntry {
                        author: AgentRole::UserSim,
                        target: AgentRole::Nlg,
                        text: r.value.critique,
                        rationale: String::new(),
                    };
                    if let Some(a) = self.arbitrate(ctx, &critique, &mut out) {
                        arbitrations.push(a);
                    }
                    critiques.push(critique);
                }
                Err(e) => {
                    // the simulator produces no system output, so the turn stands
                    critiques.push(system_failure(AgentRole::UserSim, &e));
                }
            }
        }

        TurnRecord {
            turn_index: ctx.turn_index(),
            user_utterance: user_utterance.to_string(),
            belief_state: out.belief,
            system_action: out.action,
            system_response: out.response,
            critiques,
            db_result_count: out.db_count,
            aborted,
            arbitrations,
        }
    }

    /// One arbiter call for a non-empty critique of a system agent. An
    /// accepted critique replaces the target's output when the arbiter's
    /// final output is usable for that agent.
    fn arbitrate(&self, ctx: &DialogContext, critique: &CritiqueEntry, out: &mut Outputs) -> Option<ArbitrationRecord> {
        if !ctx.modes.arbitration || !critique.is_negative() {
            return None;
        }
        let target = critique.target.as_agent_type()?;
        let reasoning = ctx.modes.with_reasoning;
        let original = match target {
            AgentType::Dst => {
                let mut o = serde_json::json!({ "belief_state": out.belief });
                if reasoning {
                    o["reason"] = Value::String(out.belief_reason.clone());
                }
                o
            }
            AgentType::Dp => {
                let mut o = serde_json::json!({ "system_action": out.action });
                if reasoning {
                    o["reason"] = Value::String(out.action_reason.clone());
                }
                o
            }
            AgentType::Nlg => {
                let mut o = serde_json::json!({ "system_utterance": out.response });
                if reasoning {
                    o["reason"] = Value::String(out.response_reason.clone());
                }
                o
            }
        };
        let mut vars = BTreeMap::new();
        vars.insert("domains".into(), ctx.domains.joined(", "));
        vars.insert("target_agent".into(), target.as_str().to_string());
        vars.insert("agent_role".into(), target.role().to_string());
        vars.insert("original_output".into(), original.to_string());
        vars.insert("critic_agent".into(), critique.author.to_string());
        vars.insert("critique_content".into(), critique.text.clone());
        vars.insert("formatted_history".into(), format_history(&ctx.history));
        vars.insert("formatted_belief_state".into(), format!("- Belief State: {}", out.belief.to_json()));
        let reply = match self
            .gateway
            .complete_structured::<ArbiterReply>(TemplateId::Arbiter, &vars, PromptOptions::default())
        {
            Ok(r) => r.value,
            Err(e) => {
                tracing::warn!(error = %e, "arbiter failed; keeping the original output");
                return Some(ArbitrationRecord {
                    target: critique.target,
                    critic: critique.author,
                    accepted: false,
                    applied: false,
                    reason: format!("arbiter failure: {e}"),
                });
            }
        };
        let applied = reply.critique_accepted && self.apply_final(ctx, target, &reply.final_output, out);
        Some(ArbitrationRecord {
            target: critique.target,
            critic: critique.author,
            accepted: reply.critique_accepted,
            applied,
            reason: reply.reason,
        })
    }

    fn apply_final(&self, ctx: &DialogContext, target: AgentType, fin: &Value, out: &mut Outputs) -> bool {
        let field = |name: &str| match fin {
            Value::String(s) => Some(s.clone()),
            Value::Object(m) => m.get(name).and_then(Value::as_str).map(str::to_string),
            _ => None,
        };
        match target {
            AgentType::Dst => {
                let raw = match fin {
                    Value::Object(m) => m.get("belief_state").cloned().unwrap_or_else(|| fin.clone()),
                    _ => return false,
                };
                let Ok(belief) = serde_json::from_value::<BeliefState>(normalize_state(&raw)) else {
                    return false;
                };
                out.belief = sanitize_belief(belief, &self.db.schema, &ctx.domains);
                true
            }
            AgentType::Dp => match field("system_action") {
                Some(a) if check_action(&a, &self.db.schema, &ctx.domains).is_ok() => {
                    out.action = a;
                    true
                }
                _ => false,
            },
            AgentType::Nlg => match field("system_utterance") {
                Some(u) if !u.trim().is_empty() => {
                    out.response = u;
                    true
                }
                _ => false,
            },
        }
    }

    fn run_e2e(&self, ctx: &DialogContext, user_utterance: &str) -> TurnRecord {
        let opts = ctx.modes.prompt_options();
        let schema = &self.db.schema;
        let mut critiques = Vec::new();
        let esb = AgentType::ALL
            .iter()
            .map(|a| format!("### {a}\n{}", self.strategy(ctx, *a)))
            .collect::<Vec<_>>()
            .join("\n");
        let mut vars = self.base_vars(ctx, user_utterance);
        vars.insert("pre_belief_state".into(), ctx.belief.to_json());
        vars.insert("formatted_esb".into(), format!("## Strategies\n{esb}"));
        let domains = ctx.domains.clone();
        let part1 = self
            .gateway
            .complete_structured_with::<E2ePart1Reply>(TemplateId::E2ePart1, &vars, opts, |r| {
                check_action(&r.system_action, schema, &domains)?;
                match (&r.db_query_needed, &r.query) {
                    (true, Some(q)) => check_query(q, self.db, &domains),
                    (false, _) if r.system_utterance.trim().is_empty() => {
                        Err("no query requested and no system utterance".to_string())
                    }
                    _ => Ok(()),
                }
            });
        let first = match part1 {
            Ok(r) => r.value,
            Err(e) => {
                critiques.push(system_failure(AgentRole::E2e, &e));
                return TurnRecord {
                    turn_index: ctx.turn_index(),
                    user_utterance: user_utterance.to_string(),
                    belief_state: ctx.belief.clone(),
                    system_action: String::new(),
                    system_response: String::new(),
                    critiques,
                    db_result_count: None,
                    aborted: true,
                    arbitrations: vec![],
                };
            }
        };
        if opts.critique {
            critiques.push(CritiqueEntry {
                author: AgentRole::E2e,
                target: AgentRole::UserSim,
                text: first.critique.clone(),
                rationale: String::new(),
            });
        }
        let belief = sanitize_belief(first.belief_state, schema, &ctx.domains);
        let mut response = first.system_utterance;
        let mut db_count = None;
        let mut aborted = false;
        if first.db_query_needed {
            let q = first.query.unwrap_or_default();
            let rows: Vec<&Entity> = query_domain(&q, &ctx.domains)
                .and_then(|d| query_database(self.db, &d, &q.constraints()).ok())
                .unwrap_or_default();
            db_count = Some(rows.len());
            let mut vars = self.base_vars(ctx, user_utterance);
            vars.insert("belief_state".into(), belief.to_json());
            vars.insert("system_action".into(), first.system_action.clone());
            vars.insert("formatted_db_results".into(), format_db_results(Some((&q, rows.as_slice()))));
            vars.insert("formatted_esb".into(), format!("## Strategies\n{esb}"));
            match self
                .gateway
                .complete_structured_with::<E2ePart2Reply>(TemplateId::E2ePart2, &vars, opts, |r| {
                    if r.system_utterance.trim().is_empty() {
                        Err("empty system utterance".to_string())
                    } else {
                        Ok(())
                    }
                }) {
                Ok(r) => response = r.value.system_utterance,
                Err(e) => {
                    aborted = true;
                    response.clear();
                    critiques.push(system_failure(AgentRole::E2e, &e));
                }
            }
        }
        TurnRecord {
            turn_index: ctx.turn_index(),
            user_utterance: user_utterance.to_string(),
            belief_state: belief,
            system_action: first.system_action,
            system_response: response,
            critiques,
            db_result_count: db_count,
            aborted,
            arbitrations: vec![],
        }
    }
}

/// Coerces a JSON belief-state object to `{domain: {slot: string}}`.
fn normalize_state(v: &Value) -> Value {
    let Value::Object(domains) = v else {
        return Value::Null;
    };
    let mut out = serde_json::Map::new();
    for (d, slots) in domains {
        let Value::Object(slots) = slots else { continue };
        let mut m = serde_json::Map::new();
        for (s, val) in slots {
            let text = match val {
                Value::Null => continue,
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            m.insert(s.to_lowercase(), Value::String(text));
        }
        out.insert(d.to_lowercase(), Value::Object(m));
    }
    Value::Object(out)
}
