use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{EvolutionError, Evolver, Operation, Operator};
use crate::bank::{FeedbackSignal, NewStrategy, StrategyBank, StrategyMetadata};
use crate::embedding::similar_groups;
use crate::llm::schema::{ConsolidationReply, MutationReply, StrategyStub};
use crate::llm::{PromptOptions, TemplateId};
use crate::memory::Trajectory;
use crate::types::{AgentType, DomainSet, StrategyId};

/// Numbered strategy listing for the consolidation prompt.
pub fn strategies_text<'s>(contents: impl IntoIterator<Item = &'s str>) -> String {
    contents
        .into_iter()
        .enumerate()
        .map(|(i, c)| format!("## Strategy {}\n{c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Full turn-by-turn rendering of a trajectory, critiques included.
pub fn format_trajectory(traj: &Trajectory, with_reasoning: bool) -> String {
    let mut out = Vec::new();
    for t in &traj.turns {
        let mut block = format!(
            "Turn {}\nUser: {}\nBelief State: {}\nSystem Action: {}\nSystem: {}",
            t.turn_index + 1,
            t.user_utterance,
            t.belief_state.to_json(),
            t.system_action,
            t.system_response
        );
        for c in t.critiques.iter().filter(|c| c.is_negative()) {
            block.push_str(&format!("\nCritique {} -> {}: {}", c.author, c.target, c.text));
            if with_reasoning && !c.rationale.is_empty() {
                block.push_str(&format!(" ({})", c.rationale));
            }
        }
        out.push(block);
    }
    out.join("\n\n")
}

/// Critiques aimed at `agent`, or a note that there were none.
fn feedback_for(traj: &Trajectory, agent: AgentType, with_reasoning: bool) -> String {
    let lines: Vec<String> = traj
        .turns
        .iter()
        .flat_map(|t| t.critiques.iter().map(move |c| (t.turn_index, c)))
        .filter(|(_, c)| c.is_negative() && c.target.as_agent_type() == Some(agent))
        .map(|(i, c)| {
            let mut l = format!("- Turn {} ({}): {}", i + 1, c.author, c.text);
            if with_reasoning && !c.rationale.is_empty() {
                l.push_str(&format!(" Reason: {}", c.rationale));
            }
            l
        })
        .collect();
    if lines.is_empty() {
        format!("No critique targeted the {agent} module. Dialog result: {:?}.", traj.outcome)
    } else {
        lines.join("\n")
    }
}

impl Evolver<'_> {
    /// Synthesizes `genesis_count` fresh strategies from the domain name alone.
    pub fn genesis(
        &self,
        bank: &mut StrategyBank,
        domains: &DomainSet,
        agent: AgentType,
    ) -> Result<Vec<StrategyId>, EvolutionError> {
        if domains.len() != 1 {
            return Err(EvolutionError::NotSingleDomain(domains.clone()));
        }
        if bank.is_covered(domains, agent) {
            return Err(EvolutionError::AlreadyCovered {
                agent,
                domains: domains.clone(),
            });
        }
        let k = self.params.genesis_count;
        let mut vars = BTreeMap::new();
        vars.insert("num".to_string(), k.to_string());
        vars.insert("domain_str".to_string(), domains.to_string());
        vars.insert("agent_type".to_string(), agent.as_str().to_string());
        vars.insert("agent_role".to_string(), agent.role().to_string());
        let reply = self.gateway.complete_structured_with::<Vec<StrategyStub>>(
            TemplateId::Genesis,
            &vars,
            PromptOptions::default(),
            |stubs| {
                if stubs.len() == k {
                    Ok(())
                } else {
                    Err(format!("expected {k} strategies, got {}", stubs.len()))
                }
            },
        )?;
        reply
            .value
            .into_iter()
            .map(|stub| {
                bank.insert(NewStrategy {
                    agent_type: agent,
                    domains: domains.clone(),
                    content: stub.content,
                    rationale: stub.reason,
                    metadata: StrategyMetadata::fresh(1),
                    parents: vec![],
                })
                .map_err(EvolutionError::from)
            })
            .collect()
    }

    /// Merges one randomly chosen single-domain strategy per constituent into
    /// a composite for the whole combination. Sources stay alive.
    pub fn compose_multidomain<R: Rng + ?Sized>(
        &self,
        bank: &mut StrategyBank,
        domains: &DomainSet,
        agent: AgentType,
        rng: &mut R,
    ) -> Result<(Vec<StrategyId>, StrategyId), EvolutionError> {
        if domains.len() < 2 {
            return Err(EvolutionError::NotMultiDomain(domains.clone()));
        }
        let mut sources = Vec::new();
        for d in domains.iter() {
            let pool = bank.candidates_for(&DomainSet::single(d), agent);
            let pick = pool.choose(rng).ok_or_else(|| EvolutionError::MissingConstituent {
                agent,
                domain: d.to_string(),
            })?;
            sources.push((*pick).clone());
        }
        let reply = self.merge_call(agent, domains, sources.iter().map(|s| s.content.as_str()))?;
        let mut metadata = StrategyMetadata::averaged(sources.iter().map(|s| &s.metadata));
        metadata.generation_index = sources.iter().map(|s| s.metadata.generation_index).max().unwrap_or(0) + 1;
        let inputs: Vec<StrategyId> = sources.iter().map(|s| s.id.clone()).collect();
        let id = bank.insert(NewStrategy {
            agent_type: agent,
            domains: domains.clone(),
            content: reply.content,
            rationale: reply.reason,
            metadata,
            parents: inputs.clone(),
        })?;
        Ok((inputs, id))
    }

    fn merge_call<'s>(
        &self,
        agent: AgentType,
        domains: &DomainSet,
        contents: impl IntoIterator<Item = &'s str>,
    ) -> Result<ConsolidationReply, EvolutionError> {
        let mut vars = BTreeMap::new();
        vars.insert("agent_type".to_string(), agent.as_str().to_string());
        vars.insert("domains_str".to_string(), domains.joined(", "));
        vars.insert("strategies_text".to_string(), strategies_text(contents));
        Ok(self
            .gateway
            .complete_structured::<ConsolidationReply>(TemplateId::Consolidation, &vars, PromptOptions::default())?
            .value)
    }

    /// Revises `id` in light of `traj`. The score lands on the parent's
    /// counters, the child inherits them with generation + 1, and the parent
    /// is retired. Returns the score and the child id.
    pub fn mutate(
        &self,
        bank: &mut StrategyBank,
        id: &StrategyId,
        traj: &Trajectory,
    ) -> Result<(i8, StrategyId), EvolutionError> {
        let parent = bank.get_alive(id)?.clone();
        let agent = parent.agent_type;
        let used = AgentType::ALL
            .iter()
            .filter_map(|a| {
                let sid = traj.strategies_used.get(a)?;
                let content = bank.get(sid).map(|s| s.content.as_str()).unwrap_or("(static strategy)");
                Some(format!("{a}: {content}"))
            })
            .collect::<Vec<_>>()
            .join("\n");
        let mut vars = BTreeMap::new();
        vars.insert("agent_type".to_string(), agent.as_str().to_string());
        vars.insert("agent_goal".to_string(), agent.goal().to_string());
        vars.insert("domain_str".to_string(), parent.domains.joined(", "));
        vars.insert(
            "dialog_result".to_string(),
            if traj.outcome.is_success() { "Success" } else { "Failure" }.to_string(),
        );
        vars.insert("goal".to_string(), traj.goal.render());
        vars.insert("formatted_history".to_string(), format_trajectory(traj, self.with_reasoning));
        vars.insert("strategies_by_type".to_string(), used);
        vars.insert("evolve_data".to_string(), feedback_for(traj, agent, self.with_reasoning));
        let reply = self.gateway.complete_structured_with::<MutationReply>(
            TemplateId::Mutation,
            &vars,
            PromptOptions::default(),
            |r| {
                if r.strategy.agent_type.trim().eq_ignore_ascii_case(agent.as_str()) {
                    Ok(())
                } else {
                    Err(format!("mutation answered for `{}`, expected {agent}", r.strategy.agent_type))
                }
            },
        )?;
        let m = reply.value.strategy;
        match m.score {
            1 => {
                bank.record_feedback(id, FeedbackSignal::Positive)?;
            }
            -1 => {
                bank.record_feedback(id, FeedbackSignal::Negative)?;
            }
            _ => {}
        }
        let mut metadata = bank.get_alive(id)?.metadata;
        metadata.generation_index += 1;
        metadata.inherited_usage = metadata.usage_count;
        let child = bank.insert(NewStrategy {
            agent_type: agent,
            domains: parent.domains.clone(),
            content: m.content,
            rationale: m.reason,
            metadata,
            parents: vec![id.clone()],
        })?;
        bank.retire(id)?;
        Ok((m.score, child))
    }

    /// Merges `ids` into one strategy with averaged counters and generation
    /// `max + 1`; the sources are retired.
    pub fn consolidate(&self, bank: &mut StrategyBank, ids: &[StrategyId]) -> Result<StrategyId, EvolutionError> {
        let sources = ids
            .iter()
            .map(|id| bank.get_alive(id).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        let first = &sources[0];
        let reply = self.merge_call(first.agent_type, &first.domains, sources.iter().map(|s| s.content.as_str()))?;
        let mut metadata = StrategyMetadata::averaged(sources.iter().map(|s| &s.metadata));
        metadata.generation_index = sources.iter().map(|s| s.metadata.generation_index).max().unwrap_or(0) + 1;
        let id = bank.insert(NewStrategy {
            agent_type: first.agent_type,
            domains: first.domains.clone(),
            content: reply.content,
            rationale: reply.reason,
            metadata,
            parents: ids.to_vec(),
        })?;
        for s in ids {
            bank.retire(s)?;
        }
        Ok(id)
    }

    /// Groups one population at the similarity threshold and merges each group.
    /// Returns the merges done and the failures of groups left unmerged.
    pub(super) fn consolidate_population(
        &self,
        bank: &mut StrategyBank,
        agent: AgentType,
        domains: &DomainSet,
    ) -> Result<(Vec<Operation>, Vec<String>), EvolutionError> {
        let members: Vec<(StrategyId, String)> = bank
            .candidates_for(domains, agent)
            .into_iter()
            .map(|s| (s.id.clone(), s.content.clone()))
            .collect();
        if members.len() < 2 {
            return Ok((vec![], vec![]));
        }
        let texts: Vec<&str> = members.iter().map(|(_, c)| c.as_str()).collect();
        let groups = similar_groups(self.embedder, &texts, self.params.delta)?;
        let mut ops = Vec::new();
        let mut failures = Vec::new();
        for g in groups {
            let ids: Vec<StrategyId> = g.iter().map(|&i| members[i].0.clone()).collect();
            match self.consolidate(bank, &ids) {
                Ok(out) => ops.push(Operation {
                    operator: Operator::Consolidation,
                    inputs: ids,
                    outputs: vec![out],
                    score: None,
                }),
                Err(e) => failures.push(format!("consolidation of {ids:?}: {e}")),
            }
        }
        Ok((ops, failures))
    }
}
