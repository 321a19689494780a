use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bank::{NewStrategy, StrategyMetadata};
use crate::embedding::{EmbeddingVector, HashEmbedder};
use crate::llm::{MockProvider, ProviderConfig, TemplateId, Unmatched};
use crate::memory::tests::sample;
use crate::memory::{CritiqueEntry, Outcome};
use crate::types::AgentRole;

fn meta(h_plus: u64, h_minus: u64, n: u64, generation: u64) -> StrategyMetadata {
    StrategyMetadata {
        positive_feedback: h_plus,
        negative_feedback: h_minus,
        usage_count: n,
        generation_index: generation,
        inherited_usage: 0,
    }
}

fn add(bank: &mut StrategyBank, agent: AgentType, domains: &str, content: &str, m: StrategyMetadata) -> StrategyId {
    bank.insert(NewStrategy {
        agent_type: agent,
        domains: domains.parse().unwrap(),
        content: content.into(),
        rationale: String::new(),
        metadata: m,
        parents: vec![],
    })
    .unwrap()
}

fn gateway(mock: &Arc<MockProvider>) -> Gateway {
    Gateway::new(mock.clone(), ProviderConfig::offline())
}

fn stubs(n: usize) -> String {
    let items: Vec<String> = (0..n)
        .map(|i| format!(r#"{{"reason": "r{i}", "content": "strategy number {i}"}}"#))
        .collect();
    format!("[{}]", items.join(", "))
}

const MERGED: &str = r#"{"content": "merged strategy", "reason": "merged"}"#;

fn mutation(agent: &str, score: i8) -> String {
    format!(r#"{{"strategy": {{"agent_type": "{agent}", "content": "revised {agent}", "reason": "fix", "score": {score}}}}}"#)
}

/// Embeds each text as a fixed 2-d unit vector looked up by name.
struct Table(Vec<(&'static str, [f64; 2])>);

impl Embedder for Table {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let v = self.0.iter().find(|(t, _)| *t == text).expect("known text").1;
        Ok(EmbeddingVector {
            values: v.to_vec(),
            model_tag: "table".into(),
        })
    }

    fn model_tag(&self) -> &str {
        "table"
    }
}

#[test]
fn genesis_creates_k_fresh_strategies() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Genesis, [stubs(10)]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let hotel = DomainSet::single("hotel");
    let ids = ev.genesis(&mut bank, &hotel, AgentType::Dp).unwrap();
    assert_eq!(ids.len(), 10);
    for id in &ids {
        let s = bank.get_alive(id).unwrap();
        assert_eq!(s.metadata, StrategyMetadata::fresh(1));
        assert_eq!(s.domains, hotel);
    }
    let prompt = &mock.requests_for(TemplateId::Genesis)[0];
    assert_eq!(prompt.variables["agent_type"], "DP");
    assert!(matches!(
        ev.genesis(&mut bank, &hotel, AgentType::Dp),
        Err(EvolutionError::AlreadyCovered { .. })
    ));
}

#[test]
fn genesis_count_mismatch_retries_then_fails() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Genesis, [stubs(9)]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let err = ev.genesis(&mut bank, &DomainSet::single("hotel"), AgentType::Dst).unwrap_err();
    assert!(err.to_string().contains("expected 10 strategies, got 9"), "{err}");
    assert_eq!(mock.calls_for(TemplateId::Genesis), 3);
    assert!(bank.is_empty());
}

#[test]
fn composition_averages_and_bumps_generation() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Consolidation, [MERGED]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let a = add(&mut bank, AgentType::Nlg, "hotel", "hotel nlg", meta(2, 0, 4, 3));
    let b = add(&mut bank, AgentType::Nlg, "taxi", "taxi nlg", meta(4, 2, 6, 5));
    let combo: DomainSet = "hotel+taxi".parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (inputs, id) = ev.compose_multidomain(&mut bank, &combo, AgentType::Nlg, &mut rng).unwrap();
    assert_eq!(inputs, vec![a.clone(), b.clone()]);
    let s = bank.get_alive(&id).unwrap();
    assert_eq!(s.domains, combo);
    assert_eq!(
        (s.metadata.positive_feedback, s.metadata.negative_feedback, s.metadata.usage_count, s.metadata.generation_index),
        (3, 1, 5, 6)
    );
    // sources remain available for their own domains
    assert!(bank.get_alive(&a).is_ok() && bank.get_alive(&b).is_ok());
    assert!(matches!(
        ev.compose_multidomain(&mut bank, &"hotel+train".parse().unwrap(), AgentType::Nlg, &mut rng),
        Err(EvolutionError::MissingConstituent { .. })
    ));
}

#[test]
fn mutation_scores_parent_and_retires_it() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Mutation, [mutation("DP", -1)]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let id = add(&mut bank, AgentType::Dp, "hotel", "old dp", meta(1, 1, 3, 2));
    let mut traj = sample("d1", Outcome::Failure, vec![]);
    traj.strategies_used.insert(AgentType::Dp, id.clone());
    let (score, child) = ev.mutate(&mut bank, &id, &traj).unwrap();
    assert_eq!(score, -1);
    assert!(!bank.get(&id).unwrap().alive);
    assert_eq!(bank.get(&id).unwrap().metadata.negative_feedback, 2);
    let c = bank.get_alive(&child).unwrap();
    assert_eq!(c.content, "revised DP");
    assert_eq!(c.metadata.negative_feedback, 2);
    assert_eq!(c.metadata.usage_count, 3);
    assert_eq!(c.metadata.inherited_usage, 3);
    assert_eq!(c.metadata.generation_index, 3);
    assert_eq!(c.parents, vec![id]);
    let req = &mock.requests_for(TemplateId::Mutation)[0];
    assert_eq!(req.variables["dialog_result"], "Failure");
    assert!(req.variables["strategies_by_type"].contains("DP: old dp"));
}

#[test]
fn neutral_mutation_keeps_counts_and_wrong_agent_is_rejected() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Mutation, [mutation("NLG", 0)]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let nlg = add(&mut bank, AgentType::Nlg, "hotel", "old nlg", meta(2, 1, 3, 1));
    let traj = sample("d1", Outcome::Success, vec![]);
    let (_, child) = ev.mutate(&mut bank, &nlg, &traj).unwrap();
    let m = bank.get_alive(&child).unwrap().metadata;
    assert_eq!((m.positive_feedback, m.negative_feedback, m.usage_count), (2, 1, 3));

    let dst = add(&mut bank, AgentType::Dst, "hotel", "old dst", meta(0, 0, 0, 1));
    let before = bank.clone();
    assert!(ev.mutate(&mut bank, &dst, &traj).is_err());
    assert_eq!(bank.to_json(), before.to_json());
}

#[test]
fn consolidation_merges_duplicates_and_chains() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Consolidation, [MERGED]);
    let gw = gateway(&mock);
    let table = Table(vec![
        ("a", [1.0, 0.0]),
        ("b", [0.8, 0.6]),
        ("c", [0.28, 0.96]),
        ("far", [-1.0, 0.0]),
    ]);
    let params = EvolutionParams {
        delta: 0.75,
        ..Default::default()
    };
    let ev = Evolver::new(&gw, &table, params, FitnessParams::default());
    let mut bank = StrategyBank::new();
    let ids: Vec<StrategyId> = [("a", meta(2, 0, 4, 3)), ("b", meta(4, 2, 6, 5)), ("c", meta(0, 0, 2, 1))]
        .into_iter()
        .map(|(t, m)| add(&mut bank, AgentType::Dst, "hotel", t, m))
        .collect();
    let far = add(&mut bank, AgentType::Dst, "hotel", "far", meta(0, 0, 0, 1));
    let (ops, failures) = ev.consolidate_population(&mut bank, AgentType::Dst, &"hotel".parse().unwrap()).unwrap();
    assert!(failures.is_empty());
    assert_eq!(ops.len(), 1);
    assert_eq!(ops[0].inputs, ids);
    assert_eq!(bank.alive_count(), 2);
    assert!(bank.get_alive(&far).is_ok());
    let merged = bank.get_alive(&ops[0].outputs[0]).unwrap();
    // (2+4+0)/3 = 2, (0+2+0)/3 = 0.67 -> 1, (4+6+2)/3 = 4, max gen 5 -> 6
    assert_eq!(
        (merged.metadata.positive_feedback, merged.metadata.negative_feedback, merged.metadata.usage_count),
        (2, 1, 4)
    );
    assert_eq!(merged.metadata.generation_index, 6);
}

#[test]
fn consolidating_a_pair_matches_the_hand_average() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Consolidation, [MERGED]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let a = add(&mut bank, AgentType::Dp, "hotel", "same text", meta(2, 0, 4, 3));
    let b = add(&mut bank, AgentType::Dp, "hotel", "same text", meta(4, 2, 6, 5));
    let (ops, _) = ev.consolidate_population(&mut bank, AgentType::Dp, &"hotel".parse().unwrap()).unwrap();
    assert_eq!(ops[0].inputs, vec![a, b]);
    let m = bank.get_alive(&ops[0].outputs[0]).unwrap().metadata;
    assert_eq!((m.positive_feedback, m.negative_feedback, m.usage_count, m.generation_index), (3, 1, 5, 6));
    assert_eq!(bank.alive_count(), 1);
}

#[test]
fn prune_keeps_top_m_with_tie_breaks() {
    let params = FitnessParams::default();
    let mut bank = StrategyBank::new();
    // distinct fitness: net feedback i over N = 12
    let ids: Vec<StrategyId> = (0..12)
        .map(|i| add(&mut bank, AgentType::Nlg, "hotel", &format!("s{i}"), meta(i, 0, 12, 1)))
        .collect();
    let removed = prune(&mut bank, 10, &params);
    assert_eq!(removed, vec![ids[0].clone(), ids[1].clone()]);
    assert!(prune(&mut bank, 10, &params).is_empty());

    // equal counters, generations 4 and 7 at the boundary: the newer survives
    let mut bank = StrategyBank::new();
    let old = add(&mut bank, AgentType::Dp, "hotel", "old", meta(0, 0, 0, 4));
    let new = add(&mut bank, AgentType::Dp, "hotel", "new", meta(0, 0, 0, 7));
    let removed = prune(&mut bank, 1, &FitnessParams { alpha: 0.0, ..params });
    assert_eq!(removed, vec![old]);
    assert!(bank.get_alive(&new).is_ok());

    // full tie: the smaller id survives
    let mut bank = StrategyBank::new();
    let first = add(&mut bank, AgentType::Dp, "hotel", "x", meta(0, 0, 0, 1));
    let second = add(&mut bank, AgentType::Dp, "hotel", "y", meta(0, 0, 0, 1));
    assert_eq!(prune(&mut bank, 1, &params), vec![second]);
    assert!(bank.get_alive(&first).is_ok());
}

fn covered_bank() -> (StrategyBank, [StrategyId; 3]) {
    let mut bank = StrategyBank::new();
    let ids = AgentType::ALL.map(|a| add(&mut bank, a, "hotel", &format!("{a} only"), meta(0, 0, 1, 1)));
    (bank, ids)
}

#[test]
fn quiet_epoch_is_a_fixed_point() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let (mut bank, ids) = covered_bank();
    let mut traj = sample("ok", Outcome::Success, vec![]);
    for (a, id) in AgentType::ALL.iter().zip(&ids) {
        traj.strategies_used.insert(*a, id.clone());
    }
    let before = bank.to_json();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = ev.evolve_epoch(&mut bank, &[(&traj, traj.flagged_strategies())], 1, &mut rng);
    assert!(report.is_noop(), "{report:?}");
    assert_eq!(report.measured_p, 0.0);
    assert_eq!(report.measured_mu, None);
    assert_eq!(bank.to_json(), before);
    assert_eq!(mock.call_count(), 0);
}

#[test]
fn failed_dialog_yields_mutations_only() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    for a in ["DST", "DP", "NLG"] {
        mock.register_script(Some(TemplateId::Mutation), move |r| r["agent_type"] == a, [mutation(a, -1)]);
    }
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let (mut bank, ids) = covered_bank();
    let mut traj = sample(
        "bad",
        Outcome::Failure,
        vec![CritiqueEntry {
            author: AgentRole::Nlg,
            target: AgentRole::Dp,
            text: "wrong act".into(),
            rationale: String::new(),
        }],
    );
    for (a, id) in AgentType::ALL.iter().zip(&ids) {
        traj.strategies_used.insert(*a, id.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = ev.evolve_epoch(&mut bank, &[(&traj, traj.flagged_strategies())], 1, &mut rng);
    assert_eq!(report.count(Operator::Mutation), 3);
    assert_eq!(report.operations.len(), 3);
    assert_eq!(report.measured_p, 1.0);
    assert!(report.measured_mu.is_some());
    assert_eq!(bank.alive_count(), 3);
    assert!(ids.iter().all(|id| !bank.get(id).unwrap().alive));
    let dp_prompt = mock
        .requests_for(TemplateId::Mutation)
        .into_iter()
        .find(|r| r.variables["agent_type"] == "DP")
        .unwrap();
    assert!(dp_prompt.variables["evolve_data"].contains("wrong act"));
}

#[test]
fn failed_mutation_is_isolated() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let (mut bank, ids) = covered_bank();
    let mut traj = sample("bad", Outcome::Failure, vec![]);
    for (a, id) in AgentType::ALL.iter().zip(&ids) {
        traj.strategies_used.insert(*a, id.clone());
    }
    let before = bank.to_json();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = ev.evolve_epoch(&mut bank, &[(&traj, traj.flagged_strategies())], 1, &mut rng);
    assert_eq!(report.failures.len(), 3);
    assert!(report.is_noop());
    assert_eq!(bank.to_json(), before);
}

#[test]
fn epoch_repairs_missing_coverage() {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Genesis, [stubs(10)]);
    mock.script(TemplateId::Consolidation, [MERGED]);
    let gw = gateway(&mock);
    let emb = HashEmbedder::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), FitnessParams::default());
    let mut bank = StrategyBank::new();
    let mut traj = sample("multi", Outcome::Success, vec![]);
    traj.domains = "hotel+train".parse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let report = ev.evolve_epoch(&mut bank, &[(&traj, Default::default())], 1, &mut rng);
    assert_eq!(report.count(Operator::Genesis), 6);
    assert_eq!(report.count(Operator::Composition), 3);
    for a in AgentType::ALL {
        assert!(bank.is_covered(&traj.domains, a));
    }
    // stub texts repeat across populations but never within one
    assert_eq!(report.count(Operator::Consolidation), 0);
}

#[test]
fn trigger_policy_parsing() {
    assert_eq!("per_episode".parse::<TriggerPolicy>().unwrap(), TriggerPolicy::PerEpisode);
    assert_eq!("per_turn".parse::<TriggerPolicy>().unwrap(), TriggerPolicy::PerTurn);
    assert_eq!("per_n_dialogs:5".parse::<TriggerPolicy>().unwrap(), TriggerPolicy::PerNDialogs { n: 5 });
    assert!("per_n_dialogs:0".parse::<TriggerPolicy>().is_err());
    assert!("sometimes".parse::<TriggerPolicy>().is_err());
    let p = TriggerPolicy::PerNDialogs { n: 3 };
    assert_eq!(p.to_string().parse::<TriggerPolicy>().unwrap(), p);
    assert!(!p.due(2) && p.due(3));
    assert_eq!(
        serde_json::to_string(&p).unwrap(),
        r#"{"kind":"per_n_dialogs","n":3}"#
    );
}
