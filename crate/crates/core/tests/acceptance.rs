//! Acceptance suite: one PASS/FAIL line per primary criterion, all against
//! scripted or synthetic providers. Exits non-zero when any criterion fails.
//!
//! Runtime bounds are part of each criterion and are checked on the build
//! profile the suite runs under.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strategist_core::bank::NewStrategy;
use strategist_core::corpus::synth::SynthSpec;
use strategist_core::embedding::HashEmbedder;
use strategist_core::engine::load_data;
use strategist_core::evolution::{prune, Evolver};
use strategist_core::experiment::run_experiment;
use strategist_core::llm::{Gateway, MockProvider, ProviderConfig, TemplateId, Unmatched};
use strategist_core::metrics::{bank_entropy, combine, corpus_bleu_tokens, unigram_entropy};
use strategist_core::mock::SyntheticWorld;
use strategist_core::selection::{select, selection_distribution};
use strategist_core::{
    compute_fitness, AgentType, DomainSet, Engine, EngineConfig, EvolutionParams, FitnessParams, MemoryStore, Outcome,
    SelectionKind, SelectionPolicy, Source, StrategyBank, StrategyId, StrategyMetadata, Trajectory, UserGoal,
};

type Check = Result<String, String>;

/// Name, check, runtime budget.
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

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

fn failed_trajectory(domains: &str, used: BTreeMap<AgentType, StrategyId>) -> Trajectory {
    Trajectory {
        record_id: 0,
        dialog_id: "fixture".into(),
        domains: domains.parse().unwrap(),
        goal: UserGoal::default(),
        strategies_used: used,
        turns: vec![],
        outcome: Outcome::Failure,
        source: Source::CorpusReplay,
    }
}

fn c1_fitness() -> Check {
    let p = FitnessParams::default();
    let cases = [
        (meta(0, 0, 0, 1), 0.0, 0.0),
        (meta(3, 1, 4, 1), 0.5, 2.0 / 4.01 + 0.15),
        (meta(0, 5, 5, 1), 0.0, -5.0 / 5.01),
    ];
    for (m, g, want) in cases {
        let got = compute_fitness(&m, g, &p);
        ensure((got - want).abs() < 1e-9, || format!("{m:?} at gen_norm {g}: {got} != {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let m = meta(rng.random_range(0..50), rng.random_range(0..50), rng.random_range(0..200), 1);
        let g = rng.random_range(0.0..=1.0);
        let base = compute_fitness(&m, g, &p);
        let up = compute_fitness(&StrategyMetadata { positive_feedback: m.positive_feedback + 1, ..m }, g, &p);
        let down = compute_fitness(&StrategyMetadata { negative_feedback: m.negative_feedback + 1, ..m }, g, &p);
        let older = compute_fitness(&m, (g + 0.1).min(1.0), &p);
        ensure(up > base && down < base && older >= base, || format!("monotonicity broken at {m:?}, g={g}"))?;
    }
    Ok("3 hand values, 10000 monotonicity samples".into())
}

fn c2_boltzmann() -> Check {
    let policy = SelectionPolicy::default();
    ensure(policy.kind == SelectionKind::Boltzmann && policy.temperature == 1.0, || "default is not Boltzmann at 1.0".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let candidates = [0usize, 1];
    let draws = 100_000;
    let firsts = (0..draws)
        .filter(|_| *select(&candidates, &[1.0, 0.0], &policy, &mut rng).unwrap() == 0)
        .count();
    let freq = firsts as f64 / draws as f64;
    let want = std::f64::consts::E / (1.0 + std::f64::consts::E);
    ensure((freq - want).abs() <= 0.01, || format!("empirical {freq} vs {want}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..2_000 {
        let n = rng.random_range(1..12);
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let shift = rng.random_range(-50.0..50.0);
        let tau = rng.random_range(0.05..5.0);
        let pol = SelectionPolicy { temperature: tau, ..policy };
        let a = selection_distribution(&phi, &pol).unwrap();
        let shifted: Vec<f64> = phi.iter().map(|f| f + shift).collect();
        let b = selection_distribution(&shifted, &pol).unwrap();
        ensure(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9), || format!("shift {shift} changed {phi:?}"))?;
        let best = (0..n).max_by(|&i, &j| phi[i].total_cmp(&phi[j])).unwrap();
        if phi.iter().filter(|&&f| f == phi[best]).count() == 1 && n > 1 {
            let sharp = selection_distribution(&phi, &SelectionPolicy { temperature: tau * 0.5, ..policy }).unwrap();
            // a distribution already saturated at 1.0 cannot sharpen further in f64
            let sharpened = sharp[best] > a[best] || (a[best] == 1.0 && sharp[best] == 1.0);
            ensure(sharpened, || format!("halving tau did not sharpen {phi:?} at tau {tau}"))?;
        }
    }
    Ok(format!("first-candidate frequency {freq:.5} (target {want:.6})"))
}

/// Published (inform, success, bleu, combine) quadruples: the evolved system on
/// four backbones, then the backbone scaling sweep including the prior best system.
const REPORTED: &[(f64, f64, f64, f64)] = &[
    // Llama3-8B, Qwen2.5-7B, Qwen3-8B, GPT-5.1 on MultiWOZ 2.0 / 2.1 / 2.2
    (96.92, 89.14, 21.83, 114.86), (98.73, 91.42, 19.96, 115.04), (92.58, 83.97, 17.98, 106.26),
    (97.63, 90.28, 21.55, 115.51), (98.92, 91.85, 20.18, 115.57), (92.14, 84.33, 18.34, 106.58),
    (98.34, 92.86, 21.74, 117.34), (99.62, 94.18, 20.33, 117.23), (94.73, 87.25, 18.41, 109.40),
    (99.10, 96.20, 22.94, 120.59), (99.40, 96.50, 22.19, 120.14), (96.48, 90.12, 21.98, 115.28),
    // scaling sweep: prior best system on Llama3-8B, then ten backbones
    (94.84, 87.21, 21.97, 113.00), (96.89, 89.38, 19.91, 113.04), (90.71, 81.26, 18.02, 104.00),
    (96.92, 89.14, 21.83, 114.86), (98.73, 91.42, 19.96, 115.04), (92.58, 83.97, 17.98, 106.26),
    (96.57, 90.19, 21.69, 115.07), (97.97, 91.51, 20.32, 115.06), (92.59, 84.09, 18.27, 106.61),
    (90.42, 82.17, 18.96, 105.26), (92.15, 83.84, 18.42, 106.42), (86.31, 77.95, 17.21, 99.34),
    (97.63, 90.28, 21.55, 115.51), (98.92, 91.85, 20.18, 115.57), (92.14, 84.33, 18.34, 106.58),
    (97.85, 91.07, 21.89, 116.35), (99.18, 92.64, 20.67, 116.58), (93.02, 85.41, 18.76, 107.98),
    (97.21, 90.14, 21.23, 114.91), (98.76, 91.62, 20.04, 115.23), (91.87, 84.08, 18.12, 106.10),
    (98.34, 92.86, 21.74, 117.34), (99.62, 94.18, 20.33, 117.23), (94.73, 87.25, 18.41, 109.40),
    (98.67, 93.45, 22.08, 118.14), (99.84, 94.92, 20.88, 118.26), (95.21, 87.98, 18.92, 110.52),
    (99.05, 95.87, 22.93, 120.39), (99.76, 96.38, 21.46, 119.53), (96.14, 89.63, 21.87, 114.76),
    (99.10, 96.20, 22.94, 120.59), (99.40, 96.50, 22.19, 120.14), (96.48, 90.12, 21.98, 115.28),
];

fn c3_combine() -> Check {
    let mut worst: f64 = 0.0;
    for &(i, s, b, c) in REPORTED {
        let d = (combine(i, s, b) - c).abs();
        worst = worst.max(d);
        ensure(d <= 0.01 + 1e-9, || format!("({i}, {s}, {b}) -> {} vs reported {c}", combine(i, s, b)))?;
    }
    ensure(combine(0.0, 0.0, 0.0) == 0.0, || "combine(0,0,0) != 0".into())?;
    Ok(format!("{} triples, worst deviation {worst:.4}", REPORTED.len()))
}

fn bank_of(texts: &[&str]) -> StrategyBank {
    let mut bank = StrategyBank::new();
    for t in texts {
        add(&mut bank, AgentType::Dp, "hotel", t, meta(0, 0, 0, 1));
    }
    bank
}

fn c4_entropy() -> Check {
    let fixtures: [(&[&str], f64); 5] = [
        (&["go go", "go"], 0.0),
        (&["a b"], 1.0),
        (&["a", "b c d"], 2.0),
        (&["a a b c"], 1.5),
        (&["A a", "B c"], 1.5),
    ];
    for (texts, want) in fixtures {
        let got = bank_entropy(&bank_of(texts)).map_err(|e| e.to_string())?;
        ensure((got - want).abs() < 1e-9, || format!("{texts:?}: {got} bits, expected {want}"))?;
    }
    ensure(bank_entropy(&StrategyBank::new()).is_err(), || "empty bank accepted".into())?;
    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let texts: Vec<String> = (0..rng.random_range(1..6))
            .map(|_| {
                (0..rng.random_range(1..9))
                    .map(|_| words[rng.random_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let h = bank_entropy(&bank_of(&refs)).map_err(|e| e.to_string())?;
        let distinct: BTreeSet<&str> = refs.iter().flat_map(|t| t.split_whitespace()).collect();
        let cap = (distinct.len() as f64).log2();
        ensure(h >= -1e-12 && h <= cap + 1e-9, || format!("{h} outside [0, {cap}] for {refs:?}"))?;
    }
    ensure(unigram_entropy(Vec::<String>::new()) == 0.0, || "empty token stream".into())?;
    Ok("5 fixtures exact, 500 random banks within [0, log2 V]".into())
}

fn scripted_evolver_fixtures() -> Result<(), String> {
    let mock = Arc::new(MockProvider::new(Unmatched::Error));
    mock.script(TemplateId::Consolidation, [r#"{"content": "merged", "reason": "same advice"}"#]);
    mock.script(
        TemplateId::Mutation,
        [r#"{"strategy": {"agent_type": "DP", "content": "revised", "reason": "critique", "score": -1}}"#],
    );
    let gw = Gateway::new(mock, ProviderConfig::offline());
    let emb = HashEmbedder::default();
    let fit = FitnessParams::default();
    let ev = Evolver::new(&gw, &emb, EvolutionParams::default(), fit);

    let mut bank = StrategyBank::new();
    let a = add(&mut bank, AgentType::Dp, "hotel", "dup", meta(2, 0, 4, 3));
    let b = add(&mut bank, AgentType::Dp, "hotel", "dup", meta(4, 2, 6, 5));
    let merged = ev.consolidate(&mut bank, &[a.clone(), b.clone()]).map_err(|e| e.to_string())?;
    let m = bank.get_alive(&merged).map_err(|e| e.to_string())?.metadata;
    ensure(
        (m.positive_feedback, m.negative_feedback, m.usage_count, m.generation_index) == (3, 1, 5, 6),
        || format!("consolidation gave {m:?}"),
    )?;
    ensure(bank.get_alive(&a).is_err() && bank.get_alive(&b).is_err() && bank.alive_count() == 1, || {
        "consolidation sources still alive".into()
    })?;

    let parent = add(&mut bank, AgentType::Dp, "hotel", "old", meta(1, 1, 3, 2));
    let traj = failed_trajectory("hotel", BTreeMap::from([(AgentType::Dp, parent.clone())]));
    let (score, child) = ev.mutate(&mut bank, &parent, &traj).map_err(|e| e.to_string())?;
    let c = bank.get_alive(&child).map_err(|e| e.to_string())?;
    ensure(score == -1 && c.metadata.negative_feedback == 2 && c.metadata.generation_index == 3, || {
        format!("mutation child {:?}", c.metadata)
    })?;
    ensure(c.parents == vec![parent.clone()] && bank.get_alive(&parent).is_err(), || "parent still alive".into())?;

    let mut bank = StrategyBank::new();
    let ids: Vec<StrategyId> = (0..12)
        .map(|i| add(&mut bank, AgentType::Nlg, "hotel", &format!("s{i}"), meta(i, 0, 12, 1)))
        .collect();
    let removed = prune(&mut bank, 10, &fit);
    ensure(removed == ids[..2], || format!("pruned {removed:?}"))?;
    ensure(prune(&mut bank, 10, &fit).is_empty(), || "second prune removed more".into())?;

    let mut bank = StrategyBank::new();
    let old = add(&mut bank, AgentType::Dp, "hotel", "old", meta(0, 0, 0, 4));
    let new = add(&mut bank, AgentType::Dp, "hotel", "new", meta(0, 0, 0, 7));
    let removed = prune(&mut bank, 1, &FitnessParams { alpha: 0.0, ..fit });
    ensure(removed == vec![old] && bank.get_alive(&new).is_ok(), || "tie did not favour generation 7".into())?;
    Ok(())
}

fn c5_operators() -> Check {
    scripted_evolver_fixtures()?;
    let (_, db) = SynthSpec::new(5, 1, &["hotel", "train"]).generate();
    let world = Arc::new(SyntheticWorld::new(db, 5));
    let gw = Gateway::new(world, ProviderConfig::offline());
    let emb = HashEmbedder::default();
    let params = EvolutionParams::default();
    let m = params.max_population;
    let ev = Evolver::new(&gw, &emb, params, FitnessParams::default());
    let combos = ["hotel", "train", "hotel+train"];
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mutations = 0;
    for epoch in 0..1_000u64 {
        let mut bank = StrategyBank::new();
        for agent in AgentType::ALL {
            for combo in combos {
                for i in 0..rng.random_range(1..=25) {
                    let q = rng.random_range(0.1..0.9);
                    let md = meta(rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..12), rng.random_range(1..6));
                    add(&mut bank, agent, combo, &format!("[q={q:.2}] {agent} {combo} tactic {i} {}", rng.random::<u32>()), md);
                }
            }
        }
        let combo = combos[rng.random_range(0..combos.len())];
        let domains: DomainSet = combo.parse().unwrap();
        let used: BTreeMap<AgentType, StrategyId> = AgentType::ALL
            .iter()
            .map(|&a| {
                let pool = bank.candidates_for(&domains, a);
                (a, pool[rng.random_range(0..pool.len())].id.clone())
            })
            .collect();
        let flags: BTreeSet<StrategyId> = used.values().filter(|_| rng.random_bool(0.7)).cloned().collect();
        let traj = failed_trajectory(combo, used);
        let report = ev.evolve_epoch(&mut bank, &[(&traj, flags)], epoch, &mut rng);
        mutations += report.count(strategist_core::evolution::Operator::Mutation);
        for (key, n) in bank.population_sizes() {
            ensure(n <= m, || format!("epoch {epoch}: population {key:?} holds {n} > {m}"))?;
        }
    }
    ensure(mutations > 0, || "no mutation ran across 1000 epochs".into())?;
    Ok(format!("fixtures exact; 1000 randomized epochs bounded by M={m} ({mutations} mutations)"))
}

fn synthetic(seed: u64, n: usize, domains: &[&str]) -> (EngineConfig, strategist_core::Corpus, Engine) {
    let cfg = EngineConfig::synthetic(seed, SynthSpec::new(seed, n, domains));
    closed_loop(cfg)
}

fn closed_loop(cfg: EngineConfig) -> (EngineConfig, strategist_core::Corpus, Engine) {
    let (corpus, db) = load_data(&cfg).unwrap();
    let engine = Engine::new(cfg.clone(), db).unwrap();
    (cfg, corpus, engine)
}

/// Replays every dialog and checks the closed-loop invariants.
fn smoke(cfg: EngineConfig) -> Result<Engine, String> {
    let (cfg, corpus, engine) = closed_loop(cfg);
    for d in &corpus.dialogs {
        engine.run_episode(d, Source::CorpusReplay).map_err(|e| format!("{}: {e}", d.dialog_id))?;
    }
    let n = corpus.dialogs.len();
    let stored = engine.with_memory(|m| m.len());
    ensure(stored == n, || format!("SSM holds {stored} of {n} trajectories"))?;
    if cfg.modes.zero_shot {
        ensure(engine.with_bank(|b| b.is_empty()), || "zero-shot wrote the bank".into())?;
        return Ok(engine);
    }
    let mut episodes: HashMap<StrategyId, u64> = HashMap::new();
    let mut combos = BTreeSet::new();
    engine.with_memory(|m| {
        for t in m.iter() {
            combos.insert(t.domains.clone());
            for id in t.strategies_used.values() {
                *episodes.entry(id.clone()).or_default() += 1;
            }
        }
    });
    engine.with_bank(|bank| {
        for c in &combos {
            for a in AgentType::ALL {
                ensure(bank.is_covered(c, a), || format!("{a} uncovered for {c}"))?;
            }
        }
        for s in bank.iter() {
            let own = s.metadata.usage_count - s.metadata.inherited_usage;
            let want = episodes.get(&s.id).copied().unwrap_or(0);
            ensure(own == want, || format!("{} used in {want} episodes but N counts {own}", s.id))?;
        }
        Ok::<(), String>(())
    })?;
    Ok(engine)
}

fn fingerprint(engine: &Engine) -> (String, String, String) {
    (
        engine.with_bank(|b| b.to_json()),
        engine.with_memory(|m| m.content_hash()),
        serde_json::to_string(&engine.epochs()).unwrap(),
    )
}

fn c6_closed_loop() -> Check {
    let cfg = || EngineConfig::synthetic(6, SynthSpec::new(6, 20, &["hotel", "restaurant", "train"]));
    let a = smoke(cfg())?;
    let b = smoke(cfg())?;
    ensure(fingerprint(&a) == fingerprint(&b), || "two runs under one seed differ".into())?;
    let combos: BTreeSet<DomainSet> = a.with_memory(|m| m.iter().map(|t| t.domains.clone()).collect());
    Ok(format!(
        "20 trajectories, {} domain sets covered, {} epochs, byte-identical rerun",
        combos.len(),
        a.epoch_count()
    ))
}

fn c7_convergence() -> Check {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let (cfg, corpus, engine) = synthetic(seed, 200, &["hotel"]);
        ensure(cfg.mock_improve_prob == 0.8, || "mutation improvement odds are not 0.8".into())?;
        for d in &corpus.dialogs {
            engine.run_episode(d, Source::CorpusReplay).map_err(|e| e.to_string())?;
        }
        let epochs = engine.epochs();
        ensure(epochs.len() >= 200, || format!("seed {seed}: only {} epochs", epochs.len()))?;
        let at = |i: usize| epochs[i - 1].mean_alive_fitness.unwrap_or(f64::NAN);
        let (early, late) = (at(20), at(200));
        if late > early {
            wins += 1;
        }
        lines.push(format!("s{seed} {early:+.3}->{late:+.3}"));
    }
    ensure(wins >= 4, || format!("only {wins}/5 seeds improved: {}", lines.join(", ")))?;
    Ok(format!("{wins}/5 seeds improved ({})", lines.join(", ")))
}

/// Straightforward corpus BLEU-4 written independently of the library:
/// clipped n-gram counts, unsmoothed unigram precision, add-one smoothing
/// for orders 2 to 4, brevity penalty on total lengths.
fn oracle_bleu(cands: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let grams = |s: &[String], n: usize| -> HashMap<Vec<String>, usize> {
        let mut m = HashMap::new();
        if s.len() >= n {
            for i in 0..=s.len() - n {
                *m.entry(s[i..i + n].to_vec()).or_insert(0) += 1;
            }
        }
        m
    };
    let mut num = [0.0f64; 4];
    let mut den = [0.0f64; 4];
    let (mut c_len, mut r_len) = (0.0, 0.0);
    for (c, r) in cands.iter().zip(refs) {
        c_len += c.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            let rg = grams(r, n);
            let cg = grams(c, n);
            num[n - 1] += cg.iter().map(|(g, k)| (*k).min(*rg.get(g).unwrap_or(&0)) as f64).sum::<f64>();
            den[n - 1] += cg.values().sum::<usize>() as f64;
        }
    }
    if num[0] == 0.0 {
        return 0.0;
    }
    let p = [num[0] / den[0], (num[1] + 1.0) / (den[1] + 1.0), (num[2] + 1.0) / (den[2] + 1.0), (num[3] + 1.0) / (den[3] + 1.0)];
    let geo = p.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    100.0 * bp * geo.exp()
}

fn c8_bleu() -> Check {
    let vocab: Vec<String> = ["the", "a", "hotel", "is", "cheap", "north", "[value_name]", "train", "at", "you"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..15);
        let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..rng.random_range(1..14)).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect()
        };
        let refs: Vec<Vec<String>> = (0..n).map(|_| sentence(&mut rng)).collect();
        let cands: Vec<Vec<String>> = refs
            .iter()
            .map(|r| {
                if rng.random_bool(0.5) {
                    r.iter()
                        .map(|t| if rng.random_bool(0.2) { vocab[rng.random_range(0..vocab.len())].clone() } else { t.clone() })
                        .collect()
                } else {
                    sentence(&mut rng)
                }
            })
            .collect();
        let ours = corpus_bleu_tokens(&cands, &refs).map_err(|e| e.to_string())?;
        let theirs = oracle_bleu(&cands, &refs);
        worst = worst.max((ours - theirs).abs());
        ensure((ours - theirs).abs() < 1e-6, || format!("{ours} vs oracle {theirs}"))?;
        let identity = corpus_bleu_tokens(&refs, &refs).map_err(|e| e.to_string())?;
        ensure(identity == 100.0, || format!("identity corpus scored {identity}"))?;
    }
    Ok(format!("50 random corpora, worst deviation {worst:.2e}; identity = 100"))
}

fn c9_ablations() -> Check {
    let base = r#""synth": {"seed": 9, "n_dialogs": 20, "domains": ["hotel", "restaurant"]}, "seed": 9"#;
    let variants = [
        ("boltzmann", r#""selection": {"kind": "boltzmann"}"#),
        ("roulette", r#""selection": {"kind": "roulette_wheel"}"#),
        ("uniform", r#""selection": {"kind": "uniform_random"}"#),
        ("epsilon-greedy", r#""selection": {"kind": "epsilon_greedy"}"#),
        ("w/o reasoning", r#""modes": {"with_reasoning": false}"#),
        ("w/o peer critique", r#""modes": {"with_peer_critique": false}"#),
        ("E2E agent", r#""modes": {"e2e_agent": true}"#),
        ("w/o consolidate", r#""evolution": {"consolidate": false}"#),
        ("w/o prune", r#""evolution": {"prune": false}"#),
        ("zero-shot", r#""modes": {"zero_shot": true}"#),
    ];
    for (name, extra) in variants {
        let cfg = EngineConfig::from_json(&format!("{{{base}, {extra}}}")).map_err(|e| format!("{name}: {e}"))?;
        cfg.validate().map_err(|e| format!("{name}: {e}"))?;
        if name == "epsilon-greedy" {
            ensure(cfg.selection.epsilon == 0.1, || "epsilon default is not 0.1".into())?;
        }
        smoke(cfg).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("{} variants completed the closed loop", variants.len()))
}

fn c10_persistence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = SynthSpec::new(10, 15, &["hotel", "train"]);
    spec.test_fraction = 0.2;
    let cfg = EngineConfig::synthetic(10, spec);
    let summary = run_experiment(&cfg, dir.path()).map_err(|e| e.to_string())?;

    let bank = StrategyBank::load(dir.path().join("bank.json")).map_err(|e| e.to_string())?;
    ensure(bank.alive_count() > 0, || "empty final bank".into())?;
    let again = StrategyBank::from_json(&bank.to_json()).map_err(|e| e.to_string())?;
    ensure(again.to_json() == bank.to_json(), || "bank JSON round trip differs".into())?;
    let on_disk = std::fs::read_to_string(dir.path().join("bank.json")).map_err(|e| e.to_string())?;
    ensure(on_disk.trim_end() == bank.to_json().trim_end(), || "saved bank differs from its reload".into())?;

    let ssm = MemoryStore::open(dir.path().join("ssm.jsonl"), cfg.max_turns).map_err(|e| e.to_string())?;
    ensure(ssm.len() == summary.train_dialogs, || format!("SSM holds {} trajectories", ssm.len()))?;
    ensure(ssm.verify().map_err(|e| e.to_string())?, || "SSM index does not verify".into())?;
    let dir2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut copy = MemoryStore::open(dir2.path().join("ssm.jsonl"), cfg.max_turns).map_err(|e| e.to_string())?;
    for t in ssm.iter() {
        copy.append(t.clone()).map_err(|e| e.to_string())?;
    }
    let reread = MemoryStore::open(dir2.path().join("ssm.jsonl"), cfg.max_turns).map_err(|e| e.to_string())?;
    ensure(reread.content_hash() == ssm.content_hash(), || "SSM round trip differs".into())?;
    ensure(reread.iter().eq(ssm.iter()), || "SSM trajectories differ after reload".into())?;

    let embedded = EngineConfig::load(dir.path().join("config.json")).map_err(|e| e.to_string())?;
    ensure(embedded.synth == cfg.synth && embedded.seed == cfg.seed, || "run config does not describe the run".into())?;
    ensure(embedded.paths.bank.as_deref() == Some(&*dir.path().join("bank.json")), || "run config lacks state paths".into())?;
    let redo = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_experiment(&embedded, redo.path()).map_err(|e| e.to_string())?;
    let csv = |p: &std::path::Path| std::fs::read(p.join("metrics.csv")).unwrap_or_default();
    ensure(csv(dir.path()) == csv(redo.path()), || "embedded config does not reproduce the metrics".into())?;
    Ok(format!("bank {} strategies, SSM {} trajectories, {} phases", bank.len(), ssm.len(), summary.rows.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("fitness arithmetic", c1_fitness, Duration::from_secs(1)),
        ("Boltzmann correctness", c2_boltzmann, Duration::from_secs(5)),
        ("Combine reproduction", c3_combine, Duration::from_secs(1)),
        ("entropy", c4_entropy, Duration::from_secs(1)),
        ("evolution-operator algebra", c5_operators, Duration::from_secs(30)),
        ("closed-loop smoke", c6_closed_loop, Duration::from_secs(120)),
        ("convergence property", c7_convergence, Duration::from_secs(180)),
        ("BLEU oracle equivalence", c8_bleu, Duration::from_secs(10)),
        ("ablation harness", c9_ablations, Duration::from_secs(300)),
        ("persistence", c10_persistence, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = result.and_then(|detail| {
            if took <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {took:.2?}, budget {budget:?}"))
            }
        });
        match result {
            Ok(detail) => println!("criterion {:>2} {name:<28} PASS  {took:>9.2?}  {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name:<28} FAIL  {took:>9.2?}  {why}", i + 1);
            }
        }
    }
    println!("{} of 10 primary criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
