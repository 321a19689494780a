//! A rule-based stand-in for the language model, for offline runs and tests.
//!
//! [`SyntheticWorld`] answers every prompt template for dialogs of the
//! synthetic corpus. Each strategy carries a quality tag `[q=0.xx]`; an agent
//! working under a strategy of quality `q` makes a mistake with probability
//! `(1 - q) / 2`. Critics re-derive the correct output from their own inputs
//! and object when it differs, so mistakes surface as peer critiques. Mutation
//! raises quality with probability [`SyntheticWorld::improve_prob`] and lowers
//! it otherwise; consolidation averages it; genesis draws it from
//! `[0.3, 0.6]`. All randomness is a hash of the request, so identical runs
//! give identical replies.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{DomainDatabase, Entity};
use crate::llm::{ChatProvider, ChatRequest, ChatResponse, ProviderError, TemplateId};
use crate::pipeline::database::query_database;
use crate::pipeline::BeliefState;

/// Quality assumed for text without a tag (the hand-written strategies).
pub const UNTAGGED_QUALITY: f64 = 0.6;
pub const GENESIS_QUALITY: (f64, f64) = (0.3, 0.6);
const QUALITY_STEP_UP: f64 = 0.1;
const QUALITY_STEP_DOWN: f64 = 0.05;
const QUALITY_CAP: f64 = 0.98;
const QUALITY_FLOOR: f64 = 0.05;

const PHRASES: &[&str] = &[
    "confirm every constraint before moving on",
    "keep the reply short and concrete",
    "always name the entity that was found",
    "ask for missing constraints one at a time",
    "prefer the first matching database entry",
    "repeat requested details verbatim",
    "carry earlier constraints across turns",
    "mention how many options exist when there are several",
    "never invent values that the database lacks",
    "close the dialog politely when the user is done",
    "track domain switches explicitly",
    "answer every requested slot in one turn",
];

/// Quality tag embedded in strategy text.
pub fn quality_tag(q: f64) -> String {
    format!("[q={q:.2}]")
}

/// First quality tag in `text`.
pub fn parse_quality(text: &str) -> Option<f64> {
    let at = text.find("[q=")?;
    let rest = &text[at + 3..];
    rest[..rest.find(']')?].parse().ok()
}

/// Mean of every quality tag in `text`.
fn mean_quality(text: &str) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut rest = text;
    while let Some(at) = rest.find("[q=") {
        rest = &rest[at..];
        if let Some(q) = parse_quality(rest) {
            sum += q;
            n += 1;
        }
        rest = &rest[3..];
    }
    (n > 0).then(|| sum / n as f64)
}

/// What a user utterance of the synthetic corpus says.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Utterance {
    pub domain: Option<String>,
    pub constraints: BTreeMap<String, String>,
    pub requests: Vec<String>,
    pub closing: bool,
}

/// Reads the fixed phrasings of the synthetic corpus.
pub fn parse_utterance(text: &str) -> Utterance {
    let t = text.to_lowercase();
    let words: Vec<&str> = t.split_whitespace().collect();
    let mut u = Utterance::default();
    let mut i = 0;
    while i < words.len() {
        match words[i] {
            "looking" if words.get(i + 1) == Some(&"for") && words.get(i + 2) == Some(&"a") => {
                u.domain = words.get(i + 3).map(|s| s.to_string());
                i += 4;
            }
            "the" if words.get(i + 2) == Some(&"should") && words.get(i + 3) == Some(&"be") => {
                if let Some(v) = words.get(i + 4) {
                    u.constraints.insert(words[i + 1].to_string(), v.to_string());
                }
                i += 5;
            }
            "give" if words.get(i + 1) == Some(&"me") => {
                let mut j = i + 2;
                while j + 1 < words.len() && words[j] == "the" {
                    if words.get(j + 2) == Some(&"of") {
                        u.requests.push(words[j + 1].to_string());
                        u.domain = words.get(j + 4).map(|s| s.to_string());
                        j += 5;
                        break;
                    }
                    u.requests.push(words[j + 1].to_string());
                    j += 2;
                    if words.get(j) == Some(&"and") {
                        j += 1;
                    }
                }
                i = j;
            }
            "that" if words.get(i + 1) == Some(&"is") && words.get(i + 2) == Some(&"all") => {
                u.closing = true;
                i += 3;
            }
            _ => i += 1,
        }
    }
    u
}

/// Rule-based provider for every template. See the module docs.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    db: DomainDatabase,
    seed: u64,
    /// Chance that a mutation raises quality.
    pub improve_prob: f64,
}

type Reply = Result<Value, ProviderError>;

fn var<'r>(req: &'r ChatRequest, name: &str) -> &'r str {
    req.variables.get(name).map(String::as_str).unwrap_or("")
}

fn belief_from(text: &str) -> BeliefState {
    serde_json::from_str(text).unwrap_or_default()
}

impl SyntheticWorld {
    pub fn new(db: DomainDatabase, seed: u64) -> Self {
        SyntheticWorld {
            db,
            seed,
            improve_prob: 0.8,
        }
    }

    /// Uniform draw in `[0, 1)` fixed by the request and `salt`.
    fn draw(&self, req: &ChatRequest, salt: &str) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(salt.as_bytes());
        h.update(req.template.map(|t| t.as_str()).unwrap_or("-").as_bytes());
        for (k, v) in &req.variables {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([1]);
        }
        let bytes: [u8; 32] = h.finalize().into();
        let x = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn errs(&self, req: &ChatRequest, strategy_text: &str, salt: &str) -> bool {
        let q = parse_quality(strategy_text).unwrap_or(UNTAGGED_QUALITY);
        self.draw(req, salt) < (1.0 - q) / 2.0
    }

    fn key_of(&self, domain: &str) -> String {
        self.db.schema.domain(domain).map(|d| d.key.clone()).unwrap_or_else(|| "name".into())
    }

    /// Domain a turn is about: the one named, else the most recently tracked.
    fn turn_domain(&self, u: &Utterance, domains: &str, prev: &BeliefState) -> Option<String> {
        let allowed: Vec<&str> = domains.split(", ").filter(|d| !d.is_empty()).collect();
        if let Some(d) = &u.domain {
            if allowed.contains(&d.as_str()) {
                return Some(d.clone());
            }
        }
        prev.domains().last().map(str::to_string).or_else(|| allowed.first().map(|d| d.to_string()))
    }

    fn correct_belief(&self, prev: &BeliefState, u: &Utterance, domain: Option<&str>) -> BeliefState {
        let mut b = prev.clone();
        if let Some(d) = domain {
            for (s, v) in &u.constraints {
                b.set(d, s, v);
            }
        }
        b
    }

    fn first_match(&self, domain: &str, belief: &BeliefState) -> Option<&Entity> {
        let constraints = belief.domain(domain).cloned().unwrap_or_default();
        query_database(&self.db, domain, &constraints).ok()?.into_iter().next()
    }

    fn first_mismatch(&self, domain: &str, belief: &BeliefState) -> Option<&Entity> {
        let constraints = belief.domain(domain).cloned().unwrap_or_default();
        let good = query_database(&self.db, domain, &constraints).ok()?;
        self.db.domain(domain)?.iter().find(|e| !good.iter().any(|g| std::ptr::eq(*g, *e)))
    }

    /// The policy's action for a turn, and the query it issues.
    fn policy(&self, u: &Utterance, domain: Option<&str>, belief: &BeliefState, wrong: bool) -> (String, Option<Value>) {
        let Some(d) = domain else {
            return ("inform(none=none)".into(), None);
        };
        if u.closing {
            return ("inform(none=none)".into(), None);
        }
        let key = self.key_of(d);
        let query = json!({"domain": d, "state": {d: belief.domain(d).cloned().unwrap_or_default()}});
        if !u.requests.is_empty() {
            let Some(e) = self.first_match(d, belief) else {
                return ("nooffer()".into(), Some(query));
            };
            let mut args = vec![format!("{key}={}", e[&key])];
            let keep = if wrong { u.requests.len().saturating_sub(1) } else { u.requests.len() };
            for s in u.requests.iter().take(keep) {
                if let Some(v) = e.get(s) {
                    args.push(format!("{s}={v}"));
                }
            }
            return (format!("inform({})", args.join(", ")), Some(query));
        }
        if !u.constraints.is_empty() {
            let pick = if wrong { self.first_mismatch(d, belief) } else { self.first_match(d, belief) };
            return match pick {
                Some(e) => (format!("recommend({key}={})", e[&key]), Some(query)),
                None => ("nooffer()".into(), Some(query)),
            };
        }
        ("request(area)".into(), None)
    }

    /// Surface form of an action, in the phrasing of the corpus references.
    fn realize(action: &str, omit: bool) -> String {
        let Ok(parsed) = crate::pipeline::action::SystemAction::parse(action) else {
            return "sorry , could you repeat that ?".into();
        };
        let mut parts = Vec::new();
        for act in parsed.acts() {
            use crate::pipeline::action::{ActArg, ActType};
            let pairs: Vec<(&str, &str)> = act
                .args
                .iter()
                .filter_map(|a| match a {
                    ActArg::Pair { slot, value } => Some((slot.as_str(), value.as_str())),
                    ActArg::Bare(_) => None,
                })
                .collect();
            match act.act {
                ActType::Recommend | ActType::Select => {
                    let name = pairs.first().map(|p| p.1).unwrap_or("something");
                    if omit {
                        parts.push("i have found a match . shall i tell you more ?".to_string());
                    } else {
                        parts.push(format!("i would recommend {name} . shall i tell you more ?"));
                    }
                }
                ActType::Inform if pairs.iter().any(|p| p.0 == "none") => {
                    parts.push("you are welcome . goodbye .".to_string());
                }
                ActType::Inform => {
                    let details: Vec<String> = pairs
                        .iter()
                        .skip(1)
                        .take(if omit { pairs.len().saturating_sub(2) } else { usize::MAX })
                        .map(|(s, v)| format!("the {s} is {v}"))
                        .collect();
                    if details.is_empty() {
                        parts.push("here is what i found .".to_string());
                    } else {
                        parts.push(format!("{} .", details.join(" and ")));
                    }
                }
                ActType::NoOffer => parts.push("sorry , nothing matches your request .".to_string()),
                ActType::Request => parts.push("which area would you like ?".to_string()),
                _ => parts.push("okay .".to_string()),
            }
        }
        parts.join(" ")
    }

    fn dst(&self, req: &ChatRequest) -> Reply {
        let prev_text = var(req, "previous_belief_state");
        let prev = belief_from(prev_text.trim_start_matches("Previous Belief State:").trim());
        let u = parse_utterance(var(req, "user_utterance"));
        let domain = self.turn_domain(&u, var(req, "domains"), &prev);
        let mut belief = self.correct_belief(&prev, &u, domain.as_deref());
        if self.errs(req, var(req, "formatted_esb"), "dst") {
            if let (Some(d), Some(slot)) = (&domain, u.constraints.keys().last()) {
                if let Some(slots) = belief.0.get_mut(d) {
                    slots.remove(slot);
                }
                belief.0.retain(|_, s| !s.is_empty());
            }
        }
        Ok(json!({"critique": "", "belief_state": belief, "reason": "tracked the stated constraints"}))
    }

    fn dp(&self, req: &ChatRequest) -> Reply {
        let prev = belief_from(var(req, "pre_belief_state"));
        let belief = belief_from(var(req, "belief_state"));
        let u = parse_utterance(var(req, "user_utterance"));
        let domain = self.turn_domain(&u, var(req, "domains"), &prev);
        let expected = self.correct_belief(&prev, &u, domain.as_deref());
        let critique = if expected != belief {
            format!("The belief state should be {} given the user turn.", expected.to_json())
        } else {
            String::new()
        };
        let wrong = self.errs(req, var(req, "formatted_esb"), "dp");
        let (action, query) = self.policy(&u, domain.as_deref(), &belief, wrong);
        Ok(json!({
            "critique": critique,
            "system_action": action,
            "reason": "derived from the belief state",
            "query_db": query.is_some(),
            "query": query,
        }))
    }

    /// Objections to an action given what the database returned.
    fn check_action(&self, req: &ChatRequest) -> String {
        let u = parse_utterance(var(req, "user_utterance"));
        let action = var(req, "system_action");
        let results = var(req, "formatted_db_results").to_lowercase();
        let Ok(parsed) = crate::pipeline::action::SystemAction::parse(action) else {
            return "The system action cannot be parsed.".into();
        };
        let values: Vec<String> = parsed.mentioned_values().iter().map(|v| v.to_lowercase()).collect();
        if !u.constraints.is_empty() && u.requests.is_empty() {
            if let Some(v) = values.first() {
                if !results.contains(&format!("\"{v}\"")) {
                    return format!("The recommended entity {v} does not match the query results.");
                }
            }
        }
        let missing: Vec<&String> = u
            .requests
            .iter()
            .filter(|s| !action.to_lowercase().contains(&format!("{s}=")))
            .collect();
        if !missing.is_empty() && !action.starts_with("nooffer") {
            return format!("The action does not answer the requested {missing:?}.");
        }
        String::new()
    }

    fn nlg(&self, req: &ChatRequest) -> Reply {
        let critique = self.check_action(req);
        let omit = self.errs(req, var(req, "formatted_esb"), "nlg");
        Ok(json!({
            "critique": critique,
            "system_utterance": Self::realize(var(req, "system_action"), omit),
            "reason": "verbalized the action",
        }))
    }

    fn user_sim(&self, req: &ChatRequest) -> Reply {
        let prev = var(req, "formatted_prev_agent_output");
        let line = |tag: &str| {
            prev.lines()
                .find_map(|l| l.strip_prefix(tag))
                .map(str::trim)
                .unwrap_or("")
                .to_lowercase()
        };
        let action = line("- System Action:");
        let response = line("- System Response:");
        let missing: Vec<String> = crate::pipeline::action::SystemAction::parse(&action)
            .map(|a| {
                a.mentioned_values()
                    .into_iter()
                    .filter(|v| *v != "none" && !response.contains(*v))
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        let critique = if missing.is_empty() {
            String::new()
        } else {
            format!("The response leaves out {}.", missing.join(", "))
        };
        Ok(json!({"critique": critique}))
    }

    fn section<'t>(esb: &'t str, agent: &str) -> &'t str {
        let head = format!("### {agent}\n");
        esb.find(&head)
            .map(|at| {
                let rest = &esb[at + head.len()..];
                &rest[..rest.find("\n### ").unwrap_or(rest.len())]
            })
            .unwrap_or("")
    }

    fn e2e_part1(&self, req: &ChatRequest) -> Reply {
        let esb = var(req, "formatted_esb");
        let prev = belief_from(var(req, "pre_belief_state"));
        let u = parse_utterance(var(req, "user_utterance"));
        let domain = self.turn_domain(&u, var(req, "domains"), &prev);
        let mut belief = self.correct_belief(&prev, &u, domain.as_deref());
        if self.errs(req, Self::section(esb, "DST"), "dst") {
            if let (Some(d), Some(slot)) = (&domain, u.constraints.keys().last()) {
                if let Some(slots) = belief.0.get_mut(d) {
                    slots.remove(slot);
                }
                belief.0.retain(|_, s| !s.is_empty());
            }
        }
        let wrong = self.errs(req, Self::section(esb, "DP"), "dp");
        let (action, query) = self.policy(&u, domain.as_deref(), &belief, wrong);
        let utterance = if query.is_some() {
            String::new()
        } else {
            Self::realize(&action, false)
        };
        Ok(json!({
            "critique": "",
            "belief_state": belief,
            "system_action": action,
            "reason": "single-pass turn",
            "db_query_needed": query.is_some(),
            "query": query,
            "system_utterance": utterance,
        }))
    }

    fn e2e_part2(&self, req: &ChatRequest) -> Reply {
        let omit = self.errs(req, Self::section(var(req, "formatted_esb"), "NLG"), "nlg");
        Ok(json!({
            "system_utterance": Self::realize(var(req, "system_action"), omit),
            "reason": "verbalized with the query results",
        }))
    }

    fn genesis(&self, req: &ChatRequest) -> Reply {
        let n: usize = var(req, "num").parse().map_err(|_| ProviderError::Unscripted("genesis without `num`".into()))?;
        let agent = var(req, "agent_type");
        let domain = var(req, "domain_str");
        let (lo, hi) = GENESIS_QUALITY;
        let stubs: Vec<Value> = (0..n)
            .map(|i| {
                let q = lo + (hi - lo) * self.draw(req, &format!("genesis-{i}"));
                let phrase = PHRASES[(self.draw(req, &format!("phrase-{i}")) * PHRASES.len() as f64) as usize];
                json!({
                    "reason": format!("seed strategy {} for {domain}", i + 1),
                    "content": format!("{} {agent} {domain} #{}: {phrase}.", quality_tag(q), i + 1),
                })
            })
            .collect();
        Ok(Value::Array(stubs))
    }

    fn mutation(&self, req: &ChatRequest) -> Reply {
        let agent = var(req, "agent_type");
        let parent = var(req, "strategies_by_type")
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{agent}: ")))
            .unwrap_or("");
        let parent_q = parse_quality(parent).unwrap_or(UNTAGGED_QUALITY);
        let up = self.draw(req, "improve") < self.improve_prob;
        let q = if up {
            (parent_q + QUALITY_STEP_UP).min(QUALITY_CAP)
        } else {
            (parent_q - QUALITY_STEP_DOWN).max(QUALITY_FLOOR)
        };
        // the judge is noisy but tracks the parent's latent quality; critiques halve the odds
        let criticized = !var(req, "evolve_data").starts_with("No critique");
        let p_pos = if criticized { parent_q / 2.0 } else { parent_q };
        let score = if self.draw(req, "score") < p_pos { 1 } else { -1 };
        let phrase = PHRASES[(self.draw(req, "phrase") * PHRASES.len() as f64) as usize];
        let body = parent.split_once("] ").map(|x| x.1).unwrap_or(parent);
        let stem = body.split(" Also: ").next().unwrap_or(body);
        Ok(json!({"strategy": {
            "agent_type": agent,
            "content": format!("{} {stem} Also: {phrase}.", quality_tag(q)),
            "reason": if up { "addressed the critiques" } else { "revision overfit the example" },
            "score": score,
        }}))
    }

    fn consolidation(&self, req: &ChatRequest) -> Reply {
        let text = var(req, "strategies_text");
        let q = mean_quality(text).unwrap_or(UNTAGGED_QUALITY);
        let n = text.matches("## Strategy ").count();
        let phrase = PHRASES[(self.draw(req, "phrase") * PHRASES.len() as f64) as usize];
        Ok(json!({
            "content": format!(
                "{} {} {} merged from {n}: {phrase}.",
                quality_tag(q),
                var(req, "agent_type"),
                var(req, "domains_str").replace(", ", "+")
            ),
            "reason": "kept the shared guidance",
        }))
    }

    fn arbiter(&self, _req: &ChatRequest) -> Reply {
        Ok(json!({"final_output": null, "reason": "the original output stands", "critique_accepted": false}))
    }
}

impl ChatProvider for SyntheticWorld {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let template = request
            .template
            .ok_or_else(|| ProviderError::Unscripted("request without a template id".into()))?;
        let value = match template {
            TemplateId::Dst => self.dst(request),
            TemplateId::Dp => self.dp(request),
            TemplateId::Nlg => self.nlg(request),
            TemplateId::UserSim => self.user_sim(request),
            TemplateId::E2ePart1 => self.e2e_part1(request),
            TemplateId::E2ePart2 => self.e2e_part2(request),
            TemplateId::Arbiter => self.arbiter(request),
            TemplateId::Genesis => self.genesis(request),
            TemplateId::Mutation => self.mutation(request),
            TemplateId::Consolidation => self.consolidation(request),
        }?;
        Ok(ChatResponse::text(value.to_string()))
    }
}
