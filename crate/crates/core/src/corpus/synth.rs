//! Deterministic synthetic mini-corpus.
//!
//! Every goal is built around one target entity per domain, so the satisfying
//! entity and the answer to every requested slot are known by construction.
//! User utterances follow a fixed phrasing (`the <slot> should be <value>`,
//! `can you give me the <slot> of the <domain> ?`) that the rule-based mock
//! agents in [`crate::mock`] understand.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusTurn, Dialog, DomainDatabase, DomainGoal, DomainSchema, Entity, Schema, Split, UserGoal};
use crate::types::DomainSet;

pub const SYNTH_DOMAINS: [&str; 4] = ["restaurant", "hotel", "attraction", "train"];

const AREAS: &[&str] = &["centre", "north", "south", "east", "west"];
const FOODS: &[&str] = &["italian", "chinese", "indian", "british", "french"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const STARS: &[&str] = &["2", "3", "4", "5"];
const ATTRACTION_TYPES: &[&str] = &["museum", "park", "theatre", "college"];
const PLACES: &[&str] = &["cambridge", "london", "ely", "norwich", "stevenage"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday"];
const ADJECTIVES: &[&str] = &[
    "golden", "silver", "copper", "quiet", "royal", "little", "grand", "old", "green", "blue",
    "hidden", "bright",
];
const NOUNS: &[&str] = &[
    "kettle", "lantern", "garden", "anchor", "crown", "meadow", "bridge", "harbour", "orchard",
    "tower", "willow", "falcon",
];
const STREETS: &[&str] = &["mill", "regent", "castle", "king", "station", "market"];

/// The schema of the synthetic domains.
pub fn synth_schema() -> Schema {
    let d = |informable: &[&str], requestable: &[&str], key: &str| DomainSchema {
        informable: informable.iter().map(|s| s.to_string()).collect(),
        requestable: requestable.iter().map(|s| s.to_string()).collect(),
        key: key.to_string(),
        bookable: Vec::new(),
    };
    let mut domains = BTreeMap::new();
    domains.insert("restaurant".into(), d(&["area", "food", "pricerange"], &["address", "phone", "postcode"], "name"));
    domains.insert("hotel".into(), d(&["area", "stars", "pricerange"], &["address", "phone", "postcode"], "name"));
    domains.insert("attraction".into(), d(&["area", "type"], &["address", "phone", "postcode"], "name"));
    domains.insert("train".into(), d(&["departure", "destination", "day"], &["price", "duration"], "trainid"));
    Schema { domains }
}

/// Parameters of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_dialogs: usize,
    pub domains: Vec<String>,
    /// Probability that a dialog spans two domains.
    #[serde(default = "default_multi")]
    pub multi_domain_prob: f64,
    /// Fraction of dialogs (taken from the end) tagged as test split.
    #[serde(default)]
    pub test_fraction: f64,
    #[serde(default = "default_entities")]
    pub entities_per_domain: usize,
}

fn default_multi() -> f64 {
    0.3
}

fn default_entities() -> usize {
    12
}

impl SynthSpec {
    pub fn new(seed: u64, n_dialogs: usize, domains: &[&str]) -> Self {
        SynthSpec {
            seed,
            n_dialogs,
            domains: domains.iter().map(|s| s.to_string()).collect(),
            multi_domain_prob: default_multi(),
            test_fraction: 0.0,
            entities_per_domain: default_entities(),
        }
    }

    pub fn generate(&self) -> (Corpus, DomainDatabase) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let full = synth_schema();
        let pool: Vec<String> = self
            .domains
            .iter()
            .map(|d| d.to_lowercase())
            .filter(|d| full.domains.contains_key(d))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        assert!(!pool.is_empty(), "domain pool must name at least one synthetic domain");
        let schema = Schema {
            domains: pool.iter().map(|d| (d.clone(), full.domains[d].clone())).collect(),
        };
        let mut entities = BTreeMap::new();
        for domain in &pool {
            entities.insert(domain.clone(), make_entities(domain, self.entities_per_domain.max(1), &mut rng));
        }
        let db = DomainDatabase::new(schema, entities).expect("generated entities match the schema");

        let n_test = (self.n_dialogs as f64 * self.test_fraction).round() as usize;
        let mut dialogs = Vec::with_capacity(self.n_dialogs);
        for i in 0..self.n_dialogs {
            let two = pool.len() >= 2 && rng.random::<f64>() < self.multi_domain_prob;
            let mut chosen: Vec<&String> = pool.choose_multiple(&mut rng, if two { 2 } else { 1 }).collect();
            chosen.sort();
            // order of conversation is random, the domain set is not
            chosen.shuffle(&mut rng);
            let mut goal = UserGoal::default();
            let mut turns = Vec::new();
            for domain in &chosen {
                let list = &db.entities[*domain];
                let target = list.choose(&mut rng).expect("non-empty");
                let (g, t) = make_goal_turns(domain, target, db.schema.domain(domain).unwrap(), &mut rng);
                goal.domains.insert((*domain).clone(), g);
                turns.extend(t);
            }
            turns.push(CorpusTurn {
                user: "thank you , that is all .".into(),
                system: "you are welcome . goodbye .".into(),
            });
            dialogs.push(Dialog {
                dialog_id: format!("synth-{:04}", i),
                split: if i >= self.n_dialogs - n_test { Split::Test } else { Split::Train },
                domains: DomainSet::new(chosen.iter().map(|s| s.as_str())).unwrap(),
                goal,
                turns,
            });
        }
        (Corpus { dialogs }, db)
    }
}

/// Generates `n_dialogs` training dialogs over `domains` with the default settings.
pub fn synth_corpus(seed: u64, n_dialogs: usize, domains: &[&str]) -> (Corpus, DomainDatabase) {
    SynthSpec::new(seed, n_dialogs, domains).generate()
}

fn make_entities(domain: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<Entity> {
    let mut names: Vec<(usize, usize)> = (0..ADJECTIVES.len())
        .flat_map(|a| (0..NOUNS.len()).map(move |b| (a, b)))
        .collect();
    names.shuffle(rng);
    let mut used_ids = BTreeSet::new();
    (0..n)
        .map(|i| {
            let mut e = Entity::new();
            let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).unwrap().to_string();
            match domain {
                "train" => {
                    let mut id;
                    loop {
                        id = format!("tr{}", rng.random_range(1000..10000));
                        if used_ids.insert(id.clone()) {
                            break;
                        }
                    }
                    e.insert("trainid".into(), id);
                    let dep = pick(rng, PLACES);
                    let mut dest = pick(rng, PLACES);
                    while dest == dep {
                        dest = pick(rng, PLACES);
                    }
                    e.insert("departure".into(), dep);
                    e.insert("destination".into(), dest);
                    e.insert("day".into(), pick(rng, DAYS));
                    e.insert("price".into(), format!("{}.{:02} pounds", rng.random_range(5..40), rng.random_range(0..100)));
                    e.insert("duration".into(), format!("{} minutes", rng.random_range(15..120)));
                }
                _ => {
                    let (a, b) = names[i % names.len()];
                    let name = match domain {
                        "restaurant" => format!("the {} {}", ADJECTIVES[a], NOUNS[b]),
                        "hotel" => format!("{} {} lodge", ADJECTIVES[a], NOUNS[b]),
                        _ => format!("{} {} gallery", ADJECTIVES[a], NOUNS[b]),
                    };
                    e.insert("name".into(), name);
                    e.insert("area".into(), pick(rng, AREAS));
                    match domain {
                        "restaurant" => {
                            e.insert("food".into(), pick(rng, FOODS));
                            e.insert("pricerange".into(), pick(rng, PRICES));
                        }
                        "hotel" => {
                            e.insert("stars".into(), pick(rng, STARS));
                            e.insert("pricerange".into(), pick(rng, PRICES));
                        }
                        _ => {
                            e.insert("type".into(), pick(rng, ATTRACTION_TYPES));
                        }
                    }
                    e.insert(
                        "address".into(),
                        format!("{} {} road", rng.random_range(1..200), pick(rng, STREETS)),
                    );
                    e.insert("phone".into(), format!("01223{:06}", rng.random_range(0..1_000_000)));
                    e.insert(
                        "postcode".into(),
                        format!(
                            "cb{}{}{}",
                            rng.random_range(1..5),
                            rng.random_range(1..10),
                            ["aa", "df", "gh", "jq", "ld", "nt"].choose(rng).unwrap()
                        ),
                    );
                }
            }
            e
        })
        .collect()
}

fn make_goal_turns(
    domain: &str,
    target: &Entity,
    schema: &DomainSchema,
    rng: &mut ChaCha8Rng,
) -> (DomainGoal, Vec<CorpusTurn>) {
    let k = if domain == "train" { 3 } else { 2 };
    let mut inform_slots: Vec<&String> = schema.informable.choose_multiple(rng, k).collect();
    inform_slots.sort();
    let n_req = rng.random_range(1..=2);
    let mut request: Vec<String> = schema.requestable.choose_multiple(rng, n_req).cloned().collect();
    request.sort();
    let inform: BTreeMap<String, String> = inform_slots
        .iter()
        .map(|s| ((*s).clone(), target[*s].clone()))
        .collect();
    let constraints: Vec<String> = inform
        .iter()
        .map(|(s, v)| format!("the {s} should be {v}"))
        .collect();
    let key_value = &target[&schema.key];
    let first = CorpusTurn {
        user: format!("i am looking for a {domain} . {} .", constraints.join(" and ")),
        system: format!("i would recommend {key_value} . shall i tell you more ?"),
    };
    let answers: Vec<String> = request
        .iter()
        .map(|s| format!("the {s} is {}", target[s]))
        .collect();
    let second = CorpusTurn {
        user: format!("can you give me the {} of the {domain} ?", request.join(" and the ")),
        system: format!("{} .", answers.join(" and ")),
    };
    (
        DomainGoal {
            inform,
            request,
            book: BTreeMap::new(),
        },
        vec![first, second],
    )
}
