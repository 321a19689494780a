//! Fixtures shared by the benchmarks.

use strategist_core::corpus::synth::SynthSpec;
use strategist_core::engine::load_data;
use strategist_core::{Corpus, Engine, EngineConfig};

/// A fresh synthetic-world engine and its corpus.
pub fn synthetic_engine(seed: u64, dialogs: usize, domains: &[&str]) -> (Engine, Corpus) {
    let cfg = EngineConfig::synthetic(seed, SynthSpec::new(seed, dialogs, domains));
    let (corpus, db) = load_data(&cfg).expect("synthetic data");
    (Engine::new(cfg, db).expect("engine"), corpus)
}

/// Deterministic pseudo-sentences for text metrics.
pub fn sentences(n: usize, seed: u64) -> Vec<String> {
    const WORDS: [&str; 16] = [
        "the", "hotel", "is", "in", "north", "[value_name]", "cheap", "area", "phone", "number", "would", "you",
        "like", "to", "book", "it",
    ];
    let mut x = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    (0..n)
        .map(|_| {
            let len = 6 + (x % 10) as usize;
            (0..len)
                .map(|_| {
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    WORDS[(x % WORDS.len() as u64) as usize]
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}
