//! Task metrics (Inform, Success, BLEU, Combine) and bank analytics.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{FitnessParams, StrategyBank};
use crate::corpus::Delexicalizer;
use crate::corpus::DomainDatabase;
use crate::embedding::{mean_pairwise_similarity, Embedder, EmbeddingError};
use crate::evolution::mean_alive_fitness;
use crate::memory::Trajectory;
use crate::pipeline::evaluate_dialog;
use crate::types::AgentType;

pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates for {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("dialog `{dialog_id}`: goal domains {goal} differ from dialog domains {dialog}")]
    GoalMismatch {
        dialog_id: String,
        goal: String,
        dialog: String,
    },
    #[error("the bank has no alive strategy")]
    EmptyBank,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(inform + success) * 0.5 + bleu`, all on the 0-100 scale.
pub fn combine(inform: f64, success: f64, bleu: f64) -> f64 {
    (inform + success) * 0.5 + bleu
}

/// Lower-cased tokens: `[domain_slot]` placeholders stay whole, words are
/// alphanumeric runs, every other non-space character stands alone.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '[' {
            let close = chars[i + 1..]
                .iter()
                .position(|&x| x == ']')
                .map(|p| i + 1 + p)
                .filter(|&j| j > i + 1 && chars[i + 1..j].iter().all(|&x| x.is_alphanumeric() || x == '_'));
            match close {
                Some(j) => {
                    out.push(chars[i..=j].iter().collect());
                    i = j + 1;
                }
                None => {
                    out.push("[".into());
                    i += 1;
                }
            }
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 over pre-tokenized sentences, scaled to `[0, 100]`.
/// Uniform weights, brevity penalty, and add-one smoothing of the order-2+
/// precisions. Zero unigram matches give 0.
pub fn corpus_bleu_tokens(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matches = [0usize; BLEU_MAX_ORDER];
    let mut totals = [0usize; BLEU_MAX_ORDER];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=BLEU_MAX_ORDER {
            let rc = ngram_counts(r, n);
            for (gram, count) in ngram_counts(c, n) {
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..BLEU_MAX_ORDER {
        log_sum += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / BLEU_MAX_ORDER as f64).exp())
}

/// BLEU over raw sentences, delexicalized first when `delex` is given.
pub fn bleu(candidates: &[String], references: &[String], delex: Option<&Delexicalizer>) -> Result<f64, MetricError> {
    let prep = |s: &String| match delex {
        Some(d) => tokenize(&d.apply(s)),
        None => tokenize(s),
    };
    let c: Vec<Vec<String>> = candidates.iter().map(prep).collect();
    let r: Vec<Vec<String>> = references.iter().map(prep).collect();
    corpus_bleu_tokens(&c, &r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogScore {
    pub dialog_id: String,
    pub inform: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub inform: f64,
    pub success: f64,
    pub dialogs: Vec<DialogScore>,
}

/// Inform and Success percentages over finished dialogs.
pub fn score_dialogs(trajectories: &[&Trajectory], db: &DomainDatabase) -> Result<TaskScores, MetricError> {
    if trajectories.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut dialogs = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let goal_domains = t.goal.domain_set();
        if goal_domains.as_ref() != Some(&t.domains) {
            return Err(MetricError::GoalMismatch {
                dialog_id: t.dialog_id.clone(),
                goal: goal_domains.map(|d| d.to_string()).unwrap_or_default(),
                dialog: t.domains.to_string(),
            });
        }
        let v = evaluate_dialog(&t.goal, &t.turns, db);
        dialogs.push(DialogScore {
            dialog_id: t.dialog_id.clone(),
            inform: v.inform,
            success: v.success,
        });
    }
    let pct = |f: fn(&DialogScore) -> bool| 100.0 * dialogs.iter().filter(|d| f(d)).count() as f64 / dialogs.len() as f64;
    Ok(TaskScores {
        inform: pct(|d| d.inform),
        success: pct(|d| d.success),
        dialogs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
    pub combine: f64,
    pub dialogs: Vec<DialogScore>,
}

/// Scores trajectories against the reference system turns of each dialog.
/// Turn `i` of a trajectory is compared with reference turn `i`. Reference
/// turns past the end of a trajectory are skipped: their user turns were
/// never spoken because the dialog ended early.
pub fn evaluate(
    trajectories: &[&Trajectory],
    references: &[Vec<String>],
    db: &DomainDatabase,
    delex: Option<&Delexicalizer>,
) -> Result<MetricReport, MetricError> {
    if trajectories.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: trajectories.len(),
            references: references.len(),
        });
    }
    let task = score_dialogs(trajectories, db)?;
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for (t, r) in trajectories.iter().zip(references) {
        for (turn, reference) in t.turns.iter().zip(r) {
            cands.push(turn.system_response.clone());
            refs.push(reference.clone());
        }
    }
    let bleu = bleu(&cands, &refs, delex)?;
    Ok(MetricReport {
        inform: task.inform,
        success: task.success,
        bleu,
        combine: combine(task.inform, task.success, bleu),
        dialogs: task.dialogs,
    })
}

/// Lower-cased whitespace tokens with punctuation removed; empty ones dropped.
pub fn entropy_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
}

/// Shannon entropy in bits of the unigram distribution of `tokens`.
pub fn unigram_entropy<I: IntoIterator<Item = String>>(tokens: I) -> f64 {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let q = c as f64 / total as f64;
            -q * q.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy of the unigram distribution pooled over all alive contents.
pub fn bank_entropy(bank: &StrategyBank) -> Result<f64, MetricError> {
    if bank.alive_count() == 0 {
        return Err(MetricError::EmptyBank);
    }
    Ok(unigram_entropy(bank.alive().flat_map(|s| entropy_tokens(&s.content))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankAnalytics {
    pub alive: usize,
    pub total: usize,
    pub entropy_bits: f64,
    /// Absent with fewer than two alive strategies.
    pub mean_pairwise_similarity: Option<f64>,
    pub mean_alive_fitness: Option<f64>,
    pub avg_generation: BTreeMap<AgentType, f64>,
}

pub fn bank_stats(bank: &StrategyBank, embedder: &dyn Embedder, params: &FitnessParams) -> Result<BankAnalytics, MetricError> {
    let entropy_bits = bank_entropy(bank)?;
    let vectors = bank
        .alive()
        .map(|s| embedder.embed(&s.content))
        .collect::<Result<Vec<_>, _>>()?;
    let mut avg_generation = BTreeMap::new();
    for agent in AgentType::ALL {
        let gens: Vec<u64> = bank
            .alive()
            .filter(|s| s.agent_type == agent)
            .map(|s| s.metadata.generation_index)
            .collect();
        if !gens.is_empty() {
            avg_generation.insert(agent, gens.iter().sum::<u64>() as f64 / gens.len() as f64);
        }
    }
    Ok(BankAnalytics {
        alive: bank.alive_count(),
        total: bank.len(),
        entropy_bits,
        mean_pairwise_similarity: mean_pairwise_similarity(&vectors)?,
        mean_alive_fitness: mean_alive_fitness(bank, params),
        avg_generation,
    })
}

/// One alive strategy's embedding, for external projection tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub agent_type: AgentType,
    pub domains: String,
    pub generation: u64,
    pub model: String,
    pub vector: Vec<f64>,
}

pub fn export_embeddings(bank: &StrategyBank, embedder: &dyn Embedder) -> Result<Vec<EmbeddingRow>, MetricError> {
    bank.alive()
        .map(|s| {
            let v = embedder.embed(&s.content)?;
            Ok(EmbeddingRow {
                id: s.id.to_string(),
                agent_type: s.agent_type,
                domains: s.domains.to_string(),
                generation: s.metadata.generation_index,
                model: v.model_tag,
                vector: v.values,
            })
        })
        .collect()
}

/// One evaluation phase of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase: usize,
    pub train_dialogs: usize,
    pub epochs: u64,
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
    pub combine: f64,
    pub entropy_bits: Option<f64>,
    pub mean_alive_fitness: Option<f64>,
    pub mean_similarity: Option<f64>,
    pub alive_strategies: usize,
}

/// Writes phase rows as CSV with a header; floats use a fixed six decimals
/// so identical runs produce identical bytes.
pub fn write_phase_csv<W: Write>(out: W, rows: &[PhaseRow]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "phase",
        "train_dialogs",
        "epochs",
        "inform",
        "success",
        "bleu",
        "combine",
        "entropy_bits",
        "mean_alive_fitness",
        "mean_similarity",
        "alive_strategies",
    ])?;
    let f = |x: f64| format!("{x:.6}");
    let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.phase.to_string(),
            r.train_dialogs.to_string(),
            r.epochs.to_string(),
            f(r.inform),
            f(r.success),
            f(r.bleu),
            f(r.combine),
            opt(r.entropy_bits),
            opt(r.mean_alive_fitness),
            opt(r.mean_similarity),
            r.alive_strategies.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
