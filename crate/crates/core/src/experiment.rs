//! The phased train-and-evaluate protocol.
//!
//! Training dialogs are replayed in order, each one feeding the trigger
//! policy. Before the first dialog, after every `phase_every` fraction of
//! them, and after the last, the test split is evaluated against a copy of
//! the bank. A run directory holds:
//!
//! ```text
//! config.json          effective configuration (paths point into the directory)
//! ssm.jsonl(.idx)      trajectories of the training dialogs
//! epochs.jsonl         one evolution report per epoch
//! banks/phase_NN.json  bank snapshot at each evaluation phase
//! bank.json            final bank
//! metrics.csv          one row per phase
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bank::StrategyBank;
use crate::config::EngineConfig;
use crate::corpus::{Delexicalizer, Dialog, Split};
use crate::engine::{load_data, Engine, EngineError};
use crate::memory::{Source, Trajectory};
use crate::metrics::{bank_stats, evaluate, write_phase_csv, MetricError, MetricReport, PhaseRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("phase {phase}, dialog `{dialog_id}`: {source}")]
    Dialog {
        phase: usize,
        dialog_id: String,
        source: EngineError,
    },
    #[error("phase {phase}: {source}")]
    Metric { phase: usize, source: MetricError },
    #[error("the corpus has no {0:?} dialogs")]
    EmptySplit(Split),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Training-dialog counts after which the test split is evaluated: 0, every
/// `every * n` (rounded), and `n`, without repeats.
pub fn phase_points(n: usize, every: f64) -> Vec<usize> {
    let steps = (1.0 / every).round().max(1.0) as usize;
    let mut out: Vec<usize> = (0..=steps)
        .map(|i| ((i as f64 * every * n as f64).round() as usize).min(n))
        .collect();
    out.push(n);
    out.dedup();
    out
}

/// Runs `dialogs` against a copy of `bank` with an rng fixed by `seed`.
/// The engine's own bank, memory and rng are left untouched.
pub fn evaluate_dialogs(
    engine: &Engine,
    dialogs: &[&Dialog],
    bank: &StrategyBank,
    seed: u64,
) -> Result<(MetricReport, Vec<Trajectory>), ExperimentError> {
    let mut bank = bank.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = Vec::with_capacity(dialogs.len());
    for d in dialogs {
        let t = engine
            .evaluate_episode(d, &mut bank, &mut rng)
            .map_err(|source| ExperimentError::Dialog {
                phase: 0,
                dialog_id: d.dialog_id.clone(),
                source,
            })?;
        trajs.push(t);
    }
    let refs: Vec<Vec<String>> = dialogs
        .iter()
        .map(|d| d.reference_responses().map(str::to_string).collect())
        .collect();
    let delex = Delexicalizer::from_database(engine.db());
    let traj_refs: Vec<&Trajectory> = trajs.iter().collect();
    let report = evaluate(&traj_refs, &refs, engine.db(), Some(&delex))
        .map_err(|source| ExperimentError::Metric { phase: 0, source })?;
    Ok((report, trajs))
}

/// Seed of the evaluation rng at `phase`.
fn eval_seed(seed: u64, phase: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (phase as u64 + 1)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub rows: Vec<PhaseRow>,
    pub train_dialogs: usize,
    pub test_dialogs: usize,
}

/// Executes the protocol into `dir`, which is created if needed. Existing
/// state files in `dir` are replaced.
pub fn run_experiment(config: &EngineConfig, dir: &Path) -> Result<RunSummary, ExperimentError> {
    std::fs::create_dir_all(dir.join("banks")).map_err(io_err(dir))?;
    let mut cfg = config.clone();
    cfg.paths.ssm = Some(dir.join("ssm.jsonl"));
    cfg.paths.epochs = Some(dir.join("epochs.jsonl"));
    cfg.paths.bank = Some(dir.join("bank.json"));
    for f in ["ssm.jsonl", "ssm.jsonl.idx", "epochs.jsonl", "bank.json", "metrics.csv"] {
        let p = dir.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    cfg.save(dir.join("config.json")).map_err(EngineError::from)?;

    let (corpus, db) = load_data(&cfg)?;
    let train: Vec<&Dialog> = corpus.split(Split::Train).collect();
    let test: Vec<&Dialog> = corpus.split(Split::Test).collect();
    if train.is_empty() {
        return Err(ExperimentError::EmptySplit(Split::Train));
    }
    if test.is_empty() {
        return Err(ExperimentError::EmptySplit(Split::Test));
    }
    let engine = Engine::new(cfg.clone(), db)?;
    let points = phase_points(train.len(), cfg.phase_every);
    let mut rows = Vec::with_capacity(points.len());
    let mut done = 0usize;
    for (phase, &upto) in points.iter().enumerate() {
        for d in &train[done..upto] {
            engine
                .run_episode(d, Source::CorpusReplay)
                .map_err(|source| ExperimentError::Dialog {
                    phase,
                    dialog_id: d.dialog_id.clone(),
                    source,
                })?;
        }
        done = upto;
        let bank = engine.bank_snapshot();
        let snap = dir.join("banks").join(format!("phase_{phase:02}.json"));
        bank.save(&snap).map_err(EngineError::from)?;
        let (report, _) = evaluate_dialogs(&engine, &test, &bank, eval_seed(cfg.seed, phase)).map_err(|e| match e {
            ExperimentError::Dialog { dialog_id, source, .. } => ExperimentError::Dialog {
                phase,
                dialog_id,
                source,
            },
            ExperimentError::Metric { source, .. } => ExperimentError::Metric { phase, source },
            other => other,
        })?;
        let stats = if bank.alive_count() > 0 {
            Some(bank_stats(&bank, engine.embedder(), &cfg.fitness).map_err(|source| ExperimentError::Metric { phase, source })?)
        } else {
            None
        };
        rows.push(PhaseRow {
            phase,
            train_dialogs: upto,
            epochs: engine.epoch_count(),
            inform: report.inform,
            success: report.success,
            bleu: report.bleu,
            combine: report.combine,
            entropy_bits: stats.as_ref().map(|s| s.entropy_bits),
            mean_alive_fitness: stats.as_ref().and_then(|s| s.mean_alive_fitness),
            mean_similarity: stats.as_ref().and_then(|s| s.mean_pairwise_similarity),
            alive_strategies: bank.alive_count(),
        });
        tracing::info!(phase, train = upto, combine = report.combine, "phase evaluated");
    }
    engine.save_bank(dir.join("bank.json"))?;
    let csv_path = dir.join("metrics.csv");
    let file = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_phase_csv(file, &rows).map_err(|source| ExperimentError::Metric {
        phase: rows.len(),
        source,
    })?;
    Ok(RunSummary {
        dir: dir.to_path_buf(),
        rows,
        train_dialogs: train.len(),
        test_dialogs: test.len(),
    })
}
