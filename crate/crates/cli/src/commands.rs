use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use strategist_core::corpus::Split;
use strategist_core::engine::load_data;
use strategist_core::experiment::{evaluate_dialogs, run_experiment};
use strategist_core::metrics::{bank_stats, export_embeddings};
use strategist_core::service::{CreateSession, Service, TurnReply, END_COMMAND};
use strategist_core::{Dialog, DomainSet, Engine, EngineConfig, MetricReport, Trajectory};

use crate::args::{Cli, Command};

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Init { domains, write_config } => init(cfg, &domains, write_config.as_deref()),
        Command::Run { out } => run(&cfg, &out),
        Command::Eval { out } => eval(cfg, out.as_deref()),
        Command::Analyze { embeddings } => analyze(cfg, embeddings.as_deref()),
        Command::Serve { bind } => serve(cfg, &bind),
        Command::Chat { domains } => chat(cfg, &domains, std::io::stdin().lock(), std::io::stdout().lock()),
    }
}

fn bank_path(cfg: &EngineConfig) -> Result<PathBuf> {
    cfg.paths
        .bank
        .clone()
        .context("no bank path: pass --bank or set paths.bank")
}

fn engine(cfg: EngineConfig) -> Result<(Engine, strategist_core::Corpus)> {
    let (corpus, db) = load_data(&cfg)?;
    Ok((Engine::new(cfg, db)?, corpus))
}

/// `hotel+taxi` → {hotel, taxi}.
fn parse_domain_set(s: &str) -> Result<DomainSet> {
    DomainSet::new(s.split('+').map(str::trim)).map_err(|e| anyhow::anyhow!("domain set `{s}`: {e}"))
}

pub fn init(cfg: EngineConfig, domains: &[String], write_config: Option<&Path>) -> Result<()> {
    let path = bank_path(&cfg)?;
    if let Some(p) = write_config {
        cfg.save(p)?;
    }
    if cfg.modes.zero_shot {
        bail!("zero-shot mode uses static strategies; there is no bank to initialize");
    }
    let (engine, corpus) = engine(cfg)?;
    let combos: BTreeSet<DomainSet> = if domains.is_empty() {
        corpus.split(Split::Train).map(|d| d.domains.clone()).collect()
    } else {
        domains.iter().map(|s| parse_domain_set(s)).collect::<Result<_>>()?
    };
    let mut created = 0;
    for c in &combos {
        created += engine.ensure_coverage(c)?;
    }
    engine.save_bank(&path)?;
    println!(
        "{} domain sets covered, {created} genesis operations, {} strategies alive -> {}",
        combos.len(),
        engine.with_bank(|b| b.alive_count()),
        path.display()
    );
    Ok(())
}

pub fn run(cfg: &EngineConfig, out: &Path) -> Result<()> {
    let summary = run_experiment(cfg, out)?;
    println!(
        "{:>5} {:>6} {:>6} {:>7} {:>7} {:>6} {:>8} {:>6}",
        "phase", "train", "epochs", "inform", "success", "bleu", "combine", "alive"
    );
    for r in &summary.rows {
        println!(
            "{:>5} {:>6} {:>6} {:>7.2} {:>7.2} {:>6.2} {:>8.2} {:>6}",
            r.phase, r.train_dialogs, r.epochs, r.inform, r.success, r.bleu, r.combine, r.alive_strategies
        );
    }
    println!("run directory: {}", summary.dir.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    report: &'a MetricReport,
    trajectories: &'a [Trajectory],
}

pub fn eval(cfg: EngineConfig, out: Option<&Path>) -> Result<()> {
    let seed = cfg.seed;
    let (engine, corpus) = engine(cfg)?;
    let test: Vec<&Dialog> = corpus.split(Split::Test).collect();
    if test.is_empty() {
        bail!("the corpus has no test dialogs");
    }
    let (report, trajectories) = evaluate_dialogs(&engine, &test, &engine.bank_snapshot(), seed)?;
    println!(
        "{} dialogs: inform {:.2}  success {:.2}  bleu {:.2}  combine {:.2}",
        test.len(),
        report.inform,
        report.success,
        report.bleu,
        report.combine
    );
    if let Some(p) = out {
        let file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        serde_json::to_writer_pretty(
            file,
            &EvalOutput {
                report: &report,
                trajectories: &trajectories,
            },
        )?;
    }
    Ok(())
}

pub fn analyze(cfg: EngineConfig, embeddings: Option<&Path>) -> Result<()> {
    bank_path(&cfg)?;
    let (engine, _) = engine(cfg)?;
    let bank = engine.bank_snapshot();
    if bank.alive_count() == 0 {
        bail!("the bank has no alive strategies");
    }
    let stats = bank_stats(&bank, engine.embedder(), &engine.config().fitness)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    if let Some(p) = embeddings {
        let mut w = std::io::BufWriter::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
        for row in export_embeddings(&bank, engine.embedder())? {
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn serve(cfg: EngineConfig, bind: &str) -> Result<()> {
    let bank = cfg.paths.bank.clone();
    let (engine, _) = engine(cfg)?;
    let service = Arc::new(Service::new(Arc::new(engine)));
    let token = std::env::var("STRATEGIST_TOKEN").ok();
    tokio::runtime::Runtime::new()?.block_on(crate::server::serve(service.clone(), bind, token))?;
    if let Some(p) = bank {
        service.engine().save_bank(&p)?;
        tracing::info!(path = %p.display(), "bank saved");
    }
    Ok(())
}

/// Line-oriented chat over `input`; the bank is saved after `/end`.
pub fn chat(cfg: EngineConfig, domains: &[String], input: impl BufRead, mut output: impl Write) -> Result<()> {
    let bank = cfg.paths.bank.clone();
    let (engine, _) = engine(cfg)?;
    let service = Service::new(Arc::new(engine));
    let session = service.create_session(CreateSession {
        goal: None,
        domains: domains.to_vec(),
    })?;
    writeln!(output, "session {} over {}; type {END_COMMAND} to finish", session.session_id, session.domains)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match service.handle_turn(&session.session_id, &line)? {
            TurnReply::Turn(t) => {
                writeln!(output, "system: {}", t.system_response)?;
                for c in t.critiques.iter().filter(|c| c.is_negative()) {
                    writeln!(output, "  [{} on {}] {}", c.author, c.target, c.text)?;
                }
            }
            TurnReply::Ended(end) => {
                writeln!(output, "dialog {:?} after {} turns (record {})", end.outcome, end.turns, end.record_id)?;
                if let Some(e) = &end.epoch {
                    writeln!(output, "evolution epoch {}: {} operations", e.epoch_index, e.operations.len())?;
                }
                if let Some(p) = &bank {
                    service.engine().save_bank(p)?;
                }
                return Ok(());
            }
        }
    }
    writeln!(output, "input closed before {END_COMMAND}; dialog discarded")?;
    Ok(())
}
