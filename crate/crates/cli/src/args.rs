use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use strategist_core::corpus::synth::SynthSpec;
use strategist_core::{EngineConfig, SelectionKind, TriggerPolicy};

#[derive(Debug, Parser)]
#[command(name = "strategist", version, about = "Self-evolving dialog strategy engine")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Genesis for every domain combination of the corpus and save the bank.
    Init {
        /// Restrict to these comma-separated domain sets, e.g. `hotel` or `hotel+taxi`.
        #[arg(long, value_delimiter = ',')]
        domains: Vec<String>,
        /// Also write the effective configuration here.
        #[arg(long)]
        write_config: Option<PathBuf>,
    },
    /// Train over the corpus with evolution, evaluating the test split in phases.
    Run {
        /// Run directory; created if missing.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Score the test split against the configured bank without evolving it.
    Eval {
        /// Write per-dialog scores and trajectories as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bank statistics, and optionally raw strategy embeddings as JSON Lines.
    Analyze {
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// HTTP service. Bind address from STRATEGIST_BIND, bearer token from STRATEGIST_TOKEN.
    Serve {
        #[arg(long, env = "STRATEGIST_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Chat with the system on the terminal; `/end` scores the dialog.
    Chat {
        /// Comma-separated domains of the conversation.
        #[arg(long, value_delimiter = ',', required = true)]
        domains: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Boltzmann,
    Roulette,
    Uniform,
    EpsilonGreedy,
}

impl From<PolicyArg> for SelectionKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Boltzmann => SelectionKind::Boltzmann,
            PolicyArg::Roulette => SelectionKind::RouletteWheel,
            PolicyArg::Uniform => SelectionKind::UniformRandom,
            PolicyArg::EpsilonGreedy => SelectionKind::EpsilonGreedy,
        }
    }
}

/// Flags layered over the configuration file, in this order.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration; defaults apply to every missing field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    #[arg(long, global = true)]
    pub bank: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ssm: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Boltzmann temperature.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// `per_episode`, `per_turn` or `per_n_dialogs:N`.
    #[arg(long, global = true, value_parser = parse_trigger)]
    pub trigger: Option<TriggerPolicy>,
    #[arg(long, global = true)]
    pub zero_shot: bool,
    #[arg(long, global = true)]
    pub phase_every: Option<f64>,
    /// Generate a synthetic corpus of this many dialogs instead of reading one.
    #[arg(long, global = true)]
    pub synth: Option<usize>,
    /// Domains of the synthetic corpus.
    #[arg(long, global = true, value_delimiter = ',', default_value = "hotel,restaurant")]
    pub synth_domains: Vec<String>,
}

fn parse_trigger(s: &str) -> Result<TriggerPolicy, String> {
    s.parse()
}

impl Overrides {
    pub fn resolve(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => EngineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.synth {
            let domains: Vec<&str> = self.synth_domains.iter().map(String::as_str).collect();
            let mut spec = SynthSpec::new(cfg.seed, n, &domains);
            spec.test_fraction = 0.2;
            cfg.synth = Some(spec);
        }
        let paths = &mut cfg.paths;
        for (slot, v) in [
            (&mut paths.corpus, &self.corpus),
            (&mut paths.db, &self.db),
            (&mut paths.schema, &self.schema),
            (&mut paths.bank, &self.bank),
            (&mut paths.ssm, &self.ssm),
        ] {
            if let Some(v) = v {
                *slot = Some(v.clone());
            }
        }
        if self.corpus.is_some() {
            cfg.synth = None;
        }
        if let Some(p) = self.policy {
            cfg.selection.kind = p.into();
        }
        if let Some(t) = self.tau {
            cfg.selection.temperature = t;
        }
        if let Some(t) = self.trigger {
            cfg.trigger = t;
        }
        if self.zero_shot {
            cfg.modes.zero_shot = true;
        }
        if let Some(p) = self.phase_every {
            cfg.phase_every = p;
        }
        if cfg.synth.is_none() && cfg.paths.corpus.is_none() {
            bail!("no data: pass --config, --corpus with --db, or --synth N");
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
