//! Run configuration. One JSON document fixes every knob of a run, so a run
//! directory holding it is enough to reproduce the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::FitnessParams;
use crate::corpus::synth::SynthSpec;
use crate::corpus::DEFAULT_MAX_TURNS;
use crate::embedding::EmbeddingConfig;
use crate::evolution::{EvolutionParams, TriggerPolicy};
use crate::llm::ProviderConfig;
use crate::pipeline::ModeFlags;
use crate::selection::SelectionPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Where a run reads its data and keeps its state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Corpus JSON; unused when a synthetic corpus is configured.
    pub corpus: Option<PathBuf>,
    /// Entity database JSON (`{domain: [entity, ...]}`).
    pub db: Option<PathBuf>,
    /// Schema JSON; the MultiWOZ schema when absent.
    pub schema: Option<PathBuf>,
    /// Bank snapshot loaded at start and saved on shutdown.
    pub bank: Option<PathBuf>,
    /// Trajectory log; in memory when absent.
    pub ssm: Option<PathBuf>,
    /// JSON Lines log of evolution reports.
    pub epochs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub fitness: FitnessParams,
    pub selection: SelectionPolicy,
    pub evolution: EvolutionParams,
    pub trigger: TriggerPolicy,
    /// Turn cap per dialog.
    pub max_turns: usize,
    pub online: ProviderConfig,
    pub offline: ProviderConfig,
    pub modes: ModeFlags,
    pub embedding: EmbeddingConfig,
    pub paths: Paths,
    /// Generate the corpus and database instead of reading them.
    pub synth: Option<SynthSpec>,
    pub seed: u64,
    /// Evaluation cadence as a fraction of the training dialogs.
    pub phase_every: f64,
    /// Chance that a mutation improves quality in the synthetic world.
    pub mock_improve_prob: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            fitness: FitnessParams::default(),
            selection: SelectionPolicy::default(),
            evolution: EvolutionParams::default(),
            trigger: TriggerPolicy::default(),
            max_turns: DEFAULT_MAX_TURNS,
            online: ProviderConfig::online(),
            offline: ProviderConfig::offline(),
            modes: ModeFlags::default(),
            embedding: EmbeddingConfig::default(),
            paths: Paths::default(),
            synth: None,
            seed: 0,
            phase_every: 0.1,
            mock_improve_prob: 0.8,
        }
    }
}

impl EngineConfig {
    /// Defaults over a generated corpus, with both providers in the synthetic world.
    pub fn synthetic(seed: u64, spec: SynthSpec) -> Self {
        EngineConfig {
            seed,
            synth: Some(spec),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.fitness.validate().map_err(|e| ConfigError::Invalid(format!("fitness: {e}")))?;
        self.selection
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("selection: {e}")))?;
        self.evolution
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("evolution: {e}")))?;
        self.trigger.validate().map_err(|e| ConfigError::Invalid(format!("trigger: {e}")))?;
        self.online.validate().map_err(|e| ConfigError::Invalid(format!("online: {e}")))?;
        self.offline.validate().map_err(|e| ConfigError::Invalid(format!("offline: {e}")))?;
        if self.max_turns == 0 {
            return bad("max_turns must be positive".into());
        }
        if !(self.phase_every > 0.0 && self.phase_every <= 1.0) {
            return bad(format!("phase_every must lie in (0, 1], got {}", self.phase_every));
        }
        if !(0.0..=1.0).contains(&self.mock_improve_prob) {
            return bad(format!("mock_improve_prob must lie in [0, 1], got {}", self.mock_improve_prob));
        }
        if self.synth.is_none() && (self.paths.corpus.is_none() || self.paths.db.is_none()) {
            return bad("either `synth` or both `paths.corpus` and `paths.db` must be set".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectionKind;

    #[test]
    fn defaults_carry_the_reference_hyperparameters() {
        let c = EngineConfig::default();
        assert_eq!(c.fitness.alpha, 0.3);
        assert_eq!(c.fitness.epsilon, 0.01);
        assert_eq!(c.selection.kind, SelectionKind::Boltzmann);
        assert_eq!(c.selection.temperature, 1.0);
        assert_eq!(c.evolution.delta, 0.8);
        assert_eq!(c.evolution.genesis_count, 10);
        assert_eq!(c.evolution.max_population, 10);
        assert_eq!(c.online.sampling_temperature, 0.7);
        assert_eq!(c.offline.sampling_temperature, 0.8);
        assert_eq!(c.max_turns, 30);
        assert_eq!(c.trigger, TriggerPolicy::PerEpisode);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = EngineConfig::from_json(r#"{"seed": 9, "selection": {"kind": "epsilon_greedy"}, "synth": {"seed": 1, "n_dialogs": 4, "domains": ["hotel"]}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.selection.epsilon, 0.1);
        assert_eq!(c.evolution.max_population, 10);
        c.validate().unwrap();
        assert_eq!(EngineConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_nonsense() {
        let mut c = EngineConfig::synthetic(0, SynthSpec::new(0, 2, &["hotel"]));
        c.validate().unwrap();
        c.phase_every = 0.0;
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        assert!(c.validate().is_err(), "no data source");
        c.synth = Some(SynthSpec::new(0, 2, &["hotel"]));
        c.selection.temperature = -1.0;
        assert!(c.validate().is_err());
    }
}
