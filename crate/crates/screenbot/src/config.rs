//! The experiment configuration document (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use screenbot_core::agent::AgentConfig;
use screenbot_core::catalog::QuestionCatalog;
use screenbot_core::classifier::ClassifierKind;
use screenbot_core::cohort::CohortSpec;
use screenbot_core::env::EnvConfig;
use screenbot_core::nnet::TrainConfig;
use screenbot_core::simulator::SimulatorConfig;

use crate::io;

/// Where the question catalog comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CatalogSource {
    /// Generated catalog of `size` questions (greeting first, goodbye last).
    Synthetic { size: usize },
    /// The built-in 107-question catalog.
    Default,
    /// A tab-separated catalog file.
    File { path: PathBuf },
}

impl CatalogSource {
    pub fn load(&self) -> Result<QuestionCatalog> {
        match self {
            CatalogSource::Synthetic { size } => Ok(QuestionCatalog::synthetic(*size)?),
            CatalogSource::Default => Ok(QuestionCatalog::default_catalog()),
            CatalogSource::File { path } => io::read_catalog(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub n_splits: usize,
    pub train_fraction: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            n_splits: 10,
            train_fraction: 0.65,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSettings {
    pub kind: ClassifierKind,
    pub l2: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Logistic,
            l2: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    /// Average the first k turns over every transcript of a user instead of
    /// only the first one.
    pub pool_transcripts: bool,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            pool_transcripts: false,
        }
    }
}

/// Everything one experiment needs. Seeds inside the sub-sections are
/// ignored: every stochastic stage derives its seed from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub catalog: CatalogSource,
    pub cohort: CohortSpec,
    pub split: SplitSettings,
    pub simulator: SimulatorConfig,
    pub classifier: ClassifierSettings,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub turn_constraints: Vec<usize>,
    pub corpus: CorpusSettings,
    /// Compute leave-one-out simulator errors for the report.
    pub simulator_loo: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            catalog: CatalogSource::Synthetic { size: 20 },
            cohort: CohortSpec {
                n_users: 60,
                embedding_dim: 64,
                discriminative_ids: vec![1, 2, 3, 4],
                delta: 8.0,
                sigma_user: 0.1,
                sigma_noise: 1.5,
                turns_min: 30,
                turns_max: 60,
                ..CohortSpec::default()
            },
            split: SplitSettings::default(),
            simulator: SimulatorConfig {
                hidden: 32,
                train: TrainConfig {
                    learning_rate: 5e-3,
                    max_epochs: 3000,
                    ..TrainConfig::default()
                },
                ..SimulatorConfig::default()
            },
            classifier: ClassifierSettings::default(),
            agent: AgentConfig {
                episodes_per_user: 50,
                hidden: vec![64, 64],
                learning_rate: 3e-4,
                ..AgentConfig::default()
            },
            env: EnvConfig::default(),
            turn_constraints: vec![1, 3, 5, 10, 15, 20, 25, 30, 35],
            corpus: CorpusSettings::default(),
            simulator_loo: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self, catalog: &QuestionCatalog) -> Result<()> {
        self.cohort.validate(catalog)?;
        self.env.validate()?;
        self.agent.validate()?;
        self.simulator.train.validate()?;
        if self.split.n_splits == 0 {
            bail!("n_splits must be at least 1");
        }
        if self.turn_constraints.is_empty() {
            bail!("turn_constraints must not be empty");
        }
        for &t in &self.turn_constraints {
            if t == 0 || t > self.env.max_turns {
                bail!("turn constraint {t} outside 1..={}", self.env.max_turns);
            }
        }
        if !(self.classifier.l2 >= 0.0) {
            bail!("classifier l2 must be nonnegative");
        }
        Ok(())
    }

    /// The largest turn constraint; its rollouts feed the question rankings.
    pub fn max_constraint(&self) -> usize {
        self.turn_constraints.iter().copied().max().unwrap_or(self.env.max_turns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: ExperimentConfig = toml::from_str("seed = 7\n[cohort]\ndelta = 2.0\n[catalog]\nkind = \"default\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.cohort.delta, 2.0);
        assert_eq!(cfg.catalog, CatalogSource::Default);
        assert_eq!(cfg.turn_constraints.len(), 9);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn constraints_must_fit_the_episode_cap() {
        let mut cfg = ExperimentConfig::default();
        let catalog = cfg.catalog.load().unwrap();
        cfg.validate(&catalog).unwrap();
        cfg.turn_constraints.push(36);
        assert!(cfg.validate(&catalog).is_err());
    }
}
