#![allow(dead_code)]

use screenbot::config::{CatalogSource, SplitSettings};
use screenbot::ExperimentConfig;
use screenbot_core::agent::AgentConfig;
use screenbot_core::cohort::CohortSpec;
use screenbot_core::nnet::TrainConfig;
use screenbot_core::simulator::SimulatorConfig;

/// A pipeline small enough to run in a couple of seconds.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        catalog: CatalogSource::Synthetic { size: 20 },
        cohort: CohortSpec {
            n_users: 16,
            embedding_dim: 8,
            discriminative_ids: vec![1, 2],
            delta: 3.0,
            sigma_noise: 0.5,
            conversations_per_user: 2,
            turns_min: 8,
            turns_max: 16,
            ..CohortSpec::default()
        },
        split: SplitSettings {
            n_splits: 2,
            train_fraction: 0.65,
        },
        simulator: SimulatorConfig {
            hidden: 8,
            train: TrainConfig {
                learning_rate: 1e-2,
                max_epochs: 150,
                ..TrainConfig::default()
            },
            ..SimulatorConfig::default()
        },
        agent: AgentConfig {
            hidden: vec![16],
            episodes_per_user: 2,
            buffer_capacity: 2000,
            ..AgentConfig::default()
        },
        turn_constraints: vec![1, 3, 5],
        ..ExperimentConfig::default()
    }
}
