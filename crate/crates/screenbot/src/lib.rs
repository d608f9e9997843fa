//! Experiment pipeline, file formats, reporting and the interview session
//! around `screenbot-core`.

pub mod config;
pub mod experiment;
pub mod interview;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::Layout;
