//! Core algorithms for learning short diagnostic interviews.
//!
//! An agent picks questions from a fixed catalog, a per-user simulator
//! answers each one with a response embedding, and a linear classifier reads
//! the running average of those embeddings. Deep Q-learning trains the agent
//! to reach a correct prediction in as few turns as possible.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, the CLI and the
//! experiment pipeline live in the `screenbot` companion crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod agent;
pub mod catalog;
pub mod classifier;
pub mod cohort;
pub mod env;
mod error;
pub mod math;
pub mod nnet;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
