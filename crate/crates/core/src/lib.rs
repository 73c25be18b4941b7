//! Temporal-graph generative modeling: learn a factorized probability of
//! timestamped interactions, sample synthetic graphs from it, score links,
//! and measure how faithful a synthetic graph is to its source.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod distributions;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod event_store;
pub mod generator;
pub mod model;
pub mod nn;
pub mod seeds;
pub mod tape;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
