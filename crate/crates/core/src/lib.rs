pub mod batch;
pub mod bilm;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod event_log;
pub mod nn;
pub mod synthgen;
pub mod tokenizer;
pub mod word2vec;

pub use error::{HarError, Result};
