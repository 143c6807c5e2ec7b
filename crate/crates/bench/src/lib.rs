//! Experiment runner for the random-CMDP study: configuration, the sweep
//! itself, and CSV output with summaries.

pub mod config;
pub mod error;
pub mod experiment;
pub mod results;
