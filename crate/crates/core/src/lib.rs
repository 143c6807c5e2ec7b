//! Tabular constrained-MDP laboratory.
//!
//! The crate covers exact CMDP evaluation and planning ([`cmdp`]), offline
//! dataset construction ([`datagen`]), the stationary-distribution dual solver
//! ([`dice`]), the conservative cost bound ([`bound`]) and the comparison
//! algorithms ([`baselines`]).

pub mod baselines;
pub mod bound;
pub mod cmdp;
pub mod datagen;
pub mod dice;
mod error;
pub mod lp;
mod optim;

pub use error::{Error, Result};
