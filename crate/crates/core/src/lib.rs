//! Cost-aware age-of-information scheduling: system model, slotted
//! simulator, drift-plus-penalty scheduler, randomized policies with their
//! Markov-chain analysis and parameter searches, and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod dpp;
pub mod experiment;
pub mod forp;
pub mod grid;
pub mod model;
pub mod ofrp;
pub mod sim;
pub mod solver;

pub use model::{ActionVector, Costs, ModelError, SystemConfig, UserAction, UserState};
pub use sim::{Policy, SimError, SimOptions, SimStats};
