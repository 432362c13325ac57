//! Tabular reinforcement learning built around average-reward-adjusted
//! discounted state values.
//!
//! The crate bundles:
//!
//! - a tabular MDP model with seeded, replication-splittable sampling
//!   ([`mdp`], [`rng`]);
//! - five benchmark environments ([`envs`]);
//! - exact linear-algebra oracles for gain, bias, discounted values, their
//!   `gain/(1-gamma) + bias + error` decomposition, learner fixed points and
//!   Blackwell classification by policy enumeration ([`oracle`]);
//! - the dual-discount average-reward-adjusted learner and a Watkins
//!   Q-Learning baseline ([`ara`], [`qlearn`]);
//! - an experiment harness with common random numbers, convergence
//!   detection and metric aggregation ([`harness`]);
//! - the Friedman / Conover / Benjamini-Hochberg significance pipeline
//!   ([`stats`]) and report rendering ([`report`]).

pub mod ara;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod qlearn;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod stats;

pub use error::{CoreError, Result};
