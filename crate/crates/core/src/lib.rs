//! Cost-efficient LLM serving plans over heterogeneous cloud GPUs.
//!
//! The planner picks how many GPUs of each type to rent, how to lay one
//! model replica out over them (tensor and pipeline parallelism), and what
//! share of each workload class every replica serves, so that the slowest
//! replica finishes as early as possible within a price budget.

pub mod catalog;
pub mod cli;
pub mod configspace;
pub mod costmodel;
pub mod error;
pub mod fixtures;
pub mod lp;
pub mod pipeline;
pub mod simulator;
pub mod solver;
pub mod workload;

pub use error::{Error, Infeasibility, Result};
