//! Multi-depot vehicle routing laboratory.
//!
//! The crate solves the capacitated multi-depot VRP with a two-stage
//! pipeline: a learned partitioner assigns customers to depot-anchored
//! tours while tours from every depot are built jointly, and an
//! independent routing stage orders the customers inside each tour
//! (exact dynamic programming, 2-opt/Or-opt local search, or a small
//! attention policy). Around the solver live the pieces a study needs:
//! reproducible instance generators, a MILP exporter for external exact
//! solvers, brute-force oracles, classical clustering baselines, a
//! REINFORCE training loop, and a benchmark harness.

pub mod baselines;
pub mod env;
pub mod features;
pub mod instancegen;
pub mod io;
pub mod milp;
pub mod nn;
pub mod partitioner;
pub mod problem;
pub mod router;
pub mod training;

pub use problem::{euclid, max_tours, solution_cost, tour_length, validate};
pub use problem::{FeasibilityReport, Instance, Point, Solution, Tour};

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("no feasible action remains: {0}")]
    Deadlock(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
