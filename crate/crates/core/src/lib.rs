//! A desk-scale testbed for offline reinforcement learning under data
//! corruption: exact tabular/low-rank environments, seeded collection with
//! pluggable corruption operators, uncertainty-weighted pessimistic value
//! iteration, and exact evaluation of the result.
//!
//! The interchangeable pieces each sit behind a trait with a by-name
//! registry: solver variants ([`solver::algorithms`]), corruption operators
//! ([`adversary`]), and function-class backends ([`backend`]).

pub mod adversary;
pub mod backend;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod rng;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
