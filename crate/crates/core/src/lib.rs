//! Allocation engine and simulator for skill-based crowdsourcing.
//!
//! Tasks arrive as precedence trees of multi-skill steps and are matched each
//! epoch to whichever agents happen to be available. The crate provides the
//! system model, the centralized max-weight and LP policies, the greedy
//! decentralized policies, a small-instance capacity oracle, a simulator and
//! trace tooling.

pub mod capacity;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod fixtures;
pub mod linprog;
pub mod model;
pub mod packing;
pub mod policies_central;
pub mod policies_greedy;
pub mod policy;
pub mod processes;
pub mod sim;
pub mod traceio;

pub use error::{Error, Result};
