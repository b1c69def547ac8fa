//! Online bipartite edge coloring by dependent rounding of a per-arrival
//! fractional matching, with generators, a seeded trial harness and checks.

pub mod engine;
pub mod generators;
pub mod harness;
pub mod instance;
pub mod rounding;
