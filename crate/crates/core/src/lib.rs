//! Step-level routing between a cheap and an expensive generator.

pub mod cli;
pub mod dist;
pub mod eval;
pub mod metrics;
pub mod policy;
pub mod pomdp;
pub mod rl;
pub mod seed;
pub mod sim;
pub mod trace;
