//! Evaluation and tooling: metrics, the command-line front end, memory
//! benchmarking, and attention visualisation.

pub mod bench;
pub mod cli;
pub mod metrics;
pub mod viz;
