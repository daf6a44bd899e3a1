//! Simulation of delegated, verifiable blind quantum computation with a
//! classical client: self-tested remote state preparation feeding a
//! trap-based measurement-based computation.

pub mod qstate;
pub mod rng;
pub mod selftest;
pub mod isometry;
pub mod mbqc;
pub mod transcript;
pub mod protocol;
pub mod harness;
