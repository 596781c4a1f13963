//! Experiment harness: config parsing, run execution, metrics persistence,
//! run comparison, parameter sweeps, and the self-test suite.

pub mod commands;
pub mod config;
pub mod outputs;
pub mod selftest;
