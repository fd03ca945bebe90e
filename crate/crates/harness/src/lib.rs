//! Benchmark harness: synthetic corpora, experiment orchestration, sweeps,
//! and report emission for the cold-start generative-recommendation suite.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;
pub mod synth;
