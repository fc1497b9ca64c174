//! Configuration, execution, aggregation and rendering for A2OC experiments.

pub mod aggregate;
pub mod config;
pub mod render;
pub mod runner;
