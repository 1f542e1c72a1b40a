//! Experiment harness over the core library: config parsing, grid sweeps
//! with deterministic CSV output, and structural SVG charts.

pub mod config;
pub mod plot;
pub mod sweep;
