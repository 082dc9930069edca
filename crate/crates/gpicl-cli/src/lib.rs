//! Experiment orchestration around the gpicl library: run configuration,
//! sweeps, the state-size study, the grokking probe, and SVG reporting.

pub mod config;
pub mod datasets;
pub mod experiment;
pub mod grok;
pub mod plot;
pub mod study;
pub mod sweep;
