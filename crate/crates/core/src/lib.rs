pub mod bench;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod rng;
pub mod synth;
pub mod weightfit;
