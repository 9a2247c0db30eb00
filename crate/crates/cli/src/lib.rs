//! Command-line driver for separated-surrogate experiments.

pub mod app;
pub mod config;
pub mod dataset;
pub mod experiment;
