//! Batch harness for the extended-object tracker: configuration presets,
//! the full filter loop, Monte-Carlo execution, and metric emission. The
//! `eot` binary wraps these; the library surface exists so integration and
//! acceptance tests can drive the same code paths directly.

pub mod commands;
pub mod config;
pub mod runner;
