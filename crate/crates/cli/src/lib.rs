//! Configuration-driven runner for the `scramble-core` experiments.
//!
//! A TOML file names one experiment kind plus its sweep axes; [`experiments::run`]
//! executes every point and writes `results.csv` and `manifest.json` below
//! the output root. The [`acceptance`] module holds the cross-module checks
//! behind `scramble validate`.

pub mod acceptance;
pub mod analysis;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

/// Output root: `$SCRAMBLE_OUTPUT_ROOT` when set and non-empty, else `results`.
pub fn output_root() -> PathBuf {
    match std::env::var_os(config::OUTPUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(config::DEFAULT_OUTPUT_ROOT),
    }
}
