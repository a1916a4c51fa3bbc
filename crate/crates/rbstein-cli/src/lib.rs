//! Benchmark harness around `rbstein-core`: trajectory generation, filter
//! drivers, the Monte Carlo and network-training studies, empirical checks
//! of the contraction results, CSV persistence, and SVG figures.
//!
//! Everything callable from the `rbstein` binary lives here so the
//! integration suite can exercise the same code paths in-process.

pub mod config;
pub mod csvio;
pub mod driver;
pub mod plot;
pub mod studies;
pub mod theorycmd;
