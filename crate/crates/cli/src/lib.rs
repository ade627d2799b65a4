//! Scenario runner for the starcode toolkit: configuration documents,
//! bundled parameter presets and result writers.

pub mod config;
pub mod run;

pub use config::{Arm, Scenario, Sweep};
pub use run::{run_scenario, run_sweep, RunResult, Summary};
