//! Scenario runner for the two-node phonon simulator: config loading,
//! end-to-end pipelines, report and plot emission.

pub mod config;
pub mod plot;
pub mod report;
pub mod scenario;

pub use config::{load_device_config, Config};
pub use report::{emit_report, Check, RunReport};
pub use scenario::{run_scenario, run_with_config, Scenario, ScenarioSpec};
