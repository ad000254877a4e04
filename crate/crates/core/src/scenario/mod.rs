//! Scenario configs, the end-to-end pipeline and its reports.

pub mod catalog;
pub mod config;
pub mod pipeline;
pub mod report;

pub use catalog::{builtin, builtins};
pub use config::{ScenarioConfig, SchemaError};
pub use pipeline::{run_scenario, RunOutcome};
pub use report::{Audit, RunReport, RunStatus};
