//! Scenario runner for the terrazmp planners.

pub mod run;
pub mod scenario;

pub use run::{run, Outcome, Overrides, RunError};
pub use scenario::{ConfigError, Loaded, Mode, Scenario, SCHEMA_VERSION};
