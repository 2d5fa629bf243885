//! Scenario plumbing: configuration, execution, reports and the closed-form
//! phase estimate.

pub mod config;
pub mod estimate;
pub mod report;
pub mod runner;

pub use config::{ScenarioConfig, SchemaError};
pub use estimate::{schedule_estimate, PhaseEstimate};
pub use report::{Classification, FairnessVerdict, ScenarioReport};
pub use runner::{run, RunOutput, Simulation};
