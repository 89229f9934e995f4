//! Scenario files and command implementations behind the `wbb` binary.

pub mod commands;
pub mod scenario;

pub use commands::{Outcome, Status};
pub use scenario::{Scenario, ScenarioError};
