//! Deterministic scenario simulation: reference trajectories, a kinematic
//! plant, synthetic sensors with injected failures, and the tick loop that
//! drives the full estimation and behavior pipeline.

pub mod engine;
pub mod plant;
pub mod scenario;
pub mod sensors;
pub mod trajectory;

use thiserror::Error;

pub use engine::{run_scenario, RunOptions};
pub use scenario::{ConfigError, FailureEvent, FailureMode, ScenarioConfig};
pub use trajectory::{ground_truth, TrajectorySpec};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SimError {
    #[error("t = {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
}
