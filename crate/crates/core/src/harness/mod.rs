//! Telemetry files, metrics, and the run-to-directory entry point used by the CLI.

pub mod metrics;
pub mod telemetry;

use std::path::Path;

use thiserror::Error;

pub use metrics::{compute_metrics, DetectionLatency, MetricsReport};
pub use telemetry::{EventKind, EventRecord, RunHeader, Telemetry, TelemetryError, TickRow};

use crate::sim::{run_scenario, ConfigError, RunOptions, ScenarioConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

/// Invariants checked after a run; violations map to a distinct exit code.
pub fn invariant_violations(t: &Telemetry, m: &MetricsReport) -> Vec<String> {
    let mut out = Vec::new();
    if m.continuity_violations > 0 {
        out.push(format!("{} continuity violations", m.continuity_violations));
    }
    if m.loop_violations > 0 {
        out.push(format!("{} ticks close a loop on a Bad quality block", m.loop_violations));
    }
    if let Some(r) = t.ticks.iter().find(|r| r.est_p.iter().chain(&r.est_v).any(|x| !x.is_finite())) {
        out.push(format!("non-finite estimate at t={}", r.t));
    }
    out
}

/// Run `cfg` and write telemetry and metrics into `out`.
pub fn run_to_dir(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<(Telemetry, MetricsReport), HarnessError> {
    let t = run_scenario(cfg, opts)?;
    t.write_dir(out)?;
    let m = compute_metrics(&t);
    write_metrics(&m, out)?;
    Ok((t, m))
}

pub fn write_metrics(m: &MetricsReport, dir: &Path) -> Result<(), TelemetryError> {
    let path = dir.join(telemetry::METRICS_FILE);
    std::fs::write(&path, m.to_json()).map_err(|source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    })
}
