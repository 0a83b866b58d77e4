//! Run metrics, computed from telemetry alone.

use serde::{Deserialize, Serialize};

use crate::mobility::Behavior;
use crate::streams::StreamId;

use super::telemetry::{EventKind, Telemetry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLatency {
    pub stream: StreamId,
    pub mode: String,
    pub t_start: f64,
    /// First HardFail of the stream inside the failure window minus `t_start`.
    pub latency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    /// Fraction of ticks with position quality Good.
    pub availability: f64,
    /// Largest tick-to-tick step of the estimated position, m.
    pub max_discontinuity: f64,
    /// Over ticks with position quality Good; `None` if there are none.
    pub rmse_position: Option<f64>,
    pub detection_latency: Vec<DetectionLatency>,
    pub switch_count: u64,
    pub reinit_count: u64,
    /// Restarts seen by the mux, commanded or not.
    pub epoch_changes: u64,
    /// Landed, and every touchdown at or below the descent rate.
    pub landed_safely: bool,
    /// Fastest touchdown, m/s.
    pub touchdown_speed: Option<f64>,
    pub landing_started_at: Option<f64>,
    pub continuity_violations: u64,
    /// Ticks whose command closes a loop on a Bad quality block.
    pub loop_violations: u64,
}

/// Relative slack on the touchdown speed bound.
const LANDING_SPEED_SLACK: f64 = 1e-9;

pub fn compute_metrics(t: &Telemetry) -> MetricsReport {
    let n = t.ticks.len();
    let good: Vec<_> = t.ticks.iter().filter(|r| r.quality.p.is_good()).collect();
    let availability = if n == 0 { 0.0 } else { good.len() as f64 / n as f64 };
    let max_discontinuity = t
        .ticks
        .windows(2)
        .map(|w| distance(&w[0].est_p, &w[1].est_p))
        .fold(0.0, f64::max);
    let rmse_position = (!good.is_empty()).then(|| {
        let sum: f64 = good.iter().map(|r| distance(&r.est_p, &r.gt_p).powi(2)).sum();
        (sum / good.len() as f64).sqrt()
    });

    let detection_latency = t
        .header
        .failures
        .iter()
        .map(|f| {
            let first = t.events.iter().find(|e| {
                matches!(&e.kind, EventKind::HardFail { stream, .. } if *stream == f.stream)
                    && e.t >= f.t_start - 1e-9
                    && e.t <= f.t_end + 1e-9
            });
            DetectionLatency {
                stream: f.stream.clone(),
                mode: f.mode.name().to_string(),
                t_start: f.t_start,
                latency: first.map(|e| e.t - f.t_start),
            }
        })
        .collect();

    let count = |pred: fn(&EventKind) -> bool| t.events.iter().filter(|e| pred(&e.kind)).count() as u64;
    let switch_count = count(|k| matches!(k, EventKind::Switch { .. }));
    let reinit_count = count(|k| matches!(k, EventKind::ReinitCommand { .. }));
    let epoch_changes = count(|k| matches!(k, EventKind::ReinitComplete { .. } | EventKind::EpochAdvance { .. }));
    let continuity_violations = count(|k| matches!(k, EventKind::ContinuityViolation { .. }));

    let touchdown_speed = t
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Touchdown { speed } => Some(speed),
            _ => None,
        })
        .reduce(f64::max);
    let landed = t.ticks.last().is_some_and(|r| r.behavior == Behavior::Landed);
    let limit = t.header.descent_rate * (1.0 + LANDING_SPEED_SLACK);
    let landed_safely = landed && touchdown_speed.is_some_and(|s| s <= limit);
    let landing_started_at = t
        .ticks
        .iter()
        .find(|r| r.behavior == Behavior::AttitudeLand)
        .map(|r| r.t);
    let loop_violations = t.ticks.iter().filter(|r| !r.cmd_loops.respects(&r.quality)).count() as u64;

    MetricsReport {
        scenario: t.header.scenario.clone(),
        seed: t.header.seed,
        ticks: n as u64,
        availability,
        max_discontinuity,
        rmse_position,
        detection_latency,
        switch_count,
        reinit_count,
        epoch_changes,
        landed_safely,
        touchdown_speed,
        landing_started_at,
        continuity_violations,
        loop_violations,
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}
