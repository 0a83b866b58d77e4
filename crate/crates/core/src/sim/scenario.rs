//! Scenario files: schema, loading and field-level validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{InitialUncertainty, ProcessNoise};
use crate::health::{CheckConfig, CheckOverrides};
use crate::mobility::BehaviorConfig;
use crate::mux::Ranking;
use crate::state::CovarianceBlock;
use crate::streams::{LifecycleConfig, StreamId, StreamKind};

use super::trajectory::TrajectorySpec;

/// Failure targets besides odometry streams.
pub const IMU_TARGET: &str = "imu";
pub const RANGER_TARGET: &str = "ranger";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{}", format_problems(.problems))]
    Invalid { problems: Vec<(String, String)> },
    #[error("unknown scenario '{0}' (not a file and not a bundled scenario)")]
    UnknownScenario(String),
}

fn format_problems(problems: &[(String, String)]) -> String {
    problems
        .iter()
        .map(|(p, m)| format!("{p}: {m}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ConfigError {
    /// Path of the first offending field, if any.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { path, .. } => Some(path),
            ConfigError::Invalid { problems } => problems.first().map(|(p, _)| p.as_str()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    /// Speed bound, m/s.
    #[serde(default = "d::v_max")]
    pub v_max: f64,
    /// Acceleration command saturation, m/s².
    #[serde(default = "d::a_max")]
    pub a_max: f64,
    /// Linear drag, 1/s.
    #[serde(default = "d::drag")]
    pub drag: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            v_max: d::v_max(),
            a_max: d::a_max(),
            drag: d::drag(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuConfig {
    /// Hz; an integer multiple of the tick rate.
    #[serde(default = "d::imu_rate")]
    pub rate: f64,
    /// rad/s/√Hz.
    #[serde(default = "d::gyro_noise")]
    pub gyro_noise: f64,
    /// m/s²/√Hz.
    #[serde(default = "d::accel_noise")]
    pub accel_noise: f64,
    #[serde(default)]
    pub gyro_bias: [f64; 3],
    #[serde(default)]
    pub accel_bias: [f64; 3],
    /// Seconds without samples before the IMU counts as failed.
    #[serde(default = "d::imu_timeout")]
    pub timeout: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            rate: d::imu_rate(),
            gyro_noise: d::gyro_noise(),
            accel_noise: d::accel_noise(),
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            timeout: d::imu_timeout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangerSimConfig {
    #[serde(default = "d::ranger_rate")]
    pub rate: f64,
    /// Meters.
    #[serde(default = "d::ranger_noise")]
    pub noise_std: f64,
    /// Meters; no return beyond.
    #[serde(default = "d::ranger_max_range")]
    pub max_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamNoise {
    /// Per-axis position noise, m.
    #[serde(default = "d::position_noise")]
    pub position: f64,
    /// Per-axis attitude noise, rad.
    #[serde(default = "d::attitude_noise")]
    pub attitude: f64,
    /// Per-axis body velocity noise, m/s.
    #[serde(default = "d::velocity_noise")]
    pub velocity: f64,
}

impl Default for StreamNoise {
    fn default() -> Self {
        Self {
            position: d::position_noise(),
            attitude: d::attitude_noise(),
            velocity: d::velocity_noise(),
        }
    }
}

impl StreamNoise {
    pub fn covariance(&self) -> CovarianceBlock {
        CovarianceBlock::isotropic(
            self.position * self.position,
            self.velocity * self.velocity,
            self.attitude * self.attitude,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub id: StreamId,
    pub kind: StreamKind,
    /// Output rate, Hz.
    pub rate: f64,
    #[serde(default)]
    pub noise: StreamNoise,
    #[serde(default)]
    pub checks: CheckOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorOverrides {
    pub output_rate: Option<f64>,
    pub intensity_mean: Option<f64>,
    pub intensity_var: Option<f64>,
    pub invalid_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FailureMode {
    /// No output while active.
    Gap,
    /// Constant displacement of the reported position, meters.
    Jump { offset: [f64; 3] },
    /// Growth of the reported position covariance trace, m²/s.
    Divergence { rate: f64 },
    /// Velocity bias in the stream frame, m/s; position drifts with it.
    Drift { bias: [f64; 3] },
    /// Overrides of the hardware statistics.
    SensorDegrade { stats: SensorOverrides },
}

impl FailureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FailureMode::Gap => "gap",
            FailureMode::Jump { .. } => "jump",
            FailureMode::Divergence { .. } => "divergence",
            FailureMode::Drift { .. } => "drift",
            FailureMode::SensorDegrade { .. } => "sensor_degrade",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEvent {
    /// A stream id, `imu` or `ranger`.
    pub stream: StreamId,
    pub t_start: f64,
    pub t_end: f64,
    pub mode: FailureMode,
}

impl FailureEvent {
    pub fn covers(&self, t: f64) -> bool {
        t >= self.t_start - 1e-9 && t < self.t_end - 1e-9
    }
}

/// Operator-triggered re-initializations at `start + k·period`, `k ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledReinit {
    pub stream: StreamId,
    pub period: f64,
    #[serde(default)]
    pub start: Option<f64>,
}

impl ScheduledReinit {
    pub fn first(&self) -> f64 {
        self.start.unwrap_or(self.period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub process_noise: ProcessNoise,
    #[serde(default)]
    pub initial: InitialUncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuxOptions {
    /// Let a recovered higher-ranked stream replace a healthy channel.
    #[serde(default)]
    pub preempt_on_recovery: bool,
    /// Cross-stream velocity vote; needs three or more streams.
    #[serde(default)]
    pub voting: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    /// Start on the ground below the first reference point.
    #[serde(default)]
    pub takeoff: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    #[serde(default = "d::tick_rate")]
    pub tick_rate: f64,
    /// Mission reference path; its duration is the scenario duration.
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub platform: PlatformConfig,
    #[serde(default)]
    pub imu: ImuConfig,
    #[serde(default)]
    pub ranger: Option<RangerSimConfig>,
    pub streams: Vec<StreamSpec>,
    pub ranking: Ranking,
    /// Scenario-wide threshold overrides; per-stream overrides win.
    #[serde(default)]
    pub checks: CheckOverrides,
    #[serde(default)]
    pub lifecycle: LifecycleConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub behavior: BehaviorConfig,
    #[serde(default)]
    pub mux: MuxOptions,
    #[serde(default)]
    pub failures: Vec<FailureEvent>,
    #[serde(default)]
    pub reinit_schedule: Vec<ScheduledReinit>,
}

mod d {
    pub fn tick_rate() -> f64 {
        100.0
    }
    pub fn v_max() -> f64 {
        3.0
    }
    pub fn a_max() -> f64 {
        4.0
    }
    pub fn drag() -> f64 {
        0.5
    }
    pub fn imu_rate() -> f64 {
        200.0
    }
    pub fn gyro_noise() -> f64 {
        0.001
    }
    pub fn accel_noise() -> f64 {
        0.01
    }
    pub fn imu_timeout() -> f64 {
        0.05
    }
    pub fn ranger_rate() -> f64 {
        20.0
    }
    pub fn ranger_noise() -> f64 {
        0.02
    }
    pub fn ranger_max_range() -> f64 {
        10.0
    }
    pub fn position_noise() -> f64 {
        0.01
    }
    pub fn attitude_noise() -> f64 {
        0.002
    }
    pub fn velocity_noise() -> f64 {
        0.02
    }
}

pub const BUNDLED: [(&str, &str); 5] = [
    ("hover", include_str!("../../scenarios/hover.json")),
    ("fig7_reinit", include_str!("../../scenarios/fig7_reinit.json")),
    ("fig8_dual_vio", include_str!("../../scenarios/fig8_dual_vio.json")),
    ("all_fail_land", include_str!("../../scenarios/all_fail_land.json")),
    ("dust_tunnel", include_str!("../../scenarios/dust_tunnel.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| ScenarioConfig::from_json(src).expect("bundled scenarios parse"))
}

impl ScenarioConfig {
    /// Parse without semantic validation.
    pub fn from_json(src: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(src);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Load a file path, falling back to a bundled scenario name; validated.
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        let path = Path::new(spec);
        let cfg = if path.exists() {
            let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: spec.to_string(),
                source,
            })?;
            Self::from_json(&src)?
        } else {
            bundled(spec).ok_or_else(|| ConfigError::UnknownScenario(spec.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.duration()
    }

    pub fn tick_count(&self) -> u64 {
        (self.duration() * self.tick_rate).round() as u64
    }

    pub fn imu_per_tick(&self) -> u64 {
        (self.imu.rate / self.tick_rate).round() as u64
    }

    /// Effective thresholds of one stream.
    pub fn check_config(&self, stream: &StreamSpec) -> CheckConfig {
        let mut base = CheckConfig::with_rate(stream.rate);
        base.v_max = self.platform.v_max;
        stream.checks.apply(self.checks.apply(base))
    }

    pub fn stream(&self, id: &StreamId) -> Option<&StreamSpec> {
        self.streams.iter().find(|s| &s.id == id)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { problems })
        }
    }

    /// Every semantic problem as `(field path, message)`.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |path: String, msg: String| out.push((path, msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;

        if self.name.is_empty() || !self.name.chars().all(is_id_char) {
            push("name".into(), "must be non-empty [A-Za-z0-9_]".into());
        }
        if !positive(self.tick_rate) {
            push("tick_rate".into(), format!("must be positive, got {}", self.tick_rate));
        }
        for (field, msg) in self.trajectory.problems() {
            push(format!("trajectory.{field}"), msg);
        }
        if self.trajectory.max_speed() > self.platform.v_max {
            push(
                "trajectory".into(),
                format!(
                    "reference speed {} exceeds platform.v_max {}",
                    self.trajectory.max_speed(),
                    self.platform.v_max
                ),
            );
        }
        for (field, v) in [
            ("v_max", self.platform.v_max),
            ("a_max", self.platform.a_max),
            ("drag", self.platform.drag),
        ] {
            if !positive(v) {
                push(format!("platform.{field}"), format!("must be positive, got {v}"));
            }
        }

        if !positive(self.imu.rate) {
            push("imu.rate".into(), format!("must be positive, got {}", self.imu.rate));
        } else if positive(self.tick_rate) {
            let ratio = self.imu.rate / self.tick_rate;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
                push("imu.rate".into(), "must be an integer multiple of tick_rate".into());
            }
        }
        for (field, v) in [
            ("gyro_noise", self.imu.gyro_noise),
            ("accel_noise", self.imu.accel_noise),
        ] {
            if !non_negative(v) {
                push(format!("imu.{field}"), format!("must be non-negative, got {v}"));
            }
        }
        if !positive(self.imu.timeout) {
            push("imu.timeout".into(), "must be positive".into());
        }
        if let Some(r) = &self.ranger {
            if !positive(r.rate) {
                push("ranger.rate".into(), "must be positive".into());
            }
            if !non_negative(r.noise_std) {
                push("ranger.noise_std".into(), "must be non-negative".into());
            }
            if !positive(r.max_range) {
                push("ranger.max_range".into(), "must be positive".into());
            }
        }

        if self.streams.is_empty() {
            push("streams".into(), "at least one stream is required".into());
        }
        for (i, s) in self.streams.iter().enumerate() {
            let id = s.id.as_str();
            if id.is_empty() || !id.chars().all(is_id_char) {
                push(format!("streams[{i}].id"), "must be non-empty [A-Za-z0-9_]".into());
            }
            if id == IMU_TARGET || id == RANGER_TARGET {
                push(format!("streams[{i}].id"), format!("'{id}' is reserved"));
            }
            if self.streams[..i].iter().any(|o| o.id == s.id) {
                push(format!("streams[{i}].id"), format!("duplicate stream id '{id}'"));
            }
            if !positive(s.rate) {
                push(format!("streams[{i}].rate"), format!("must be positive, got {}", s.rate));
            }
            for (field, v) in [
                ("position", s.noise.position),
                ("attitude", s.noise.attitude),
                ("velocity", s.noise.velocity),
            ] {
                if !non_negative(v) {
                    push(format!("streams[{i}].noise.{field}"), "must be non-negative".into());
                }
            }
            if positive(s.rate) {
                for (field, msg) in self.check_config(s).problems() {
                    push(format!("streams[{i}].checks.{field}"), msg);
                }
            }
        }
        if let Err(e) = self.ranking.validate(self.streams.iter().map(|s| &s.id)) {
            push("ranking".into(), e.to_string());
        }
        if self.mux.voting && self.streams.len() < 3 {
            push("mux.voting".into(), "voting needs at least three streams".into());
        }

        for (field, v) in [
            ("suspect_grace", self.lifecycle.suspect_grace),
            ("recover_window", self.lifecycle.recover_window),
            ("reinit_delay", self.lifecycle.reinit_delay),
        ] {
            if !non_negative(v) {
                push(format!("lifecycle.{field}"), "must be non-negative".into());
            }
        }
        let noise = &self.filter.process_noise;
        for (field, v) in [
            ("accel_noise", noise.accel_noise),
            ("gyro_noise", noise.gyro_noise),
            ("accel_bias_walk", noise.accel_bias_walk),
            ("gyro_bias_walk", noise.gyro_bias_walk),
        ] {
            if !non_negative(v) {
                push(format!("filter.process_noise.{field}"), "must be non-negative".into());
            }
        }
        let init = &self.filter.initial;
        for (field, v) in [
            ("position", init.position),
            ("velocity", init.velocity),
            ("attitude", init.attitude),
            ("gyro_bias", init.gyro_bias),
            ("accel_bias", init.accel_bias),
        ] {
            if !positive(v) {
                push(format!("filter.initial.{field}"), "must be positive".into());
            }
        }
        for (field, msg) in self.behavior.problems() {
            push(format!("behavior.{field}"), msg);
        }

        let duration = self.duration();
        for (i, f) in self.failures.iter().enumerate() {
            let target = f.stream.as_str();
            let stream = self.stream(&f.stream);
            let special = target == IMU_TARGET || target == RANGER_TARGET;
            if stream.is_none() && !special {
                push(format!("failures[{i}].stream"), format!("unknown stream '{target}'"));
            }
            if special && f.mode != FailureMode::Gap {
                push(format!("failures[{i}].mode"), format!("'{target}' supports only gap failures"));
            }
            if target == RANGER_TARGET && self.ranger.is_none() {
                push(format!("failures[{i}].stream"), "no ranger configured".into());
            }
            if !(f.t_start >= 0.0 && f.t_start < f.t_end && f.t_end <= duration + 1e-9) {
                push(
                    format!("failures[{i}].t_end"),
                    format!("need 0 <= t_start < t_end <= {duration}, got [{}, {}]", f.t_start, f.t_end),
                );
            }
            match (&f.mode, stream) {
                (FailureMode::Jump { .. }, Some(s)) if !s.kind.has_pose() => {
                    push(format!("failures[{i}].mode"), "jump needs a pose stream".into());
                }
                (FailureMode::Divergence { rate }, _) if !positive(*rate) => {
                    push(format!("failures[{i}].mode.rate"), "must be positive".into());
                }
                (FailureMode::SensorDegrade { stats }, _) => {
                    for (field, v) in [
                        ("output_rate", stats.output_rate),
                        ("intensity_mean", stats.intensity_mean),
                        ("intensity_var", stats.intensity_var),
                        ("invalid_fraction", stats.invalid_fraction),
                    ] {
                        if v.is_some_and(|v| !non_negative(v)) {
                            push(format!("failures[{i}].mode.stats.{field}"), "must be non-negative".into());
                        }
                    }
                }
                _ => {}
            }
        }
        for (i, r) in self.reinit_schedule.iter().enumerate() {
            if self.stream(&r.stream).is_none() {
                push(format!("reinit_schedule[{i}].stream"), format!("unknown stream '{}'", r.stream));
            }
            if !positive(r.period) {
                push(format!("reinit_schedule[{i}].period"), "must be positive".into());
            }
            if r.start.is_some_and(|s| !non_negative(s)) {
                push(format!("reinit_schedule[{i}].start"), "must be non-negative".into());
            }
        }
        out
    }
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_validate() {
        for name in bundled_names() {
            let cfg = bundled(name).unwrap();
            assert_eq!(cfg.name, name);
            assert!(cfg.problems().is_empty(), "{name}: {:?}", cfg.problems());
        }
    }

    #[test]
    fn parse_errors_carry_field_paths() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED[0].1).unwrap();
        v["streams"][0]["rate"] = serde_json::json!("fast");
        let err = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.field_path(), Some("streams[0].rate"));

        let mut v: serde_json::Value = serde_json::from_str(BUNDLED[0].1).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        let err = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(BUNDLED[0].1).unwrap();
        v["imu"]["rat"] = serde_json::json!(1);
        let err = ScenarioConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.field_path(), Some("imu.rat"));
    }

    #[test]
    fn semantic_errors_carry_field_paths() {
        let mut cfg = bundled("fig8_dual_vio").unwrap();
        cfg.streams[1].rate = -1.0;
        cfg.failures[0].t_end = 1e6;
        cfg.ranking.0.pop();
        let paths: Vec<String> = cfg.problems().into_iter().map(|(p, _)| p).collect();
        assert!(paths.contains(&"streams[1].rate".to_string()), "{paths:?}");
        assert!(paths.contains(&"failures[0].t_end".to_string()), "{paths:?}");
        assert!(paths.contains(&"ranking".to_string()), "{paths:?}");
        assert!(cfg.validate().unwrap_err().field_path().is_some());
    }

    #[test]
    fn imu_rate_must_divide_into_ticks() {
        let mut cfg = bundled("hover").unwrap();
        cfg.imu.rate = 150.0;
        let paths: Vec<String> = cfg.problems().into_iter().map(|(p, _)| p).collect();
        assert_eq!(paths, ["imu.rate"]);
    }

    #[test]
    fn overrides_layer_per_stream() {
        let mut cfg = bundled("hover").unwrap();
        cfg.checks.gap_factor = Some(4.0);
        cfg.streams[0].checks.gap_factor = Some(5.0);
        let s = cfg.streams[0].clone();
        let c = cfg.check_config(&s);
        assert_eq!(c.gap_factor, 5.0);
        assert_eq!(c.nominal_rate, s.rate);
        assert_eq!(c.v_max, cfg.platform.v_max);
    }

    #[test]
    fn unknown_scenario_is_reported() {
        assert!(matches!(
            ScenarioConfig::load("definitely_not_a_scenario"),
            Err(ConfigError::UnknownScenario(_))
        ));
    }

    #[test]
    fn failure_window_is_half_open() {
        let f = FailureEvent {
            stream: "a".into(),
            t_start: 1.0,
            t_end: 2.0,
            mode: FailureMode::Gap,
        };
        assert!(!f.covers(0.99));
        assert!(f.covers(1.0));
        assert!(f.covers(1.99));
        assert!(!f.covers(2.0));
    }
}
