//! Confidence checks over sensor data and odometry outputs.
//!
//! Every check is a pure function of its inputs. Thresholds pass at the exact
//! boundary and fail strictly beyond it.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::state::{CovarianceBlock, CovarianceError};
use crate::streams::{OdometryMessage, SensorStats, StreamId};

/// Slack on time comparisons so that gaps landing exactly on a threshold
/// are not flipped by floating-point rounding of the tick clock.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    Rate,
    Jump,
    Divergence,
    SensorData,
    Vote,
}

impl CheckId {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckId::Rate => "rate",
            CheckId::Jump => "jump",
            CheckId::Divergence => "divergence",
            CheckId::SensorData => "sensor_data",
            CheckId::Vote => "vote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CheckId::Rate,
            CheckId::Jump,
            CheckId::Divergence,
            CheckId::SensorData,
            CheckId::Vote,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    SoftFail,
    HardFail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::SoftFail => "soft",
            Verdict::HardFail => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pass" => Some(Verdict::Pass),
            "soft" => Some(Verdict::SoftFail),
            "hard" => Some(Verdict::HardFail),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check_id: CheckId,
    pub verdict: Verdict,
    /// The measured quantity the verdict was based on.
    pub detail: f64,
}

impl CheckResult {
    pub fn new(check_id: CheckId, verdict: Verdict, detail: f64) -> Self {
        Self {
            check_id,
            verdict,
            detail,
        }
    }

    pub fn pass(check_id: CheckId, detail: f64) -> Self {
        Self::new(check_id, Verdict::Pass, detail)
    }
}

/// The most severe result; ties keep the first.
pub fn worst<'a>(results: impl IntoIterator<Item = &'a CheckResult>) -> Option<&'a CheckResult> {
    results.into_iter().fold(None, |acc: Option<&CheckResult>, r| match acc {
        Some(a) if a.verdict >= r.verdict => Some(a),
        _ => Some(r),
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HealthError {
    #[error("jump check across init epochs ({prev} -> {current}); reset the baseline instead")]
    EpochMismatch { prev: u32, current: u32 },
    #[error("jump check needs a pose in both messages")]
    MissingPose,
    #[error("jump check needs increasing stamps ({prev} -> {current})")]
    NonIncreasingStamp { prev: f64, current: f64 },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(#[from] CovarianceError),
    #[error("voting needs at least 3 streams, got {0}")]
    InsufficientStreams(usize),
}

/// Check thresholds. All are positive; `gap_factor >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Expected output rate, Hz.
    pub nominal_rate: f64,
    #[serde(default = "defaults::gap_factor")]
    pub gap_factor: f64,
    /// Platform speed limit, m/s.
    #[serde(default = "defaults::v_max")]
    pub v_max: f64,
    /// Noise allowance on top of the kinematic jump bound, meters.
    #[serde(default = "defaults::jump_margin")]
    pub jump_margin: f64,
    /// Limit on the trace of the position covariance, m².
    #[serde(default = "defaults::cov_trace_max")]
    pub cov_trace_max: f64,
    #[serde(default = "defaults::intensity_min")]
    pub intensity_min: f64,
    #[serde(default = "defaults::intensity_var_min")]
    pub intensity_var_min: f64,
    #[serde(default = "defaults::invalid_fraction_max")]
    pub invalid_fraction_max: f64,
    #[serde(default = "defaults::vote_k")]
    pub vote_k: f64,
    /// Lower bound on the MAD used by the vote, m/s.
    #[serde(default = "defaults::mad_floor")]
    pub mad_floor: f64,
}

mod defaults {
    pub fn gap_factor() -> f64 {
        3.0
    }
    pub fn v_max() -> f64 {
        3.0
    }
    pub fn jump_margin() -> f64 {
        0.1
    }
    pub fn cov_trace_max() -> f64 {
        0.5
    }
    pub fn intensity_min() -> f64 {
        0.1
    }
    pub fn intensity_var_min() -> f64 {
        0.005
    }
    pub fn invalid_fraction_max() -> f64 {
        0.5
    }
    pub fn vote_k() -> f64 {
        3.0
    }
    pub fn mad_floor() -> f64 {
        0.05
    }
}

impl CheckConfig {
    pub fn with_rate(nominal_rate: f64) -> Self {
        Self {
            nominal_rate,
            gap_factor: defaults::gap_factor(),
            v_max: defaults::v_max(),
            jump_margin: defaults::jump_margin(),
            cov_trace_max: defaults::cov_trace_max(),
            intensity_min: defaults::intensity_min(),
            intensity_var_min: defaults::intensity_var_min(),
            invalid_fraction_max: defaults::invalid_fraction_max(),
            vote_k: defaults::vote_k(),
            mad_floor: defaults::mad_floor(),
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.nominal_rate
    }

    /// Returns `(field, problem)` pairs for every violated invariant.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("nominal_rate", self.nominal_rate),
            ("gap_factor", self.gap_factor),
            ("v_max", self.v_max),
            ("jump_margin", self.jump_margin),
            ("cov_trace_max", self.cov_trace_max),
            ("intensity_min", self.intensity_min),
            ("intensity_var_min", self.intensity_var_min),
            ("invalid_fraction_max", self.invalid_fraction_max),
            ("vote_k", self.vote_k),
            ("mad_floor", self.mad_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push((name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.gap_factor < 1.0 {
            out.push(("gap_factor", format!("must be >= 1, got {}", self.gap_factor)));
        }
        for (name, v) in [
            ("intensity_min", self.intensity_min),
            ("invalid_fraction_max", self.invalid_fraction_max),
        ] {
            if v > 1.0 {
                out.push((name, format!("must be within [0, 1], got {v}")));
            }
        }
        out
    }
}

/// Per-stream overrides applied on top of the scenario-wide thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckOverrides {
    pub nominal_rate: Option<f64>,
    pub gap_factor: Option<f64>,
    pub v_max: Option<f64>,
    pub jump_margin: Option<f64>,
    pub cov_trace_max: Option<f64>,
    pub intensity_min: Option<f64>,
    pub intensity_var_min: Option<f64>,
    pub invalid_fraction_max: Option<f64>,
    pub vote_k: Option<f64>,
    pub mad_floor: Option<f64>,
}

impl CheckOverrides {
    pub fn apply(&self, base: CheckConfig) -> CheckConfig {
        CheckConfig {
            nominal_rate: self.nominal_rate.unwrap_or(base.nominal_rate),
            gap_factor: self.gap_factor.unwrap_or(base.gap_factor),
            v_max: self.v_max.unwrap_or(base.v_max),
            jump_margin: self.jump_margin.unwrap_or(base.jump_margin),
            cov_trace_max: self.cov_trace_max.unwrap_or(base.cov_trace_max),
            intensity_min: self.intensity_min.unwrap_or(base.intensity_min),
            intensity_var_min: self.intensity_var_min.unwrap_or(base.intensity_var_min),
            invalid_fraction_max: self.invalid_fraction_max.unwrap_or(base.invalid_fraction_max),
            vote_k: self.vote_k.unwrap_or(base.vote_k),
            mad_floor: self.mad_floor.unwrap_or(base.mad_floor),
        }
    }
}

/// Output-rate check catching gaps.
pub fn rate_check(last_stamp: f64, now: f64, cfg: &CheckConfig) -> CheckResult {
    let gap = (now - last_stamp).max(0.0);
    let soft_limit = cfg.gap_factor * cfg.period();
    let verdict = if gap <= soft_limit + TIME_EPS {
        Verdict::Pass
    } else if gap <= 2.0 * soft_limit + TIME_EPS {
        Verdict::SoftFail
    } else {
        Verdict::HardFail
    };
    CheckResult::new(CheckId::Rate, verdict, gap)
}

/// Position-change check between two consecutive messages of one epoch.
///
/// Fails hard when `|Δp| > v_max·Δt + jump_margin`.
pub fn jump_check(
    prev: &OdometryMessage,
    msg: &OdometryMessage,
    cfg: &CheckConfig,
) -> Result<CheckResult, HealthError> {
    if prev.init_epoch != msg.init_epoch {
        return Err(HealthError::EpochMismatch {
            prev: prev.init_epoch,
            current: msg.init_epoch,
        });
    }
    let (Some(a), Some(b)) = (prev.pose, msg.pose) else {
        return Err(HealthError::MissingPose);
    };
    let dt = msg.stamp - prev.stamp;
    if !(dt > 0.0) {
        return Err(HealthError::NonIncreasingStamp {
            prev: prev.stamp,
            current: msg.stamp,
        });
    }
    Ok(jump_bound_check(&a.t, &b.t, dt, cfg))
}

pub(crate) fn jump_bound_check(
    prev: &Vector3<f64>,
    current: &Vector3<f64>,
    dt: f64,
    cfg: &CheckConfig,
) -> CheckResult {
    let step = (current - prev).norm();
    let bound = cfg.v_max * dt + cfg.jump_margin;
    let verdict = if step > bound {
        Verdict::HardFail
    } else {
        Verdict::Pass
    };
    CheckResult::new(CheckId::Jump, verdict, step)
}

/// Trace of the position covariance against `cov_trace_max`.
pub fn divergence_check(
    cov: &CovarianceBlock,
    cfg: &CheckConfig,
) -> Result<CheckResult, HealthError> {
    cov.validate()?;
    let trace = cov.position_trace();
    let verdict = if trace > cfg.cov_trace_max {
        Verdict::HardFail
    } else {
        Verdict::Pass
    };
    Ok(CheckResult::new(CheckId::Divergence, verdict, trace))
}

/// Hardware-level data checks. Anomalies here are soft: the data predicts
/// trouble but has not corrupted the estimate yet.
pub fn sensor_data_check(stats: &SensorStats, cfg: &CheckConfig) -> CheckResult {
    let failures = [
        (stats.output_rate < cfg.nominal_rate / cfg.gap_factor, stats.output_rate),
        (stats.intensity_mean < cfg.intensity_min, stats.intensity_mean),
        (stats.intensity_var < cfg.intensity_var_min, stats.intensity_var),
        (stats.invalid_fraction > cfg.invalid_fraction_max, stats.invalid_fraction),
    ];
    match failures.iter().find(|(failed, _)| *failed) {
        Some(&(_, value)) => CheckResult::new(CheckId::SensorData, Verdict::SoftFail, value),
        None => CheckResult::pass(CheckId::SensorData, 0.0),
    }
}

/// Median of a non-empty slice; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute deviation around `center`.
pub fn mad(values: &[f64], center: f64) -> f64 {
    let dev: Vec<f64> = values.iter().map(|x| (x - center).abs()).collect();
    median(&dev)
}

/// Cross-stream outlier vote on body-frame velocities.
///
/// Per axis, a stream is flagged when its deviation from the median exceeds
/// `vote_k · max(MAD, mad_floor)`. `detail` is the largest normalized
/// deviation over the three axes.
pub fn voting_check(
    states: &[(StreamId, Vector3<f64>)],
    cfg: &CheckConfig,
) -> Result<Vec<(StreamId, CheckResult)>, HealthError> {
    if states.len() < 3 {
        return Err(HealthError::InsufficientStreams(states.len()));
    }
    let mut score = vec![0.0f64; states.len()];
    for axis in 0..3 {
        let values: Vec<f64> = states.iter().map(|(_, v)| v[axis]).collect();
        let center = median(&values);
        let scale = mad(&values, center).max(cfg.mad_floor);
        for (s, x) in score.iter_mut().zip(&values) {
            *s = s.max((x - center).abs() / scale);
        }
    }
    Ok(states
        .iter()
        .zip(score)
        .map(|((id, _), s)| {
            let verdict = if s > cfg.vote_k {
                Verdict::HardFail
            } else {
                Verdict::Pass
            };
            (id.clone(), CheckResult::new(CheckId::Vote, verdict, s))
        })
        .collect())
}
