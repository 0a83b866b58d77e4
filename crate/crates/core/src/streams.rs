//! Odometry stream messages and the per-stream supervision lifecycle.
//!
//! ```text
//! Initializing ──► Healthy ──► Suspect ──► Failed ──► Reinitializing ──► Initializing
//!      │              ▲           │          ▲
//!      │              └───────────┘          │
//!      └─────────────────────────────────────┘ (hard failure during probation)
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::Pose;
use crate::health::{CheckId, CheckResult, Verdict};
use crate::state::CovarianceBlock;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StreamId(String);

impl StreamId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StreamId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// What a stream reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    PoseOnly,
    PoseVelocity,
    VelocityOnly,
}

impl StreamKind {
    pub fn has_pose(self) -> bool {
        !matches!(self, StreamKind::VelocityOnly)
    }

    pub fn has_velocity(self) -> bool {
        !matches!(self, StreamKind::PoseOnly)
    }
}

/// Body-frame linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyVelocity {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

/// Hardware-level statistics of the sensor feeding a stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorStats {
    /// Hz.
    pub output_rate: f64,
    /// Mean image intensity, `[0, 1]`.
    pub intensity_mean: f64,
    /// Intensity variance within the image.
    pub intensity_var: f64,
    /// Invalid scan points over total, `[0, 1]`.
    pub invalid_fraction: f64,
}

impl SensorStats {
    pub fn nominal(rate: f64) -> Self {
        Self {
            output_rate: rate,
            intensity_mean: 0.5,
            intensity_var: 0.05,
            invalid_fraction: 0.02,
        }
    }

    pub fn is_valid(&self) -> bool {
        let all_finite = [
            self.output_rate,
            self.intensity_mean,
            self.intensity_var,
            self.invalid_fraction,
        ]
        .iter()
        .all(|x| x.is_finite());
        all_finite
            && (0.0..=1.0).contains(&self.intensity_mean)
            && (0.0..=1.0).contains(&self.invalid_fraction)
    }
}

/// One stamped output of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryMessage {
    pub stream_id: StreamId,
    pub stamp: f64,
    /// Stream-local pose, relative to the origin of the current epoch.
    pub pose: Option<Pose>,
    pub velocity: Option<BodyVelocity>,
    pub covariance: Option<CovarianceBlock>,
    pub sensor_stats: Option<SensorStats>,
    /// Number of re-initializations so far.
    pub init_epoch: u32,
}

impl OdometryMessage {
    pub fn pose_only(stream_id: impl Into<StreamId>, stamp: f64, pose: Pose) -> Self {
        Self {
            stream_id: stream_id.into(),
            stamp,
            pose: Some(pose),
            velocity: None,
            covariance: None,
            sensor_stats: None,
            init_epoch: 0,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        (self.pose.is_some() || self.velocity.is_some()) && self.stamp.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Initializing,
    Healthy,
    Suspect,
    Failed,
    Reinitializing,
}

impl LifecycleState {
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::Initializing => "initializing",
            LifecycleState::Healthy => "healthy",
            LifecycleState::Suspect => "suspect",
            LifecycleState::Failed => "failed",
            LifecycleState::Reinitializing => "reinitializing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            LifecycleState::Initializing,
            LifecycleState::Healthy,
            LifecycleState::Suspect,
            LifecycleState::Failed,
            LifecycleState::Reinitializing,
        ]
        .into_iter()
        .find(|l| l.as_str() == s)
    }

    /// Streams in these states are checked every tick.
    pub fn is_supervised(self) -> bool {
        matches!(
            self,
            LifecycleState::Initializing | LifecycleState::Healthy | LifecycleState::Suspect
        )
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StreamError {
    #[error("illegal transition: cannot {action} a stream in state {from}")]
    IllegalTransition {
        from: LifecycleState,
        action: &'static str,
    },
    #[error("message from {got} delivered to stream {expected}")]
    StreamMismatch { expected: StreamId, got: StreamId },
    #[error("init epoch went backwards ({current} -> {got})")]
    EpochRegression { current: u32, got: u32 },
    #[error("re-initialization must advance the epoch by one ({current} -> {got})")]
    EpochSkip { current: u32, got: u32 },
}

/// Timing of the lifecycle, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleConfig {
    /// How long soft failures may persist before the stream is failed.
    #[serde(default = "defaults::suspect_grace")]
    pub suspect_grace: f64,
    /// Clean probation required after a re-initialization.
    #[serde(default = "defaults::recover_window")]
    pub recover_window: f64,
    /// Simulated latency between a re-init command and the restart.
    #[serde(default = "defaults::reinit_delay")]
    pub reinit_delay: f64,
}

mod defaults {
    pub fn suspect_grace() -> f64 {
        0.5
    }
    pub fn recover_window() -> f64 {
        1.0
    }
    pub fn reinit_delay() -> f64 {
        1.0
    }
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            suspect_grace: defaults::suspect_grace(),
            recover_window: defaults::recover_window(),
            reinit_delay: defaults::reinit_delay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamStatus {
    pub stream_id: StreamId,
    pub state: LifecycleState,
    pub init_epoch: u32,
    pub last_msg_stamp: f64,
    pub failure_reason: Option<CheckId>,
    pub suspect_since: Option<f64>,
    pub probation_since: Option<f64>,
    pub reinit_requested_at: Option<f64>,
}

impl StreamStatus {
    /// A stream that was initialized before supervision started.
    pub fn new_healthy(stream_id: StreamId, now: f64) -> Self {
        Self {
            stream_id,
            state: LifecycleState::Healthy,
            init_epoch: 0,
            last_msg_stamp: now,
            failure_reason: None,
            suspect_since: None,
            probation_since: None,
            reinit_requested_at: None,
        }
    }

    /// A stream that still has to pass probation.
    pub fn new_initializing(stream_id: StreamId, now: f64) -> Self {
        Self {
            state: LifecycleState::Initializing,
            ..Self::new_healthy(stream_id, now)
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.state == LifecycleState::Healthy
    }

    /// Bookkeeping for a received message: stamp and epoch.
    pub fn record_message(&self, msg: &OdometryMessage) -> Result<StreamStatus, StreamError> {
        if msg.stream_id != self.stream_id {
            return Err(StreamError::StreamMismatch {
                expected: self.stream_id.clone(),
                got: msg.stream_id.clone(),
            });
        }
        if self.state == LifecycleState::Reinitializing {
            return Err(StreamError::IllegalTransition {
                from: self.state,
                action: "ingest a message into",
            });
        }
        if msg.init_epoch < self.init_epoch {
            return Err(StreamError::EpochRegression {
                current: self.init_epoch,
                got: msg.init_epoch,
            });
        }
        let mut next = self.clone();
        if self.state != LifecycleState::Failed {
            next.init_epoch = msg.init_epoch;
            next.last_msg_stamp = msg.stamp;
        }
        Ok(next)
    }

    /// Record `msg` and apply the verdicts computed for it.
    pub fn ingest(
        &self,
        msg: &OdometryMessage,
        verdicts: &[CheckResult],
        cfg: &LifecycleConfig,
    ) -> Result<StreamStatus, StreamError> {
        Ok(self.record_message(msg)?.observe(msg.stamp, verdicts, cfg))
    }

    /// Apply verdicts evaluated at `now` without a new message (rate and vote
    /// checks run every tick). Failed and reinitializing streams are unchanged.
    pub fn observe(&self, now: f64, verdicts: &[CheckResult], cfg: &LifecycleConfig) -> StreamStatus {
        let hard = verdicts.iter().find(|v| v.verdict == Verdict::HardFail);
        let soft = verdicts.iter().find(|v| v.verdict == Verdict::SoftFail);
        let mut next = self.clone();
        match (self.state, hard, soft) {
            (LifecycleState::Failed | LifecycleState::Reinitializing, _, _) => {}
            (_, Some(h), _) => next.fail(h.check_id),
            (LifecycleState::Initializing, None, Some(_)) => next.probation_since = None,
            (LifecycleState::Initializing, None, None) => {
                let since = *next.probation_since.get_or_insert(now);
                if now - since >= cfg.recover_window - 1e-9 {
                    next.state = LifecycleState::Healthy;
                    next.probation_since = None;
                    next.failure_reason = None;
                }
            }
            (LifecycleState::Healthy, None, Some(s)) => {
                next.state = LifecycleState::Suspect;
                next.suspect_since = Some(now);
                next.failure_reason = Some(s.check_id);
            }
            (LifecycleState::Suspect, None, Some(s)) => {
                let since = self.suspect_since.unwrap_or(now);
                if now - since > cfg.suspect_grace + 1e-9 {
                    next.fail(s.check_id);
                } else {
                    next.failure_reason = Some(s.check_id);
                }
            }
            (LifecycleState::Healthy | LifecycleState::Suspect, None, None) => {
                next.state = LifecycleState::Healthy;
                next.suspect_since = None;
                next.failure_reason = None;
            }
        }
        next
    }

    fn fail(&mut self, reason: CheckId) {
        self.state = LifecycleState::Failed;
        self.failure_reason = Some(reason);
        self.suspect_since = None;
        self.probation_since = None;
    }

    /// Failed → Reinitializing.
    pub fn command_reinit(&self, now: f64) -> Result<StreamStatus, StreamError> {
        if self.state != LifecycleState::Failed {
            return Err(StreamError::IllegalTransition {
                from: self.state,
                action: "re-initialize",
            });
        }
        Ok(StreamStatus {
            state: LifecycleState::Reinitializing,
            reinit_requested_at: Some(now),
            ..self.clone()
        })
    }

    /// Reinitializing → Initializing, on the first message of the new epoch.
    pub fn complete_reinit(&self, new_epoch: u32, now: f64) -> Result<StreamStatus, StreamError> {
        if self.state != LifecycleState::Reinitializing {
            return Err(StreamError::IllegalTransition {
                from: self.state,
                action: "complete re-initialization of",
            });
        }
        if new_epoch != self.init_epoch + 1 {
            return Err(StreamError::EpochSkip {
                current: self.init_epoch,
                got: new_epoch,
            });
        }
        Ok(StreamStatus {
            state: LifecycleState::Initializing,
            init_epoch: new_epoch,
            last_msg_stamp: now,
            reinit_requested_at: None,
            probation_since: None,
            ..self.clone()
        })
    }
}
