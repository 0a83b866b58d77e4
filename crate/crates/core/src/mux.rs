//! Resiliency logic: supervision, ranked channel selection and continuity.
//!
//! Every odometry stream feeds its own IMU-aided filter. Per tick the mux
//! runs the confidence checks, advances the stream lifecycles, commands
//! re-initialization of streams that just failed, keeps or switches the
//! output channel and publishes the channel's fused state with its quality
//! bits. Stream-local poses reach the world frame through per-epoch anchors;
//! a switch or an epoch change re-anchors the incoming stream onto the last
//! published output so the published trajectory never jumps.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{height_from_range, FilterState, ImuSample, InitialUncertainty, ProcessNoise};
use crate::geometry::Pose;
use crate::health::{
    divergence_check, jump_check, rate_check, sensor_data_check, voting_check, CheckConfig, CheckId, CheckResult,
    Verdict,
};
use crate::mobility::{map_quality_to_service, MobilityService};
use crate::state::{CovarianceBlock, Quality, RobotState, StateQuality};
use crate::streams::{LifecycleConfig, LifecycleState, OdometryMessage, StreamId, StreamKind, StreamStatus};

pub const CONTINUITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MuxError {
    #[error("no anchor for stream {stream} epoch {epoch}")]
    MissingAnchor { stream: StreamId, epoch: u32 },
    #[error("ranking must not be empty")]
    EmptyRanking,
    #[error("stream {0} appears twice in the ranking")]
    DuplicateRank(StreamId),
    #[error("stream {0} is configured but not ranked")]
    Unranked(StreamId),
    #[error("stream {0} is ranked but not configured")]
    UnknownRanked(StreamId),
}

/// Stream ids, highest priority first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking(pub Vec<StreamId>);

impl Ranking {
    pub fn validate<'a>(&self, configured: impl IntoIterator<Item = &'a StreamId>) -> Result<(), MuxError> {
        if self.0.is_empty() {
            return Err(MuxError::EmptyRanking);
        }
        for (i, id) in self.0.iter().enumerate() {
            if self.0[..i].contains(id) {
                return Err(MuxError::DuplicateRank(id.clone()));
            }
        }
        let configured: Vec<&StreamId> = configured.into_iter().collect();
        if let Some(id) = configured.iter().find(|id| !self.0.contains(id)) {
            return Err(MuxError::Unranked((*id).clone()));
        }
        if let Some(id) = self.0.iter().find(|id| !configured.contains(id)) {
            return Err(MuxError::UnknownRanked(id.clone()));
        }
        Ok(())
    }

    pub fn position(&self, id: &StreamId) -> Option<usize> {
        self.0.iter().position(|x| x == id)
    }
}

/// World-from-stream-origin pose per (stream, init epoch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorTable {
    anchors: BTreeMap<(StreamId, u32), Pose>,
}

impl AnchorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, stream: &StreamId, epoch: u32) -> Option<&Pose> {
        self.anchors.get(&(stream.clone(), epoch))
    }

    pub fn insert(&mut self, stream: StreamId, epoch: u32, anchor: Pose) {
        self.anchors.insert((stream, epoch), anchor);
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Keep the current channel while it is Healthy; otherwise the best-ranked
/// Healthy stream, if any.
pub fn select_channel(
    statuses: &BTreeMap<StreamId, StreamStatus>,
    ranking: &Ranking,
    current: Option<&StreamId>,
) -> Option<StreamId> {
    let healthy = |id: &StreamId| statuses.get(id).is_some_and(StreamStatus::is_healthy);
    if let Some(c) = current.filter(|c| healthy(c)) {
        return Some(c.clone());
    }
    ranking.0.iter().find(|id| healthy(id)).cloned()
}

/// Like [`select_channel`] but a recovered higher-ranked stream takes over.
pub fn select_channel_preemptive(
    statuses: &BTreeMap<StreamId, StreamStatus>,
    ranking: &Ranking,
) -> Option<StreamId> {
    select_channel(statuses, ranking, None)
}

/// World pose of a stream-local message.
pub fn apply_continuity(anchors: &AnchorTable, msg: &OdometryMessage) -> Result<Pose, MuxError> {
    let anchor = anchors
        .get(&msg.stream_id, msg.init_epoch)
        .ok_or_else(|| MuxError::MissingAnchor {
            stream: msg.stream_id.clone(),
            epoch: msg.init_epoch,
        })?;
    let local = msg.pose.unwrap_or_default();
    Ok(anchor.compose(&local))
}

/// Anchor that maps `first_new_pose` exactly onto `last_output`.
pub fn rebase_anchor(
    anchors: &AnchorTable,
    stream: &StreamId,
    epoch: u32,
    last_output: &Pose,
    first_new_pose: &Pose,
) -> AnchorTable {
    let mut next = anchors.clone();
    next.insert(stream.clone(), epoch, last_output.compose(&first_new_pose.inverse()));
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangerConfig {
    /// Hz.
    pub rate: f64,
    /// Range variance, m².
    pub variance: f64,
    /// The ranger is unhealthy after this many missed periods.
    #[serde(default = "default_ranger_timeout_factor")]
    pub timeout_factor: f64,
}

fn default_ranger_timeout_factor() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuxStreamConfig {
    pub id: StreamId,
    pub kind: StreamKind,
    pub checks: CheckConfig,
    /// Used when a message carries no covariance.
    pub fallback_cov: CovarianceBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuxConfig {
    pub tick_rate: f64,
    pub streams: Vec<MuxStreamConfig>,
    pub ranking: Ranking,
    pub lifecycle: LifecycleConfig,
    pub noise: ProcessNoise,
    pub initial_uncertainty: InitialUncertainty,
    /// IMU is declared failed after this long without samples, seconds.
    pub imu_timeout: f64,
    pub ranger: Option<RangerConfig>,
    /// Platform speed bound used by the continuity invariant, m/s.
    pub v_max: f64,
    pub preempt_on_recovery: bool,
    pub voting: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum MuxInput {
    Imu(ImuSample),
    Range { stamp: f64, range: Option<f64> },
    Odometry(OdometryMessage),
}

impl MuxInput {
    pub fn stamp(&self) -> f64 {
        match self {
            MuxInput::Imu(s) => s.stamp,
            MuxInput::Range { stamp, .. } => *stamp,
            MuxInput::Odometry(m) => m.stamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MuxEvent {
    Switch {
        from: Option<StreamId>,
        to: Option<StreamId>,
    },
    StateChange {
        stream: StreamId,
        from: LifecycleState,
        to: LifecycleState,
        reason: Option<CheckId>,
    },
    HardFail {
        stream: StreamId,
        check: CheckId,
        detail: f64,
    },
    ReinitCommand {
        stream: StreamId,
    },
    ReinitComplete {
        stream: StreamId,
        epoch: u32,
    },
    EpochAdvance {
        stream: StreamId,
        epoch: u32,
    },
    ContinuityViolation {
        step: f64,
        bound: f64,
    },
}

/// Per-stream diagnostics of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamTick {
    pub id: StreamId,
    pub state: LifecycleState,
    pub init_epoch: u32,
    /// Latest raw stream-local pose, as reported.
    pub raw_pose: Option<Pose>,
    /// Worst verdict of the tick and the check that produced it.
    pub verdict: Verdict,
    pub failing_check: Option<CheckId>,
    /// Position covariance trace of the stream's filter, m².
    pub filter_cov_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuxOutput {
    pub stamp: f64,
    pub state: RobotState,
    pub quality: StateQuality,
    pub channel: Option<StreamId>,
    pub reinit_commands: Vec<StreamId>,
    pub service_hint: MobilityService,
    pub position_cov_trace: f64,
    pub streams: Vec<StreamTick>,
    pub events: Vec<MuxEvent>,
}

struct Slot {
    cfg: MuxStreamConfig,
    status: StreamStatus,
    filter: FilterState,
    /// Jump-check baseline: previous message of the current epoch.
    last_msg: Option<OdometryMessage>,
    last_velocity: Option<Vector3<f64>>,
    /// Verdicts produced during the current tick.
    tick_verdicts: Vec<CheckResult>,
    /// Message verdicts of the latest message; they hold until the next one.
    msg_verdicts: Vec<CheckResult>,
    msg_this_tick: bool,
}

impl Slot {
    /// Everything the lifecycle sees this tick.
    fn effective_verdicts(&self) -> Vec<CheckResult> {
        let mut all = self.tick_verdicts.clone();
        if !self.msg_this_tick {
            all.extend(self.msg_verdicts.iter().copied());
        }
        all
    }
}

pub struct Mux {
    cfg: MuxConfig,
    slots: Vec<Slot>,
    anchors: AnchorTable,
    channel: Option<StreamId>,
    dead_reckoning: FilterState,
    last_imu: Option<ImuSample>,
    last_range: Option<(f64, f64)>,
    last_output: Option<(f64, Vector3<f64>)>,
    continuity_violations: u64,
}

impl Mux {
    /// All streams start Healthy in epoch 0, anchored at `start`.
    pub fn new(cfg: MuxConfig, start: Pose, start_velocity: Vector3<f64>, stamp: f64) -> Result<Self, MuxError> {
        cfg.ranking.validate(cfg.streams.iter().map(|s| &s.id))?;
        let seed = FilterState::new(stamp, start, start_velocity, &cfg.initial_uncertainty);
        let mut anchors = AnchorTable::new();
        let mut slots = Vec::with_capacity(cfg.streams.len());
        for s in &cfg.streams {
            let mut filter = seed.clone();
            filter.reset_from(start);
            anchors.insert(s.id.clone(), 0, start);
            slots.push(Slot {
                cfg: s.clone(),
                status: StreamStatus::new_healthy(s.id.clone(), stamp),
                filter,
                last_msg: None,
                last_velocity: None,
                tick_verdicts: Vec::new(),
                msg_verdicts: Vec::new(),
                msg_this_tick: false,
            });
        }
        let mut mux = Self {
            channel: None,
            dead_reckoning: seed,
            anchors,
            slots,
            last_imu: None,
            last_range: None,
            last_output: None,
            continuity_violations: 0,
            cfg,
        };
        mux.channel = select_channel(&mux.statuses(), &mux.cfg.ranking, None);
        Ok(mux)
    }

    pub fn config(&self) -> &MuxConfig {
        &self.cfg
    }

    pub fn channel(&self) -> Option<&StreamId> {
        self.channel.as_ref()
    }

    pub fn anchors(&self) -> &AnchorTable {
        &self.anchors
    }

    pub fn continuity_violations(&self) -> u64 {
        self.continuity_violations
    }

    pub fn statuses(&self) -> BTreeMap<StreamId, StreamStatus> {
        self.slots
            .iter()
            .map(|s| (s.cfg.id.clone(), s.status.clone()))
            .collect()
    }

    pub fn status(&self, id: &StreamId) -> Option<&StreamStatus> {
        self.slots.iter().find(|s| &s.cfg.id == id).map(|s| &s.status)
    }

    pub fn filter(&self, id: &StreamId) -> Option<&FilterState> {
        self.slots.iter().find(|s| &s.cfg.id == id).map(|s| &s.filter)
    }

    /// Process every input stamped in `(previous tick, now]` and publish.
    pub fn step(&mut self, now: f64, inputs: &[MuxInput]) -> MuxOutput {
        let mut events = Vec::new();
        for slot in &mut self.slots {
            slot.tick_verdicts.clear();
            slot.msg_this_tick = false;
        }
        let mut ordered: Vec<&MuxInput> = inputs.iter().collect();
        ordered.sort_by(|a, b| a.stamp().total_cmp(&b.stamp()).then(input_rank(a).cmp(&input_rank(b))));
        for input in ordered {
            match input {
                MuxInput::Imu(sample) => self.on_imu(sample),
                MuxInput::Range { stamp, range } => self.on_range(*stamp, *range),
                MuxInput::Odometry(msg) => self.on_message(msg, &mut events),
            }
        }

        let before: Vec<LifecycleState> = self.slots.iter().map(|s| s.status.state).collect();
        self.tick_checks(now);
        let lifecycle = self.cfg.lifecycle;
        for slot in &mut self.slots {
            slot.status = slot.status.observe(now, &slot.effective_verdicts(), &lifecycle);
            for r in slot.tick_verdicts.iter().filter(|r| r.verdict == Verdict::HardFail) {
                events.push(MuxEvent::HardFail {
                    stream: slot.cfg.id.clone(),
                    check: r.check_id,
                    detail: r.detail,
                });
            }
        }

        let mut reinit_commands = Vec::new();
        for (slot, prev) in self.slots.iter_mut().zip(before) {
            if slot.status.state != prev {
                events.push(MuxEvent::StateChange {
                    stream: slot.cfg.id.clone(),
                    from: prev,
                    to: slot.status.state,
                    reason: slot.status.failure_reason,
                });
            }
            if slot.status.state == LifecycleState::Failed && prev != LifecycleState::Failed {
                if let Ok(next) = slot.status.command_reinit(now) {
                    info!("t={now:.3} {} failed ({:?}); re-init commanded", slot.cfg.id, slot.status.failure_reason);
                    slot.status = next;
                    reinit_commands.push(slot.cfg.id.clone());
                    events.push(MuxEvent::ReinitCommand {
                        stream: slot.cfg.id.clone(),
                    });
                }
            }
        }

        let statuses = self.statuses();
        let selected = if self.cfg.preempt_on_recovery {
            select_channel_preemptive(&statuses, &self.cfg.ranking)
        } else {
            select_channel(&statuses, &self.cfg.ranking, self.channel.as_ref())
        };
        if selected != self.channel {
            info!("t={now:.3} channel {:?} -> {:?}", self.channel, selected);
            if let Some(id) = &selected {
                let target = self.dead_reckoning_or_channel_pose();
                let slot = self.slot_mut(id);
                let delta = target.compose(&slot.filter.pose().inverse());
                slot.filter.reframe(&delta);
                let (sid, epoch, anchor) = (slot.cfg.id.clone(), slot.status.init_epoch, slot.filter.anchor);
                if slot.cfg.kind.has_pose() {
                    self.anchors.insert(sid, epoch, anchor);
                }
            }
            events.push(MuxEvent::Switch {
                from: self.channel.clone(),
                to: selected.clone(),
            });
            self.channel = selected;
        }

        let imu_ok = self
            .last_imu
            .is_some_and(|s| now - s.stamp <= self.cfg.imu_timeout + 1e-9);
        let ranger_ok = self.ranger_ok(now);
        let (state, quality, cov_trace) = match self.channel.clone() {
            Some(id) => {
                let slot = self.slot(&id);
                let filter = slot.filter.clone();
                let kind = slot.cfg.kind;
                self.dead_reckoning = filter.clone();
                let mut q = StateQuality::ALL_GOOD;
                if !kind.has_pose() {
                    q.p = Quality::Bad;
                    q.gz = Quality::from_good(ranger_ok);
                }
                (filter.robot_state(), q, filter.position_cov().trace())
            }
            None => {
                let q = StateQuality {
                    p: Quality::Bad,
                    gz: Quality::from_good(ranger_ok),
                    vxy: Quality::Bad,
                    vz: Quality::Bad,
                    att: Quality::Good,
                };
                let dr = &self.dead_reckoning;
                (dr.robot_state(), q, dr.position_cov().trace())
            }
        };
        let quality = if imu_ok { quality } else { StateQuality::ALL_BAD };
        let mut state = state;
        state.stamp = now;

        if let Some((t_prev, p_prev)) = self.last_output {
            let step = (state.p - p_prev).norm();
            let bound = self.cfg.v_max * (now - t_prev) + CONTINUITY_EPS;
            if step > bound {
                warn!("t={now:.3} continuity violated: step {step:.6} m > {bound:.6} m");
                self.continuity_violations += 1;
                events.push(MuxEvent::ContinuityViolation { step, bound });
            }
        }
        self.last_output = Some((now, state.p));

        let streams = self
            .slots
            .iter()
            .map(|s| {
                let all = s.effective_verdicts();
                let worst = all.iter().max_by_key(|r| r.verdict);
                let failing = worst.filter(|r| r.verdict != Verdict::Pass);
                StreamTick {
                    id: s.cfg.id.clone(),
                    state: s.status.state,
                    init_epoch: s.status.init_epoch,
                    raw_pose: s.last_msg.as_ref().and_then(|m| m.pose),
                    verdict: worst.map_or(Verdict::Pass, |r| r.verdict),
                    failing_check: failing.map(|r| r.check_id),
                    filter_cov_trace: s.filter.position_cov().trace(),
                }
            })
            .collect();

        MuxOutput {
            stamp: now,
            state,
            quality,
            channel: self.channel.clone(),
            reinit_commands,
            service_hint: map_quality_to_service(quality),
            position_cov_trace: cov_trace,
            streams,
            events,
        }
    }

    fn dead_reckoning_or_channel_pose(&self) -> Pose {
        match &self.channel {
            Some(id) => self.slot(id).filter.pose(),
            None => self.dead_reckoning.pose(),
        }
    }

    fn slot(&self, id: &StreamId) -> &Slot {
        self.slots.iter().find(|s| &s.cfg.id == id).expect("ranked stream")
    }

    fn slot_mut(&mut self, id: &StreamId) -> &mut Slot {
        self.slots.iter_mut().find(|s| &s.cfg.id == id).expect("ranked stream")
    }

    fn ranger_ok(&self, now: f64) -> bool {
        match (&self.cfg.ranger, self.last_range) {
            (Some(r), Some((stamp, _))) => now - stamp <= r.timeout_factor / r.rate + 1e-9,
            _ => false,
        }
    }

    fn on_imu(&mut self, sample: &ImuSample) {
        let noise = self.cfg.noise;
        let filters = self
            .slots
            .iter_mut()
            .map(|s| &mut s.filter)
            .chain(std::iter::once(&mut self.dead_reckoning));
        for f in filters {
            let dt = sample.stamp - f.stamp;
            if dt <= 1e-12 {
                continue;
            }
            // Long outages are bridged in bounded steps.
            let steps = (dt / 0.05).ceil().max(1.0);
            let h = dt / steps;
            for _ in 0..steps as usize {
                let mut s = *sample;
                s.stamp = f.stamp + h;
                if let Err(e) = f.predict(&s, h, &noise) {
                    debug!("predict skipped: {e}");
                }
            }
            f.stamp = sample.stamp;
        }
        self.last_imu = Some(*sample);
    }

    fn on_range(&mut self, stamp: f64, range: Option<f64>) {
        let (Some(cfg), Some(range)) = (self.cfg.ranger.clone(), range) else {
            return;
        };
        self.last_range = Some((stamp, range));
        let channel = self.channel.clone();
        for slot in self.slots.iter_mut().filter(|s| !s.cfg.kind.has_pose()) {
            catch_up(&mut slot.filter, self.last_imu.as_ref(), stamp, &self.cfg.noise);
            let z = height_from_range(range, &slot.filter.r);
            let _ = slot.filter.update_height(z, cfg.variance);
        }
        if channel.is_none() {
            let dr = &mut self.dead_reckoning;
            catch_up(dr, self.last_imu.as_ref(), stamp, &self.cfg.noise);
            let z = height_from_range(range, &dr.r);
            let _ = dr.update_height(z, cfg.variance);
        }
    }

    fn on_message(&mut self, msg: &OdometryMessage, events: &mut Vec<MuxEvent>) {
        let seed = match &self.channel {
            Some(id) => self.slot(id).filter.clone(),
            None => self.dead_reckoning.clone(),
        };
        let noise = self.cfg.noise;
        let last_imu = self.last_imu;
        let Some(idx) = self.slots.iter().position(|s| s.cfg.id == msg.stream_id) else {
            warn!("message from unconfigured stream {}", msg.stream_id);
            return;
        };
        let slot = &mut self.slots[idx];
        let now = msg.stamp;

        match slot.status.state {
            LifecycleState::Failed => return,
            LifecycleState::Reinitializing => {
                if msg.init_epoch <= slot.status.init_epoch {
                    return;
                }
                match slot.status.complete_reinit(msg.init_epoch, now) {
                    Ok(next) => {
                        slot.status = next;
                        events.push(MuxEvent::ReinitComplete {
                            stream: slot.cfg.id.clone(),
                            epoch: msg.init_epoch,
                        });
                        // Restart from the published estimate, keeping the
                        // stream's own identity.
                        let mut filter = seed;
                        catch_up(&mut filter, last_imu.as_ref(), now, &noise);
                        slot.filter = filter;
                        slot.last_msg = None;
                        slot.last_velocity = None;
                        rebase(slot, &mut self.anchors, msg);
                    }
                    Err(e) => {
                        warn!("{}: {e}", slot.cfg.id);
                        return;
                    }
                }
            }
            _ => {
                catch_up(&mut slot.filter, last_imu.as_ref(), now, &noise);
                if msg.init_epoch > slot.status.init_epoch {
                    info!("t={now:.3} {} advanced to epoch {}", slot.cfg.id, msg.init_epoch);
                    events.push(MuxEvent::EpochAdvance {
                        stream: slot.cfg.id.clone(),
                        epoch: msg.init_epoch,
                    });
                    slot.last_msg = None;
                    rebase(slot, &mut self.anchors, msg);
                }
            }
        }
        catch_up(&mut slot.filter, last_imu.as_ref(), now, &noise);

        let status = match slot.status.record_message(msg) {
            Ok(s) => s,
            Err(e) => {
                warn!("{}: {e}", slot.cfg.id);
                return;
            }
        };
        slot.status = status;

        let checks = slot.cfg.checks;
        let mut verdicts = Vec::new();
        if let Some(prev) = slot.last_msg.as_ref().filter(|p| p.init_epoch == msg.init_epoch) {
            if let Ok(r) = jump_check(prev, msg, &checks) {
                verdicts.push(r);
            }
        }
        if let Some(cov) = &msg.covariance {
            match divergence_check(cov, &checks) {
                Ok(r) => verdicts.push(r),
                Err(e) => {
                    debug!("{}: {e}", slot.cfg.id);
                    verdicts.push(CheckResult::new(CheckId::Divergence, Verdict::HardFail, f64::NAN));
                }
            }
        }
        if let Some(stats) = &msg.sensor_stats {
            verdicts.push(sensor_data_check(stats, &checks));
        }
        let hard = verdicts.iter().any(|r| r.verdict == Verdict::HardFail);
        if msg.pose.is_some() {
            slot.last_msg = Some(msg.clone());
        }
        if let Some(v) = &msg.velocity {
            slot.last_velocity = Some(v.v);
        }
        if !hard {
            fuse(slot, msg);
        }
        slot.tick_verdicts.extend(verdicts.iter().copied());
        slot.msg_verdicts = verdicts;
        slot.msg_this_tick = true;
    }

    fn tick_checks(&mut self, now: f64) {
        for slot in self.slots.iter_mut().filter(|s| s.status.state.is_supervised()) {
            let r = rate_check(slot.status.last_msg_stamp, now, &slot.cfg.checks);
            slot.tick_verdicts.push(r);
        }
        if !self.cfg.voting {
            return;
        }
        let voters: Vec<(StreamId, Vector3<f64>)> = self
            .slots
            .iter()
            .filter(|s| s.status.state.is_supervised())
            .filter(|s| {
                s.tick_verdicts
                    .iter()
                    .all(|r| r.check_id != CheckId::Rate || r.verdict == Verdict::Pass)
            })
            .map(|s| {
                let v = match (s.cfg.kind.has_velocity(), s.last_velocity) {
                    (true, Some(v)) => v,
                    _ => s.filter.body_velocity(),
                };
                (s.cfg.id.clone(), v)
            })
            .collect();
        let Some(first) = self.slots.iter().find(|s| s.status.state.is_supervised()) else {
            return;
        };
        let vote_cfg = first.cfg.checks;
        if let Ok(results) = voting_check(&voters, &vote_cfg) {
            for (id, r) in results {
                self.slot_mut(&id).tick_verdicts.push(r);
            }
        }
    }
}

fn input_rank(i: &MuxInput) -> u8 {
    match i {
        MuxInput::Imu(_) => 0,
        MuxInput::Range { .. } => 1,
        MuxInput::Odometry(_) => 2,
    }
}

/// Propagate a filter up to `stamp` holding the last IMU sample.
fn catch_up(f: &mut FilterState, imu: Option<&ImuSample>, stamp: f64, noise: &ProcessNoise) {
    let Some(imu) = imu else { return };
    let dt = stamp - f.stamp;
    if dt <= 1e-12 {
        return;
    }
    let steps = (dt / 0.05).ceil().max(1.0);
    let h = dt / steps;
    for _ in 0..steps as usize {
        let _ = f.predict(imu, h, noise);
    }
    f.stamp = stamp;
}

/// Anchor the stream's new epoch on its current filter pose.
fn rebase(slot: &mut Slot, anchors: &mut AnchorTable, msg: &OdometryMessage) {
    if let Some(local) = msg.pose {
        let anchor = slot.filter.pose().compose(&local.inverse());
        slot.filter.reset_from(anchor);
        anchors.insert(slot.cfg.id.clone(), msg.init_epoch, anchor);
    }
}

fn fuse(slot: &mut Slot, msg: &OdometryMessage) {
    let cov = msg.covariance.unwrap_or(slot.cfg.fallback_cov);
    if let Some(local) = &msg.pose {
        if let Err(e) = slot.filter.update_local_pose(local, &cov) {
            debug!("{}: pose update rejected: {e}", slot.cfg.id);
        }
    }
    if let Some(v) = &msg.velocity {
        let vcov = if cov.velocity.trace() > 0.0 {
            cov.velocity
        } else {
            slot.cfg.fallback_cov.velocity
        };
        let vcov = if vcov.trace() > 0.0 { vcov } else { Matrix3::identity() * 1e-4 };
        if let Err(e) = slot.filter.update_body_velocity(&v.v, &vcov) {
            debug!("{}: velocity update rejected: {e}", slot.cfg.id);
        }
    }
}
