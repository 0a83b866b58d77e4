//! Quality-gated mobility services and the flight behavior state machine.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::geometry::wrap_angle;
use crate::state::{RobotState, StateQuality};

/// Ordered by capability: `OpenLoopLand < Attitude < ClosedLoopZ < Local < Global`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityService {
    OpenLoopLand,
    Attitude,
    ClosedLoopZ,
    Local,
    Global,
}

impl MobilityService {
    pub const ALL: [MobilityService; 5] = [
        MobilityService::OpenLoopLand,
        MobilityService::Attitude,
        MobilityService::ClosedLoopZ,
        MobilityService::Local,
        MobilityService::Global,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MobilityService::OpenLoopLand => "open_loop_land",
            MobilityService::Attitude => "attitude",
            MobilityService::ClosedLoopZ => "closed_loop_z",
            MobilityService::Local => "local",
            MobilityService::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

impl fmt::Display for MobilityService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn map_quality_to_service(q: StateQuality) -> MobilityService {
    if !q.att.is_good() {
        MobilityService::OpenLoopLand
    } else if q.bits().iter().all(|&b| b) {
        MobilityService::Global
    } else if q.vxy.is_good() {
        MobilityService::Local
    } else if q.gz.is_good() || q.vz.is_good() {
        MobilityService::ClosedLoopZ
    } else {
        MobilityService::Attitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    TakeOff,
    WaypointNav,
    VelocityHold,
    HoverZ,
    AttitudeLand,
    Landed,
}

impl Behavior {
    pub const ALL: [Behavior; 6] = [
        Behavior::TakeOff,
        Behavior::WaypointNav,
        Behavior::VelocityHold,
        Behavior::HoverZ,
        Behavior::AttitudeLand,
        Behavior::Landed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::TakeOff => "take_off",
            Behavior::WaypointNav => "waypoint_nav",
            Behavior::VelocityHold => "velocity_hold",
            Behavior::HoverZ => "hover_z",
            Behavior::AttitudeLand => "attitude_land",
            Behavior::Landed => "landed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Behavior::AttitudeLand | Behavior::Landed)
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reference sample of a mission at progress `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

/// A mission path parameterized by nominal time.
pub trait Mission {
    fn reference(&self, tau: f64) -> ReferencePoint;
    fn duration(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Seconds of flight below Local before a forced landing.
    #[serde(default = "defaults::safety_timeout")]
    pub safety_timeout: f64,
    /// Terminal open-loop descent rate, m/s.
    #[serde(default = "defaults::descent_rate")]
    pub descent_rate: f64,
    /// Estimated altitude at which a landing is complete, meters.
    #[serde(default = "defaults::ground_threshold")]
    pub ground_threshold: f64,
    /// Position gain, 1/s.
    #[serde(default = "defaults::k_p")]
    pub k_p: f64,
    /// Velocity gain, 1/s.
    #[serde(default = "defaults::k_v")]
    pub k_v: f64,
    /// Yaw gain, 1/s.
    #[serde(default = "defaults::k_yaw")]
    pub k_yaw: f64,
    /// Commanded speed limit, m/s.
    #[serde(default = "defaults::speed_limit")]
    pub speed_limit: f64,
    /// Linear drag coefficient of the airframe, 1/s.
    #[serde(default = "defaults::drag")]
    pub drag: f64,
    /// The mission clock stalls while the tracking error exceeds this, meters.
    #[serde(default = "defaults::max_lag")]
    pub max_lag: f64,
    /// Take-off is complete within this distance of the target height, meters.
    #[serde(default = "defaults::takeoff_tolerance")]
    pub takeoff_tolerance: f64,
}

mod defaults {
    pub fn safety_timeout() -> f64 {
        3.0
    }
    pub fn descent_rate() -> f64 {
        0.3
    }
    pub fn ground_threshold() -> f64 {
        0.15
    }
    pub fn k_p() -> f64 {
        1.0
    }
    pub fn k_v() -> f64 {
        2.0
    }
    pub fn k_yaw() -> f64 {
        1.0
    }
    pub fn speed_limit() -> f64 {
        1.5
    }
    pub fn drag() -> f64 {
        0.5
    }
    pub fn max_lag() -> f64 {
        1.0
    }
    pub fn takeoff_tolerance() -> f64 {
        0.1
    }
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            safety_timeout: defaults::safety_timeout(),
            descent_rate: defaults::descent_rate(),
            ground_threshold: defaults::ground_threshold(),
            k_p: defaults::k_p(),
            k_v: defaults::k_v(),
            k_yaw: defaults::k_yaw(),
            speed_limit: defaults::speed_limit(),
            drag: defaults::drag(),
            max_lag: defaults::max_lag(),
            takeoff_tolerance: defaults::takeoff_tolerance(),
        }
    }
}

impl BehaviorConfig {
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, value) in [
            ("safety_timeout", self.safety_timeout),
            ("descent_rate", self.descent_rate),
            ("ground_threshold", self.ground_threshold),
            ("k_p", self.k_p),
            ("k_v", self.k_v),
            ("k_yaw", self.k_yaw),
            ("speed_limit", self.speed_limit),
            ("drag", self.drag),
            ("max_lag", self.max_lag),
            ("takeoff_tolerance", self.takeoff_tolerance),
        ] {
            if !(value.is_finite() && value > 0.0) {
                out.push((name, format!("must be positive and finite, got {value}")));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorState {
    pub active: Behavior,
    /// Start of the current stretch below Local.
    pub dead_reckon_since: Option<f64>,
    /// Mission clock.
    pub progress: f64,
    /// Altitude latched when a hold behavior is entered.
    pub hold_altitude: Option<f64>,
    pub takeoff_height: f64,
    pub last_now: Option<f64>,
}

impl BehaviorState {
    pub fn airborne() -> Self {
        Self {
            active: Behavior::WaypointNav,
            dead_reckon_since: None,
            progress: 0.0,
            hold_altitude: None,
            takeoff_height: 0.0,
            last_now: None,
        }
    }

    pub fn on_ground(takeoff_height: f64) -> Self {
        Self {
            active: Behavior::TakeOff,
            takeoff_height,
            ..Self::airborne()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Position,
    Velocity,
    Altitude,
    AttitudeHold,
    OpenLoopDescent,
    Idle,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Position => "position",
            ControlMode::Velocity => "velocity",
            ControlMode::Altitude => "altitude",
            ControlMode::AttitudeHold => "attitude_hold",
            ControlMode::OpenLoopDescent => "open_loop_descent",
            ControlMode::Idle => "idle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ControlMode::Position,
            ControlMode::Velocity,
            ControlMode::Altitude,
            ControlMode::AttitudeHold,
            ControlMode::OpenLoopDescent,
            ControlMode::Idle,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

/// State components a command was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct ClosedLoops {
    pub position_xy: bool,
    pub height: bool,
    pub velocity_xy: bool,
    pub velocity_z: bool,
    pub attitude: bool,
}

impl ClosedLoops {
    /// True when every closed loop runs on a Good state block.
    pub fn respects(&self, q: &StateQuality) -> bool {
        (!self.position_xy || q.p.is_good())
            && (!self.height || q.p.is_good() || q.gz.is_good())
            && (!self.velocity_xy || q.vxy.is_good())
            && (!self.velocity_z || q.vz.is_good())
            && (!self.attitude || q.att.is_good())
    }

    /// Compact tag: one letter per closed loop, `-` for none.
    pub fn tag(&self) -> String {
        let s: String = [
            (self.position_xy, 'P'),
            (self.height, 'H'),
            (self.velocity_xy, 'V'),
            (self.velocity_z, 'W'),
            (self.attitude, 'A'),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, c)| *c)
        .collect();
        if s.is_empty() {
            "-".to_string()
        } else {
            s
        }
    }

    pub fn parse_tag(tag: &str) -> Option<Self> {
        let mut out = ClosedLoops::default();
        if tag == "-" {
            return Some(out);
        }
        for c in tag.chars() {
            match c {
                'P' => out.position_xy = true,
                'H' => out.height = true,
                'V' => out.velocity_xy = true,
                'W' => out.velocity_z = true,
                'A' => out.attitude = true,
                _ => return None,
            }
        }
        Some(out)
    }
}

/// World-frame acceleration command, gravity excluded, plus a yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub mode: ControlMode,
    pub accel: Vector3<f64>,
    pub yaw_rate: f64,
    pub loops: ClosedLoops,
}

impl ControlCommand {
    pub fn hover() -> Self {
        Self {
            mode: ControlMode::AttitudeHold,
            accel: Vector3::zeros(),
            yaw_rate: 0.0,
            loops: ClosedLoops::default(),
        }
    }
}

/// One step of the behavior state machine followed by the matching controller.
pub fn behavior_step(
    b: &BehaviorState,
    service: MobilityService,
    quality: &StateQuality,
    state: &RobotState,
    mission: &dyn Mission,
    now: f64,
    cfg: &BehaviorConfig,
) -> (BehaviorState, ControlCommand) {
    let mut next = *b;
    let dt = b.last_now.map_or(0.0, |t| (now - t).max(0.0));
    next.last_now = Some(now);

    if service >= MobilityService::Local {
        next.dead_reckon_since = None;
    } else if next.dead_reckon_since.is_none() {
        next.dead_reckon_since = Some(now);
    }

    next.active = match b.active {
        Behavior::Landed => Behavior::Landed,
        Behavior::AttitudeLand if state.altitude() <= cfg.ground_threshold => Behavior::Landed,
        Behavior::AttitudeLand => Behavior::AttitudeLand,
        _ if service == MobilityService::OpenLoopLand => Behavior::AttitudeLand,
        _ if next
            .dead_reckon_since
            .is_some_and(|since| now - since >= cfg.safety_timeout - 1e-9) =>
        {
            Behavior::AttitudeLand
        }
        Behavior::TakeOff if service == MobilityService::Global => {
            if (state.altitude() - b.takeoff_height).abs() <= cfg.takeoff_tolerance {
                Behavior::WaypointNav
            } else {
                Behavior::TakeOff
            }
        }
        _ if service == MobilityService::Global => Behavior::WaypointNav,
        _ if service == MobilityService::Local => Behavior::VelocityHold,
        _ => Behavior::HoverZ,
    };

    let holding = matches!(next.active, Behavior::VelocityHold | Behavior::HoverZ);
    if !holding {
        next.hold_altitude = None;
    } else if next.hold_altitude.is_none() {
        next.hold_altitude = Some(state.altitude());
    }

    let cmd = match next.active {
        Behavior::WaypointNav => {
            let world_v = state.world_velocity();
            let lagging = (mission.reference(next.progress).p - state.p).norm() > cfg.max_lag;
            if !lagging {
                next.progress = (next.progress + dt).min(mission.duration());
            }
            let reference = mission.reference(next.progress);
            let mut v_des = reference.v + cfg.k_p * (reference.p - state.p);
            clamp_norm(&mut v_des, cfg.speed_limit);
            let accel = cfg.k_v * (v_des - world_v) + cfg.drag * world_v + reference.a;
            ControlCommand {
                mode: ControlMode::Position,
                accel,
                yaw_rate: yaw_hold(state, quality, cfg),
                loops: ClosedLoops {
                    position_xy: true,
                    height: true,
                    velocity_xy: true,
                    velocity_z: true,
                    attitude: quality.att.is_good(),
                },
            }
        }
        Behavior::TakeOff => {
            let world_v = state.world_velocity();
            let target = Vector3::new(state.p.x, state.p.y, b.takeoff_height);
            let mut v_des = cfg.k_p * (target - state.p);
            clamp_norm(&mut v_des, cfg.speed_limit);
            ControlCommand {
                mode: ControlMode::Position,
                accel: cfg.k_v * (v_des - world_v) + cfg.drag * world_v,
                yaw_rate: yaw_hold(state, quality, cfg),
                loops: ClosedLoops {
                    position_xy: false,
                    height: true,
                    velocity_xy: true,
                    velocity_z: true,
                    attitude: quality.att.is_good(),
                },
            }
        }
        Behavior::VelocityHold | Behavior::HoverZ => {
            let world_v = state.world_velocity();
            let mut loops = ClosedLoops {
                attitude: quality.att.is_good(),
                ..ClosedLoops::default()
            };
            let mut accel = Vector3::zeros();
            if next.active == Behavior::VelocityHold && quality.vxy.is_good() {
                loops.velocity_xy = true;
                accel.x = (cfg.drag - cfg.k_v) * world_v.x;
                accel.y = (cfg.drag - cfg.k_v) * world_v.y;
            }
            let height_ok = quality.gz.is_good() || quality.p.is_good();
            let target_z = next.hold_altitude.unwrap_or(state.altitude());
            let z_err = target_z - state.altitude();
            accel.z = match (height_ok, quality.vz.is_good()) {
                (true, true) => {
                    loops.height = true;
                    loops.velocity_z = true;
                    let vz_des = (cfg.k_p * z_err).clamp(-cfg.speed_limit, cfg.speed_limit);
                    cfg.k_v * (vz_des - world_v.z) + cfg.drag * world_v.z
                }
                (false, true) => {
                    loops.velocity_z = true;
                    (cfg.drag - cfg.k_v) * world_v.z
                }
                (true, false) => {
                    loops.height = true;
                    cfg.k_p * z_err
                }
                (false, false) => 0.0,
            };
            let mode = if loops.velocity_xy {
                ControlMode::Velocity
            } else if loops.height || loops.velocity_z {
                ControlMode::Altitude
            } else {
                ControlMode::AttitudeHold
            };
            ControlCommand {
                mode,
                accel,
                yaw_rate: yaw_hold(state, quality, cfg),
                loops,
            }
        }
        Behavior::AttitudeLand => ControlCommand {
            mode: ControlMode::OpenLoopDescent,
            accel: descent_accel(cfg),
            yaw_rate: 0.0,
            loops: ClosedLoops::default(),
        },
        Behavior::Landed => ControlCommand {
            mode: ControlMode::Idle,
            accel: descent_accel(cfg),
            yaw_rate: 0.0,
            loops: ClosedLoops::default(),
        },
    };
    (next, cmd)
}

/// Reduced thrust whose terminal vertical speed equals the descent rate.
fn descent_accel(cfg: &BehaviorConfig) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -cfg.drag * cfg.descent_rate)
}

fn yaw_hold(state: &RobotState, quality: &StateQuality, cfg: &BehaviorConfig) -> f64 {
    if quality.att.is_good() {
        -cfg.k_yaw * wrap_angle(state.r.yaw())
    } else {
        0.0
    }
}

fn clamp_norm(v: &mut Vector3<f64>, limit: f64) {
    let n = v.norm();
    if n > limit {
        *v *= limit / n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Quality;
    use MobilityService::*;

    fn q(p: bool, gz: bool, vxy: bool, vz: bool, att: bool) -> StateQuality {
        StateQuality::from_bits([p, gz, vxy, vz, att])
    }

    #[test]
    fn table_rows() {
        const G: bool = true;
        const B: bool = false;
        assert_eq!(map_quality_to_service(q(G, G, G, G, G)), Global);
        assert_eq!(map_quality_to_service(q(B, G, G, G, G)), Local);
        assert_eq!(map_quality_to_service(q(B, B, G, G, G)), Local);
        assert_eq!(map_quality_to_service(q(B, G, B, G, G)), ClosedLoopZ);
        assert_eq!(map_quality_to_service(q(B, B, B, B, G)), Attitude);
    }

    #[test]
    fn attitude_failure_dominates() {
        for quality in StateQuality::all_combinations().filter(|q| !q.att.is_good()) {
            assert_eq!(map_quality_to_service(quality), OpenLoopLand);
        }
    }

    #[test]
    fn mapping_is_monotone_over_all_combinations() {
        for a in StateQuality::all_combinations() {
            let bits = a.bits();
            for i in 0..5 {
                if bits[i] {
                    continue;
                }
                let mut better = bits;
                better[i] = true;
                let b = StateQuality::from_bits(better);
                assert!(map_quality_to_service(b) >= map_quality_to_service(a), "{a} -> {b}");
            }
        }
    }

    #[test]
    fn service_and_behavior_names_round_trip() {
        for s in MobilityService::ALL {
            assert_eq!(MobilityService::parse(s.as_str()), Some(s));
        }
        for b in Behavior::ALL {
            assert_eq!(Behavior::parse(b.as_str()), Some(b));
        }
        for tag in ["-", "PHVWA", "HW", "A"] {
            assert_eq!(ClosedLoops::parse_tag(tag).unwrap().tag(), tag);
        }
    }

    struct Still(Vector3<f64>);

    impl Mission for Still {
        fn reference(&self, _tau: f64) -> ReferencePoint {
            ReferencePoint {
                p: self.0,
                v: Vector3::zeros(),
                a: Vector3::zeros(),
            }
        }
        fn duration(&self) -> f64 {
            10.0
        }
    }

    fn at(p: Vector3<f64>) -> RobotState {
        RobotState {
            p,
            ..RobotState::default()
        }
    }

    fn degraded() -> StateQuality {
        q(false, false, false, false, true)
    }

    #[test]
    fn at_waypoint_commands_hover() {
        let goal = Vector3::new(1.0, 2.0, 1.5);
        let cfg = BehaviorConfig::default();
        let (next, cmd) = behavior_step(
            &BehaviorState::airborne(),
            Global,
            &StateQuality::ALL_GOOD,
            &at(goal),
            &Still(goal),
            0.0,
            &cfg,
        );
        assert_eq!(next.active, Behavior::WaypointNav);
        assert!(cmd.accel.norm() < 1e-12);
        assert_eq!(cmd.mode, ControlMode::Position);
    }

    fn run_trace(services: &[(f64, MobilityService)], until: f64) -> Vec<(f64, Behavior)> {
        let cfg = BehaviorConfig::default();
        let mission = Still(Vector3::new(0.0, 0.0, 1.5));
        let mut b = BehaviorState::airborne();
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let now = k as f64 * 0.01;
            if now > until + 1e-9 {
                break;
            }
            let service = services
                .iter()
                .rev()
                .find(|(t, _)| now >= *t - 1e-9)
                .map(|(_, s)| *s)
                .unwrap_or(Global);
            let quality = match service {
                Global => StateQuality::ALL_GOOD,
                _ => degraded(),
            };
            let (next, _) = behavior_step(&b, service, &quality, &at(Vector3::new(0.0, 0.0, 1.5)), &mission, now, &cfg);
            b = next;
            out.push((now, b.active));
            k += 1;
        }
        out
    }

    #[test]
    fn attitude_for_three_seconds_forces_landing() {
        // Hand-stepped trace: degraded at t=1.00, landing at exactly t=4.00.
        let trace = run_trace(&[(1.0, Attitude)], 6.0);
        let first_land = trace
            .iter()
            .find(|(_, b)| *b == Behavior::AttitudeLand)
            .map(|(t, _)| *t)
            .unwrap();
        assert!((first_land - 4.0).abs() < 1e-9);
        assert!(trace.iter().filter(|(t, _)| *t >= 4.0 - 1e-9).all(|(_, b)| *b == Behavior::AttitudeLand));
        assert!(trace
            .iter()
            .filter(|(t, _)| *t >= 1.0 - 1e-9 && *t < 4.0 - 1e-9)
            .all(|(_, b)| *b == Behavior::HoverZ));
    }

    #[test]
    fn recovery_before_timeout_resumes_mission() {
        let trace = run_trace(&[(1.0, Attitude), (3.9, Global)], 8.0);
        assert!(trace.iter().all(|(_, b)| *b != Behavior::AttitudeLand));
        assert_eq!(trace.last().unwrap().1, Behavior::WaypointNav);
    }

    #[test]
    fn timer_resets_across_recovery() {
        // Two 2 s degradations separated by recovery never reach the timeout.
        let trace = run_trace(&[(1.0, Attitude), (3.0, Global), (4.0, ClosedLoopZ), (6.0, Global)], 8.0);
        assert!(trace.iter().all(|(_, b)| !b.is_terminal()));
    }

    #[test]
    fn open_loop_land_is_immediate_and_absorbing() {
        let trace = run_trace(&[(1.0, OpenLoopLand), (1.5, Global)], 3.0);
        assert!(trace.iter().filter(|(t, _)| *t >= 1.0 - 1e-9).all(|(_, b)| *b == Behavior::AttitudeLand));
    }

    #[test]
    fn attitude_land_ends_in_landed() {
        let cfg = BehaviorConfig::default();
        let mission = Still(Vector3::zeros());
        let mut b = BehaviorState::airborne();
        b.active = Behavior::AttitudeLand;
        let (b, cmd) = behavior_step(&b, Global, &StateQuality::ALL_GOOD, &at(Vector3::new(0.0, 0.0, 1.0)), &mission, 0.0, &cfg);
        assert_eq!(b.active, Behavior::AttitudeLand);
        assert_eq!(cmd.loops, ClosedLoops::default());
        assert!((cmd.accel.z + cfg.drag * cfg.descent_rate).abs() < 1e-15);
        let (b, _) = behavior_step(&b, Global, &StateQuality::ALL_GOOD, &at(Vector3::new(0.0, 0.0, 0.1)), &mission, 0.01, &cfg);
        assert_eq!(b.active, Behavior::Landed);
        let (b, _) = behavior_step(&b, Global, &StateQuality::ALL_GOOD, &at(Vector3::new(0.0, 0.0, 2.0)), &mission, 0.02, &cfg);
        assert_eq!(b.active, Behavior::Landed);
    }

    #[test]
    fn take_off_climbs_then_navigates() {
        let cfg = BehaviorConfig::default();
        let mission = Still(Vector3::new(0.0, 0.0, 1.0));
        let b = BehaviorState::on_ground(1.0);
        let (b, cmd) = behavior_step(&b, Global, &StateQuality::ALL_GOOD, &at(Vector3::zeros()), &mission, 0.0, &cfg);
        assert_eq!(b.active, Behavior::TakeOff);
        assert!(cmd.accel.z > 0.0);
        let (b, _) = behavior_step(&b, Global, &StateQuality::ALL_GOOD, &at(Vector3::new(0.0, 0.0, 0.95)), &mission, 0.01, &cfg);
        assert_eq!(b.active, Behavior::WaypointNav);
    }

    #[test]
    fn commands_never_close_loops_on_bad_blocks() {
        let cfg = BehaviorConfig::default();
        let mission = Still(Vector3::new(1.0, 0.0, 1.0));
        let state = RobotState {
            p: Vector3::new(0.2, 0.1, 0.8),
            v: Vector3::new(0.3, -0.2, 0.1),
            ..RobotState::default()
        };
        for quality in StateQuality::all_combinations() {
            let service = map_quality_to_service(quality);
            for start in [BehaviorState::airborne(), BehaviorState::on_ground(1.0)] {
                let (_, cmd) = behavior_step(&start, service, &quality, &state, &mission, 0.0, &cfg);
                assert!(cmd.loops.respects(&quality), "{quality}: {:?}", cmd.loops);
            }
        }
        let bad_att = StateQuality {
            att: Quality::Bad,
            ..StateQuality::ALL_GOOD
        };
        let (_, cmd) = behavior_step(&BehaviorState::airborne(), OpenLoopLand, &bad_att, &state, &mission, 0.0, &cfg);
        assert_eq!(cmd.mode, ControlMode::OpenLoopDescent);
    }
}
