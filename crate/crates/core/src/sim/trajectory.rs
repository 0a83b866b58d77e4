//! Analytic reference trajectories. Attitude is level with zero yaw.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::geometry::UnitRotation;
use crate::mobility::{Mission, ReferencePoint};
use crate::state::RobotState;

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Hover {
        position: [f64; 3],
        duration: f64,
    },
    Line {
        start: [f64; 3],
        /// Normalized on use.
        direction: [f64; 3],
        speed: f64,
        duration: f64,
    },
    /// Counter-clockwise horizontal circle starting on the +x side.
    Circle {
        center: [f64; 3],
        radius: f64,
        period: f64,
        duration: f64,
    },
    /// Piecewise-linear path. Each segment starts and ends at rest and peaks
    /// at `speed` midway.
    TunnelPath {
        waypoints: Vec<[f64; 3]>,
        speed: f64,
        duration: f64,
    },
}

impl TrajectorySpec {
    pub fn duration(&self) -> f64 {
        match self {
            TrajectorySpec::Hover { duration, .. }
            | TrajectorySpec::Line { duration, .. }
            | TrajectorySpec::Circle { duration, .. }
            | TrajectorySpec::TunnelPath { duration, .. } => *duration,
        }
    }

    pub fn max_speed(&self) -> f64 {
        match self {
            TrajectorySpec::Hover { .. } => 0.0,
            TrajectorySpec::Line { speed, .. } | TrajectorySpec::TunnelPath { speed, .. } => *speed,
            TrajectorySpec::Circle { radius, period, .. } => TAU * radius / period,
        }
    }

    /// Field-level problems, as `(field, message)`.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let d = self.duration();
        if !(d.is_finite() && d > 0.0) {
            out.push(("duration", format!("must be positive, got {d}")));
        }
        match self {
            TrajectorySpec::Hover { .. } => {}
            TrajectorySpec::Line { direction, speed, .. } => {
                if Vector3::from(*direction).norm() < 1e-9 {
                    out.push(("direction", "must be a nonzero vector".to_string()));
                }
                if !(*speed >= 0.0 && speed.is_finite()) {
                    out.push(("speed", format!("must be non-negative, got {speed}")));
                }
            }
            TrajectorySpec::Circle { radius, period, .. } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    out.push(("radius", format!("must be positive, got {radius}")));
                }
                if !(*period > 0.0 && period.is_finite()) {
                    out.push(("period", format!("must be positive, got {period}")));
                }
            }
            TrajectorySpec::TunnelPath { waypoints, speed, .. } => {
                if waypoints.len() < 2 {
                    out.push(("waypoints", "needs at least two waypoints".to_string()));
                }
                if !(*speed > 0.0 && speed.is_finite()) {
                    out.push(("speed", format!("must be positive, got {speed}")));
                }
            }
        }
        out
    }

    /// Reference position, velocity and acceleration at `t`, unchecked.
    pub fn sample(&self, t: f64) -> ReferencePoint {
        match self {
            TrajectorySpec::Hover { position, .. } => still(Vector3::from(*position)),
            TrajectorySpec::Line {
                start,
                direction,
                speed,
                ..
            } => {
                let dir = Vector3::from(*direction).normalize();
                ReferencePoint {
                    p: Vector3::from(*start) + dir * (*speed * t),
                    v: dir * *speed,
                    a: Vector3::zeros(),
                }
            }
            TrajectorySpec::Circle {
                center,
                radius,
                period,
                ..
            } => {
                let w = TAU / period;
                let (s, c) = (w * t).sin_cos();
                ReferencePoint {
                    p: Vector3::from(*center) + Vector3::new(radius * c, radius * s, 0.0),
                    v: Vector3::new(-radius * w * s, radius * w * c, 0.0),
                    a: Vector3::new(-radius * w * w * c, -radius * w * w * s, 0.0),
                }
            }
            TrajectorySpec::TunnelPath { waypoints, speed, .. } => tunnel_sample(waypoints, *speed, t),
        }
    }
}

fn still(p: Vector3<f64>) -> ReferencePoint {
    ReferencePoint {
        p,
        v: Vector3::zeros(),
        a: Vector3::zeros(),
    }
}

/// Peak of the quintic smoothstep derivative.
const SMOOTHSTEP_PEAK: f64 = 15.0 / 8.0;

fn tunnel_sample(waypoints: &[[f64; 3]], speed: f64, t: f64) -> ReferencePoint {
    let mut t0 = 0.0;
    for pair in waypoints.windows(2) {
        let a = Vector3::from(pair[0]);
        let b = Vector3::from(pair[1]);
        let len = (b - a).norm();
        let seg = SMOOTHSTEP_PEAK * len / speed;
        if t < t0 + seg {
            let u = ((t - t0) / seg).max(0.0);
            let s = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
            let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / seg;
            let dds = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (seg * seg);
            let e = b - a;
            return ReferencePoint {
                p: a + e * s,
                v: e * ds,
                a: e * dds,
            };
        }
        t0 += seg;
    }
    still(Vector3::from(*waypoints.last().expect("validated waypoints")))
}

impl Mission for TrajectorySpec {
    fn reference(&self, tau: f64) -> ReferencePoint {
        if tau >= self.duration() {
            still(self.sample(self.duration()).p)
        } else {
            self.sample(tau.max(0.0))
        }
    }

    fn duration(&self) -> f64 {
        TrajectorySpec::duration(self)
    }
}

/// Reference kinematics as a full state at `t`.
pub fn ground_truth(spec: &TrajectorySpec, t: f64) -> Result<RobotState, SimError> {
    if !(t >= 0.0 && t <= spec.duration() + 1e-9) {
        return Err(SimError::OutOfRange {
            t,
            duration: spec.duration(),
        });
    }
    let r = spec.sample(t);
    Ok(RobotState {
        stamp: t,
        p: r.p,
        r: UnitRotation::identity(),
        v: r.v,
        w: Vector3::zeros(),
        a: r.a,
        alpha: Vector3::zeros(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn circle() -> TrajectorySpec {
        TrajectorySpec::Circle {
            center: [0.0, 0.0, 1.5],
            radius: 2.0,
            period: 10.0,
            duration: 60.0,
        }
    }

    fn tunnel() -> TrajectorySpec {
        TrajectorySpec::TunnelPath {
            waypoints: vec![[0.0, 0.0, 1.5], [6.0, 0.0, 1.5], [6.0, 4.0, 2.0], [0.0, 4.0, 1.5]],
            speed: 0.8,
            duration: 60.0,
        }
    }

    fn line() -> TrajectorySpec {
        TrajectorySpec::Line {
            start: [0.0, 0.0, 0.0],
            direction: [2.0, 0.0, 0.0],
            speed: 1.0,
            duration: 30.0,
        }
    }

    #[test]
    fn hover_is_still() {
        let spec = TrajectorySpec::Hover {
            position: [1.0, 2.0, 3.0],
            duration: 10.0,
        };
        for t in [0.0, 3.3, 10.0] {
            let s = ground_truth(&spec, t).unwrap();
            assert_eq!(s.p, Vector3::new(1.0, 2.0, 3.0));
            assert_eq!(s.v, Vector3::zeros());
            assert_eq!(s.a, Vector3::zeros());
        }
    }

    #[test]
    fn line_closed_form() {
        let s = ground_truth(&line(), 5.0).unwrap();
        assert_abs_diff_eq!(s.p, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s.v, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(ground_truth(&line(), -0.1), Err(SimError::OutOfRange { .. })));
        assert!(matches!(ground_truth(&line(), 30.5), Err(SimError::OutOfRange { .. })));
    }

    fn central_difference(f: impl Fn(f64) -> Vector3<f64>, t: f64, h: f64) -> Vector3<f64> {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn circle_centripetal_acceleration() {
        let spec = circle();
        let expected = (TAU / 10.0).powi(2) * 2.0;
        for t in [0.3, 2.5, 7.1] {
            let s = ground_truth(&spec, t).unwrap();
            assert!((s.a.norm() - expected).abs() < 1e-9);
            let fd = central_difference(|x| spec.sample(x).v, t, 1e-4);
            assert!((fd.norm() - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn derivatives_are_consistent() {
        for spec in [circle(), tunnel(), line()] {
            let mut t = 0.01;
            while t < spec.duration() - 0.01 {
                let s = spec.sample(t);
                let dv = central_difference(|x| spec.sample(x).p, t, 1e-5);
                let da = central_difference(|x| spec.sample(x).v, t, 1e-5);
                assert!((dv - s.v).norm() < 1e-6 * (1.0 + s.v.norm()), "{spec:?} v at {t}");
                assert!((da - s.a).norm() < 1e-5 * (1.0 + s.a.norm()), "{spec:?} a at {t}");
                t += 0.137;
            }
        }
    }

    #[test]
    fn tunnel_speed_bound_and_endpoint() {
        let spec = tunnel();
        let mut peak = 0.0f64;
        let mut t = 0.0;
        while t < 60.0 {
            peak = peak.max(spec.sample(t).v.norm());
            t += 0.01;
        }
        assert!(peak <= 0.8 + 1e-9);
        assert!(peak > 0.79);
        assert_eq!(spec.sample(59.0).p, Vector3::new(0.0, 4.0, 1.5));
    }

    #[test]
    fn mission_holds_after_duration() {
        let spec = circle();
        let end = spec.reference(60.0);
        assert_eq!(end.v, Vector3::zeros());
        assert_eq!(spec.reference(100.0), end);
    }

    #[test]
    fn problems_are_reported() {
        let bad = TrajectorySpec::TunnelPath {
            waypoints: vec![[0.0; 3]],
            speed: 0.0,
            duration: -1.0,
        };
        let fields: Vec<_> = bad.problems().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, ["duration", "waypoints", "speed"]);
    }
}
