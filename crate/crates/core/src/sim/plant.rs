//! Point-mass multirotor with linear drag and yaw-only attitude.
//!
//! Acceleration is held constant over each integration interval, so
//! positions inside an interval are exact quadratics and an IMU sample that
//! reports the interval's acceleration is exactly consistent with the truth.

use nalgebra::Vector3;

use crate::geometry::UnitRotation;
use crate::mobility::ControlCommand;
use crate::state::RobotState;

use super::scenario::PlatformConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    /// Start of the current interval.
    pub t: f64,
    pub p: Vector3<f64>,
    /// World frame.
    pub v: Vector3<f64>,
    pub yaw: f64,
    pub on_ground: bool,
    /// World-frame acceleration over the current interval, gravity excluded.
    pub accel: Vector3<f64>,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Touchdown {
    pub stamp: f64,
    /// Vertical speed at contact, m/s.
    pub speed: f64,
}

impl Plant {
    pub fn new(t: f64, p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self {
            t,
            p,
            v,
            yaw: 0.0,
            on_ground: p.z <= 0.0,
            accel: Vector3::zeros(),
            yaw_rate: 0.0,
        }
    }

    /// Fix the acceleration of the next interval.
    pub fn apply(&mut self, cmd: &ControlCommand, cfg: &PlatformConfig) {
        let mut a = cmd.accel;
        let n = a.norm();
        if n > cfg.a_max {
            a *= cfg.a_max / n;
        }
        a -= cfg.drag * self.v;
        if self.on_ground && a.z <= 0.0 {
            self.accel = Vector3::zeros();
            self.yaw_rate = 0.0;
        } else {
            self.on_ground = false;
            self.accel = a;
            self.yaw_rate = cmd.yaw_rate;
        }
    }

    pub fn position_at(&self, tau: f64) -> Vector3<f64> {
        self.p + self.v * tau + 0.5 * self.accel * tau * tau
    }

    pub fn velocity_at(&self, tau: f64) -> Vector3<f64> {
        self.v + self.accel * tau
    }

    pub fn rotation_at(&self, tau: f64) -> UnitRotation {
        UnitRotation::from_yaw(self.yaw + self.yaw_rate * tau)
    }

    /// True state at `t + tau` inside the current interval.
    pub fn state_at(&self, tau: f64) -> RobotState {
        let r = self.rotation_at(tau);
        RobotState {
            stamp: self.t + tau,
            p: self.position_at(tau),
            r,
            v: r.inverse_rotate(&self.velocity_at(tau)),
            w: Vector3::new(0.0, 0.0, self.yaw_rate),
            a: r.inverse_rotate(&self.accel),
            alpha: Vector3::zeros(),
        }
    }

    /// What an ideal IMU integrating over the current interval reports,
    /// expressed at the interval start and stamped at its end.
    pub fn imu_truth(&self, dt: f64) -> RobotState {
        let mut s = self.state_at(0.0);
        s.stamp = self.t + dt;
        s
    }

    /// Close the interval after `dt` seconds.
    pub fn advance(&mut self, dt: f64) -> Option<Touchdown> {
        let p = self.position_at(dt);
        let v = self.velocity_at(dt);
        self.yaw += self.yaw_rate * dt;
        let t_end = self.t + dt;
        self.t = t_end;
        if !self.on_ground && p.z <= 0.0 && v.z <= 0.0 {
            let contact = self.contact_time(dt);
            let speed = (-self.velocity_at(contact).z).max(0.0);
            self.p = Vector3::new(p.x, p.y, 0.0);
            self.v = Vector3::zeros();
            self.on_ground = true;
            return Some(Touchdown {
                stamp: t_end - dt + contact,
                speed,
            });
        }
        self.p = p;
        self.v = v;
        None
    }

    fn contact_time(&self, dt: f64) -> f64 {
        // Smallest root of z(τ) = 0 in [0, dt].
        let (a, b, c) = (0.5 * self.accel.z, self.v.z, self.p.z);
        if a.abs() < 1e-15 {
            return if b < 0.0 { (-c / b).clamp(0.0, dt) } else { dt };
        }
        let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
        let roots = [(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)];
        roots
            .into_iter()
            .filter(|r| (-1e-12..=dt + 1e-12).contains(r))
            .fold(dt, f64::min)
            .clamp(0.0, dt)
    }
}
