//! Robot state vector, binary quality bits and covariance blocks.
//!
//! Position and orientation are expressed in the world frame; linear and
//! angular rates and accelerations in the body frame.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::{Pose, UnitRotation};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    /// Seconds, monotonic.
    pub stamp: f64,
    /// World-frame position, meters.
    pub p: Vector3<f64>,
    /// World-frame orientation.
    pub r: UnitRotation,
    /// Body-frame linear velocity, m/s.
    pub v: Vector3<f64>,
    /// Body-frame angular velocity, rad/s.
    pub w: Vector3<f64>,
    /// Body-frame linear acceleration, m/s².
    pub a: Vector3<f64>,
    /// Body-frame angular acceleration, rad/s².
    pub alpha: Vector3<f64>,
}

impl RobotState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p, self.r)
    }

    pub fn world_velocity(&self) -> Vector3<f64> {
        self.r.rotate(&self.v)
    }

    /// Height above the takeoff plane.
    pub fn altitude(&self) -> f64 {
        self.p.z
    }

    pub fn is_finite(&self) -> bool {
        self.stamp.is_finite()
            && [self.p, self.v, self.w, self.a, self.alpha]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quality {
    Good,
    Bad,
}

impl Quality {
    pub fn is_good(self) -> bool {
        self == Quality::Good
    }

    pub fn from_good(good: bool) -> Self {
        if good {
            Quality::Good
        } else {
            Quality::Bad
        }
    }

    pub fn and(self, other: Quality) -> Quality {
        Quality::from_good(self.is_good() && other.is_good())
    }
}

/// Five binary quality bits, one per state block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateQuality {
    /// Full position.
    pub p: Quality,
    /// Height above ground.
    pub gz: Quality,
    /// Horizontal velocity.
    pub vxy: Quality,
    /// Vertical velocity.
    pub vz: Quality,
    /// Attitude block: orientation, angular velocity, accelerations.
    pub att: Quality,
}

impl StateQuality {
    pub const ALL_GOOD: StateQuality = StateQuality::uniform(Quality::Good);
    pub const ALL_BAD: StateQuality = StateQuality::uniform(Quality::Bad);

    pub const fn uniform(q: Quality) -> Self {
        Self {
            p: q,
            gz: q,
            vxy: q,
            vz: q,
            att: q,
        }
    }

    /// Bits in order `p, gz, vxy, vz, att`; `true` is Good.
    pub fn from_bits(bits: [bool; 5]) -> Self {
        Self {
            p: Quality::from_good(bits[0]),
            gz: Quality::from_good(bits[1]),
            vxy: Quality::from_good(bits[2]),
            vz: Quality::from_good(bits[3]),
            att: Quality::from_good(bits[4]),
        }
    }

    pub fn bits(&self) -> [bool; 5] {
        [
            self.p.is_good(),
            self.gz.is_good(),
            self.vxy.is_good(),
            self.vz.is_good(),
            self.att.is_good(),
        ]
    }

    /// All 32 combinations, enumerated by bit pattern.
    pub fn all_combinations() -> impl Iterator<Item = StateQuality> {
        (0u8..32).map(|m| StateQuality::from_bits(std::array::from_fn(|i| m & (1 << i) != 0)))
    }
}

impl fmt::Display for StateQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "G" } else { "B" })?;
        }
        Ok(())
    }
}

/// Per-bit conjunction: a block is Good only when both inputs are Good.
pub fn worst_quality(a: StateQuality, b: StateQuality) -> StateQuality {
    StateQuality {
        p: a.p.and(b.p),
        gz: a.gz.and(b.gz),
        vxy: a.vxy.and(b.vxy),
        vz: a.vz.and(b.vz),
        att: a.att.and(b.att),
    }
}

pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const PSD_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovarianceError {
    #[error("{block} covariance is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { block: &'static str, asymmetry: f64 },
    #[error("{block} covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd {
        block: &'static str,
        min_eigenvalue: f64,
    },
    #[error("{block} covariance has non-finite entries")]
    NonFinite { block: &'static str },
}

/// Position, velocity and attitude covariance blocks reported with a message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceBlock {
    /// m².
    pub position: Matrix3<f64>,
    /// (m/s)².
    pub velocity: Matrix3<f64>,
    /// rad².
    pub attitude: Matrix3<f64>,
}

impl CovarianceBlock {
    pub fn zeros() -> Self {
        Self {
            position: Matrix3::zeros(),
            velocity: Matrix3::zeros(),
            attitude: Matrix3::zeros(),
        }
    }

    pub fn isotropic(position_var: f64, velocity_var: f64, attitude_var: f64) -> Self {
        Self {
            position: Matrix3::identity() * position_var,
            velocity: Matrix3::identity() * velocity_var,
            attitude: Matrix3::identity() * attitude_var,
        }
    }

    pub fn position_trace(&self) -> f64 {
        self.position.trace()
    }

    pub fn validate(&self) -> Result<(), CovarianceError> {
        for (block, m) in [
            ("position", &self.position),
            ("velocity", &self.velocity),
            ("attitude", &self.attitude),
        ] {
            check_symmetric_psd(block, m)?;
        }
        Ok(())
    }
}

fn check_symmetric_psd(block: &'static str, m: &Matrix3<f64>) -> Result<(), CovarianceError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(CovarianceError::NonFinite { block });
    }
    let asymmetry = (m - m.transpose()).abs().max();
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(CovarianceError::NotSymmetric { block, asymmetry });
    }
    let min_eigenvalue = SymmetricEigen::new(*m).eigenvalues.min();
    if min_eigenvalue < PSD_TOLERANCE {
        return Err(CovarianceError::NotPsd {
            block,
            min_eigenvalue,
        });
    }
    Ok(())
}
