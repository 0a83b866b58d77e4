//! Loosely-coupled error-state Kalman filter fusing odometry with an IMU.
//!
//! Nominal state: world position `p`, world velocity `v`, world-from-body
//! rotation `r`, gyro and accelerometer biases. The 15-dim error state is
//! ordered `(δp, δv, δθ, δb_g, δb_a)`, with attitude error applied on the
//! right: `r_true = r · exp(δθ)`.
//!
//! Stream-local measurements are mapped into the filter's world frame through
//! `anchor` (world-from-stream-origin), which is swapped whenever the feeding
//! stream starts a new epoch.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{skew, Pose, UnitRotation};
use crate::state::{CovarianceBlock, CovarianceError, RobotState};

pub const GRAVITY: f64 = 9.81;
pub const ERROR_DIM: usize = 15;
pub const MAX_PREDICT_DT: f64 = 0.1;

pub type Covariance = SMatrix<f64, ERROR_DIM, ERROR_DIM>;
pub type ErrorVector = SVector<f64, ERROR_DIM>;

pub const IDX_P: usize = 0;
pub const IDX_V: usize = 3;
pub const IDX_THETA: usize = 6;
pub const IDX_BG: usize = 9;
pub const IDX_BA: usize = 12;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("predict step dt={dt} outside (0, {MAX_PREDICT_DT}]")]
    InvalidDt { dt: f64 },
    #[error("innovation covariance is not invertible")]
    NumericalFailure,
    #[error("measurement covariance rejected: {0}")]
    InvalidCovariance(#[from] CovarianceError),
    #[error("measurement variance must be positive, got {0}")]
    InvalidVariance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub stamp: f64,
    /// Body angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Body specific force (gravity included), m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.stamp.is_finite() && self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

/// Continuous-time noise densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessNoise {
    /// m/s²/√Hz.
    #[serde(default = "defaults::accel_noise")]
    pub accel_noise: f64,
    /// rad/s/√Hz.
    #[serde(default = "defaults::gyro_noise")]
    pub gyro_noise: f64,
    /// m/s³/√Hz.
    #[serde(default = "defaults::accel_bias_walk")]
    pub accel_bias_walk: f64,
    /// rad/s²/√Hz.
    #[serde(default = "defaults::gyro_bias_walk")]
    pub gyro_bias_walk: f64,
}

mod defaults {
    pub fn accel_noise() -> f64 {
        0.02
    }
    pub fn gyro_noise() -> f64 {
        0.002
    }
    pub fn accel_bias_walk() -> f64 {
        1e-4
    }
    pub fn gyro_bias_walk() -> f64 {
        1e-5
    }
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            accel_noise: defaults::accel_noise(),
            gyro_noise: defaults::gyro_noise(),
            accel_bias_walk: defaults::accel_bias_walk(),
            gyro_bias_walk: defaults::gyro_bias_walk(),
        }
    }
}

impl ProcessNoise {
    pub fn zero() -> Self {
        Self {
            accel_noise: 0.0,
            gyro_noise: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
        }
    }
}

/// Initial standard deviations of the error state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialUncertainty {
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            position: 0.01,
            velocity: 0.01,
            attitude: 0.005,
            gyro_bias: 0.001,
            accel_bias: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub stamp: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub r: UnitRotation,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub cov: Covariance,
    /// World-from-stream-origin for the epoch currently feeding the filter.
    pub anchor: Pose,
    /// Bias-corrected angular rate of the last predict step.
    pub last_rate: Vector3<f64>,
    /// Bias-corrected specific force of the last predict step.
    pub last_specific_force: Vector3<f64>,
    pub last_angular_accel: Vector3<f64>,
    /// Residual of the most recent measurement update.
    pub last_innovation: Option<Vec<f64>>,
}

impl FilterState {
    pub fn new(stamp: f64, pose: Pose, world_velocity: Vector3<f64>, init: &InitialUncertainty) -> Self {
        let mut diag = ErrorVector::zeros();
        for (start, sd) in [
            (IDX_P, init.position),
            (IDX_V, init.velocity),
            (IDX_THETA, init.attitude),
            (IDX_BG, init.gyro_bias),
            (IDX_BA, init.accel_bias),
        ] {
            for i in 0..3 {
                diag[start + i] = sd * sd;
            }
        }
        Self {
            stamp,
            p: pose.t,
            v: world_velocity,
            r: pose.r,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            cov: Covariance::from_diagonal(&diag),
            anchor: Pose::identity(),
            last_rate: Vector3::zeros(),
            last_specific_force: Vector3::new(0.0, 0.0, GRAVITY),
            last_angular_accel: Vector3::zeros(),
            last_innovation: None,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.p, self.r)
    }

    pub fn body_velocity(&self) -> Vector3<f64> {
        self.r.inverse_rotate(&self.v)
    }

    pub fn position_cov(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(IDX_P, IDX_P).into_owned()
    }

    pub fn velocity_cov(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(IDX_V, IDX_V).into_owned()
    }

    /// Full kinematic state as seen by planners and controllers.
    pub fn robot_state(&self) -> RobotState {
        let body_accel = self.last_specific_force + self.r.inverse_rotate(&gravity());
        RobotState {
            stamp: self.stamp,
            p: self.p,
            r: self.r,
            v: self.body_velocity(),
            w: self.last_rate,
            a: body_accel,
            alpha: self.last_angular_accel,
        }
    }

    /// Strapdown propagation over `dt` with the sample held constant.
    pub fn predict(&mut self, imu: &ImuSample, dt: f64, noise: &ProcessNoise) -> Result<(), FusionError> {
        if !(dt > 0.0 && dt <= MAX_PREDICT_DT) {
            return Err(FusionError::InvalidDt { dt });
        }
        let rate = imu.gyro - self.gyro_bias;
        let force = imu.accel - self.accel_bias;
        let rot = self.r.matrix();
        let accel_world = rot * force + gravity();

        self.p += self.v * dt + 0.5 * accel_world * dt * dt;
        self.v += accel_world * dt;
        self.r = self.r.compose(&UnitRotation::exp(&(rate * dt)));

        let mut f = Covariance::identity();
        let i3 = Matrix3::identity();
        let force_skew = skew(&force);
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_V).copy_from(&(i3 * dt));
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_THETA)
            .copy_from(&(-0.5 * rot * force_skew * dt * dt));
        f.fixed_view_mut::<3, 3>(IDX_P, IDX_BA).copy_from(&(-0.5 * rot * dt * dt));
        f.fixed_view_mut::<3, 3>(IDX_V, IDX_THETA).copy_from(&(-rot * force_skew * dt));
        f.fixed_view_mut::<3, 3>(IDX_V, IDX_BA).copy_from(&(-rot * dt));
        f.fixed_view_mut::<3, 3>(IDX_THETA, IDX_THETA)
            .copy_from(&UnitRotation::exp(&(rate * dt)).matrix().transpose());
        f.fixed_view_mut::<3, 3>(IDX_THETA, IDX_BG).copy_from(&(-i3 * dt));

        let mut q = Covariance::zeros();
        for (start, density) in [
            (IDX_V, noise.accel_noise),
            (IDX_THETA, noise.gyro_noise),
            (IDX_BG, noise.gyro_bias_walk),
            (IDX_BA, noise.accel_bias_walk),
        ] {
            for i in 0..3 {
                q[(start + i, start + i)] = density * density * dt;
            }
        }
        self.cov = f * self.cov * f.transpose() + q;
        symmetrize(&mut self.cov);

        self.last_angular_accel = (rate - self.last_rate) / dt;
        self.last_rate = rate;
        self.last_specific_force = force;
        self.stamp = imu.stamp;
        Ok(())
    }

    /// Pose measurement already expressed in the world frame.
    pub fn update_pose(&mut self, meas: &Pose, meas_cov: &CovarianceBlock) -> Result<(), FusionError> {
        meas_cov.validate()?;
        let mut y = SVector::<f64, 6>::zeros();
        y.fixed_rows_mut::<3>(0).copy_from(&(meas.t - self.p));
        y.fixed_rows_mut::<3>(3)
            .copy_from(&self.r.inverse().compose(&meas.r).log());
        let mut rm = SMatrix::<f64, 6, 6>::zeros();
        rm.fixed_view_mut::<3, 3>(0, 0).copy_from(&meas_cov.position);
        rm.fixed_view_mut::<3, 3>(3, 3).copy_from(&meas_cov.attitude);
        self.update(&pose_jacobian(), &y, &rm)
    }

    /// Pose measurement in the stream-local frame of the current epoch.
    pub fn update_local_pose(&mut self, local: &Pose, meas_cov: &CovarianceBlock) -> Result<(), FusionError> {
        let world = self.anchor.compose(local);
        self.update_pose(&world, meas_cov)
    }

    /// Body-frame velocity measurement.
    pub fn update_body_velocity(&mut self, v_body: &Vector3<f64>, meas_cov: &Matrix3<f64>) -> Result<(), FusionError> {
        let block = CovarianceBlock {
            velocity: *meas_cov,
            ..CovarianceBlock::zeros()
        };
        block.validate()?;
        let y = v_body - velocity_model(self);
        self.update(&velocity_jacobian(self), &y, meas_cov)
    }

    /// Altitude update; touches the z estimate only through the covariance.
    pub fn update_height(&mut self, z_meas: f64, z_var: f64) -> Result<(), FusionError> {
        if !(z_var > 0.0 && z_var.is_finite()) {
            return Err(FusionError::InvalidVariance(z_var));
        }
        let mut h = SMatrix::<f64, 1, ERROR_DIM>::zeros();
        h[(0, IDX_P + 2)] = 1.0;
        let y = SVector::<f64, 1>::new(z_meas - self.p.z);
        let rm = SMatrix::<f64, 1, 1>::new(z_var);
        let (px, py) = (self.p.x, self.p.y);
        self.update(&h, &y, &rm)?;
        // The scalar gain also correlates x/y with z; the height ranger carries
        // no horizontal information so the horizontal means are kept as-is.
        self.p.x = px;
        self.p.y = py;
        Ok(())
    }

    fn update<const M: usize>(
        &mut self,
        h: &SMatrix<f64, M, ERROR_DIM>,
        y: &SVector<f64, M>,
        rm: &SMatrix<f64, M, M>,
    ) -> Result<(), FusionError> {
        let s = h * self.cov * h.transpose() + rm;
        let chol = Cholesky::new(s).ok_or(FusionError::NumericalFailure)?;
        let s_inv = chol.inverse();
        if s_inv.iter().any(|x| !x.is_finite()) {
            return Err(FusionError::NumericalFailure);
        }
        let k = self.cov * h.transpose() * s_inv;
        let dx = k * y;
        let ikh = Covariance::identity() - k * h;
        self.cov = ikh * self.cov * ikh.transpose() + k * rm * k.transpose();
        symmetrize(&mut self.cov);
        self.inject(&dx);
        self.last_innovation = Some(y.iter().copied().collect());
        Ok(())
    }

    /// Apply an error-state correction to the nominal state.
    pub fn inject(&mut self, dx: &ErrorVector) {
        self.p += dx.fixed_rows::<3>(IDX_P);
        self.v += dx.fixed_rows::<3>(IDX_V);
        self.r = self
            .r
            .compose(&UnitRotation::exp(&dx.fixed_rows::<3>(IDX_THETA).into_owned()));
        self.gyro_bias += dx.fixed_rows::<3>(IDX_BG);
        self.accel_bias += dx.fixed_rows::<3>(IDX_BA);
    }

    /// Swap the measurement anchor; the estimate itself is untouched.
    pub fn reset_from(&mut self, anchor: Pose) {
        self.anchor = anchor;
    }

    /// Move the whole estimate (and its anchor) by the rigid transform `delta`
    /// applied on the world side.
    pub fn reframe(&mut self, delta: &Pose) {
        let rot = delta.r.matrix();
        self.p = delta.transform_point(&self.p);
        self.v = rot * self.v;
        self.r = delta.r.compose(&self.r);
        self.anchor = delta.compose(&self.anchor);
        let mut t = Covariance::identity();
        t.fixed_view_mut::<3, 3>(IDX_P, IDX_P).copy_from(&rot);
        t.fixed_view_mut::<3, 3>(IDX_V, IDX_V).copy_from(&rot);
        self.cov = t * self.cov * t.transpose();
        symmetrize(&mut self.cov);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov).eigenvalues.min()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).abs().max()
    }
}

/// Free-function form of [`FilterState::reset_from`].
pub fn reset_from(s: &FilterState, anchor: Pose) -> FilterState {
    let mut next = s.clone();
    next.reset_from(anchor);
    next
}

fn symmetrize(m: &mut Covariance) {
    *m = 0.5 * (*m + m.transpose());
}

/// Jacobian of `(p, θ)` with respect to the error state.
pub fn pose_jacobian() -> SMatrix<f64, 6, ERROR_DIM> {
    let mut h = SMatrix::<f64, 6, ERROR_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, IDX_P).fill_diagonal(1.0);
    h.fixed_view_mut::<3, 3>(3, IDX_THETA).fill_diagonal(1.0);
    h
}

/// Pose measurement model in the tangent chart at `reference`.
pub fn pose_model(reference: &FilterState, s: &FilterState) -> SVector<f64, 6> {
    let mut z = SVector::<f64, 6>::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&s.p);
    z.fixed_rows_mut::<3>(3)
        .copy_from(&reference.r.inverse().compose(&s.r).log());
    z
}

/// Predicted body-frame velocity.
pub fn velocity_model(s: &FilterState) -> Vector3<f64> {
    s.r.inverse_rotate(&s.v)
}

pub fn velocity_jacobian(s: &FilterState) -> SMatrix<f64, 3, ERROR_DIM> {
    let rt = s.r.matrix().transpose();
    let mut h = SMatrix::<f64, 3, ERROR_DIM>::zeros();
    h.fixed_view_mut::<3, 3>(0, IDX_V).copy_from(&rt);
    h.fixed_view_mut::<3, 3>(0, IDX_THETA)
        .copy_from(&skew(&velocity_model(s)));
    h
}

/// Vertical height from a downward slant range, compensating tilt.
pub fn height_from_range(range: f64, r: &UnitRotation) -> f64 {
    range * r.matrix()[(2, 2)]
}
