//! Synthetic odometry, IMU and height-ranger measurements.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fusion::{gravity, ImuSample};
use crate::geometry::{Pose, UnitRotation};
use crate::state::RobotState;
use crate::streams::{BodyVelocity, OdometryMessage, SensorStats};

use super::scenario::{FailureEvent, FailureMode, ImuConfig, RangerSimConfig, StreamSpec};

/// The stream's current initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochInfo {
    pub epoch: u32,
    /// World pose at which the stream (re)started; its local origin.
    pub origin: Pose,
    pub start: f64,
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vector3::new(x, y, z) * sigma
}

/// Whether `f` shapes the output at `t` of a stream in `epoch`.
///
/// Jumps, divergence and drift live inside one initialization: a restart
/// clears their accumulated effect.
pub fn failure_active(f: &FailureEvent, t: f64, epoch: &EpochInfo) -> bool {
    if !f.covers(t) {
        return false;
    }
    match f.mode {
        FailureMode::Jump { .. } => epoch.start <= f.t_start + 1e-9,
        _ => true,
    }
}

/// One odometry output at the truth `gt`, or `None` while withheld.
///
/// `failures` may list any events of this stream; inactive ones are ignored.
pub fn simulate_stream(
    gt: &RobotState,
    spec: &StreamSpec,
    failures: &[&FailureEvent],
    epoch: &EpochInfo,
    rng: &mut ChaCha8Rng,
) -> Option<OdometryMessage> {
    let t = gt.stamp;
    let active: Vec<&FailureEvent> = failures
        .iter()
        .copied()
        .filter(|f| failure_active(f, t, epoch))
        .collect();
    if active.iter().any(|f| f.mode == FailureMode::Gap) {
        return None;
    }
    let dp = gaussian3(rng, spec.noise.position);
    let dr = gaussian3(rng, spec.noise.attitude);
    let dv = gaussian3(rng, spec.noise.velocity);

    let mut local = epoch.origin.inverse().compose(&gt.pose());
    let mut velocity = gt.v;
    let mut cov = spec.noise.covariance();
    let mut stats = SensorStats::nominal(spec.rate);
    for f in &active {
        let since = (t - f.t_start.max(epoch.start)).max(0.0);
        match &f.mode {
            FailureMode::Gap => {}
            FailureMode::Jump { offset } => local.t += Vector3::from(*offset),
            FailureMode::Divergence { rate } => {
                cov.position += nalgebra::Matrix3::identity() * (rate * since / 3.0);
            }
            FailureMode::Drift { bias } => {
                let bias = Vector3::from(*bias);
                local.t += bias * since;
                velocity += local.r.inverse_rotate(&bias);
            }
            FailureMode::SensorDegrade { stats: o } => {
                stats.output_rate = o.output_rate.unwrap_or(stats.output_rate);
                stats.intensity_mean = o.intensity_mean.unwrap_or(stats.intensity_mean);
                stats.intensity_var = o.intensity_var.unwrap_or(stats.intensity_var);
                stats.invalid_fraction = o.invalid_fraction.unwrap_or(stats.invalid_fraction);
            }
        }
    }
    local.t += dp;
    local.r = local.r.compose(&UnitRotation::exp(&dr));

    Some(OdometryMessage {
        stream_id: spec.id.clone(),
        stamp: t,
        pose: spec.kind.has_pose().then_some(local),
        velocity: spec.kind.has_velocity().then_some(BodyVelocity {
            v: velocity + dv,
            w: gt.w,
        }),
        covariance: Some(cov),
        sensor_stats: Some(stats),
        init_epoch: epoch.epoch,
    })
}

/// IMU sample for the truth `gt` (attitude and body acceleration of the
/// integration interval, stamped at its end).
pub fn simulate_imu(gt: &RobotState, cfg: &ImuConfig, rng: &mut ChaCha8Rng) -> ImuSample {
    let gyro_sigma = cfg.gyro_noise * cfg.rate.sqrt();
    let accel_sigma = cfg.accel_noise * cfg.rate.sqrt();
    let gyro_noise = gaussian3(rng, gyro_sigma);
    let accel_noise = gaussian3(rng, accel_sigma);
    ImuSample {
        stamp: gt.stamp,
        gyro: gt.w + Vector3::from(cfg.gyro_bias) + gyro_noise,
        accel: gt.a - gt.r.inverse_rotate(&gravity()) + Vector3::from(cfg.accel_bias) + accel_noise,
    }
}

/// Downward slant range, or `None` beyond the sensor's reach.
pub fn simulate_range(gt: &RobotState, cfg: &RangerSimConfig, rng: &mut ChaCha8Rng) -> Option<f64> {
    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_std;
    let cos_tilt = gt.r.matrix()[(2, 2)];
    if cos_tilt <= 1e-6 || gt.p.z < 0.0 {
        return None;
    }
    let range = gt.p.z / cos_tilt;
    (range <= cfg.max_range).then_some((range + noise).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{SensorOverrides, StreamNoise};
    use crate::streams::StreamKind;
    use rand::SeedableRng;

    fn spec(kind: StreamKind, noise: StreamNoise) -> StreamSpec {
        StreamSpec {
            id: "lo".into(),
            kind,
            rate: 20.0,
            noise,
            checks: Default::default(),
        }
    }

    fn quiet() -> StreamNoise {
        StreamNoise {
            position: 0.0,
            attitude: 0.0,
            velocity: 0.0,
        }
    }

    fn truth(t: f64) -> RobotState {
        RobotState {
            stamp: t,
            p: Vector3::new(3.0 + t, -1.0, 1.5),
            r: UnitRotation::from_yaw(0.4),
            v: Vector3::new(1.0, 0.0, 0.0),
            ..RobotState::default()
        }
    }

    fn epoch0() -> EpochInfo {
        EpochInfo {
            epoch: 0,
            origin: Pose::new(Vector3::new(1.0, 1.0, 0.0), UnitRotation::from_yaw(0.1)),
            start: 0.0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn event(t_start: f64, t_end: f64, mode: FailureMode) -> FailureEvent {
        FailureEvent {
            stream: "lo".into(),
            t_start,
            t_end,
            mode,
        }
    }

    #[test]
    fn noiseless_stream_reports_truth_relative_to_origin() {
        let gt = truth(2.0);
        let e = epoch0();
        let m = simulate_stream(&gt, &spec(StreamKind::PoseVelocity, quiet()), &[], &e, &mut rng()).unwrap();
        let world = e.origin.compose(&m.pose.unwrap());
        let (dt, dr) = world.distance_to(&gt.pose());
        assert!(dt < 1e-12 && dr < 1e-12);
        assert_eq!(m.velocity.unwrap().v, gt.v);
        assert_eq!(m.sensor_stats, Some(SensorStats::nominal(20.0)));
    }

    #[test]
    fn gap_withholds_messages() {
        let gap = event(1.0, 2.0, FailureMode::Gap);
        let s = spec(StreamKind::PoseOnly, quiet());
        assert!(simulate_stream(&truth(1.5), &s, &[&gap], &epoch0(), &mut rng()).is_none());
        assert!(simulate_stream(&truth(2.0), &s, &[&gap], &epoch0(), &mut rng()).is_some());
    }

    #[test]
    fn jump_displaces_within_its_epoch_only() {
        let jump = event(1.0, 5.0, FailureMode::Jump { offset: [10.0, 0.0, 0.0] });
        let s = spec(StreamKind::PoseOnly, quiet());
        let e = epoch0();
        let clean = simulate_stream(&truth(1.05), &s, &[], &e, &mut rng()).unwrap();
        let jumped = simulate_stream(&truth(1.05), &s, &[&jump], &e, &mut rng()).unwrap();
        let d = jumped.pose.unwrap().t - clean.pose.unwrap().t;
        assert!((d - Vector3::new(10.0, 0.0, 0.0)).norm() < 1e-12);

        let restarted = EpochInfo {
            epoch: 1,
            origin: truth(2.0).pose(),
            start: 2.0,
        };
        let after = simulate_stream(&truth(2.0), &s, &[&jump], &restarted, &mut rng()).unwrap();
        assert!(after.pose.unwrap().t.norm() < 1e-12);
    }

    #[test]
    fn divergence_inflates_reported_covariance() {
        let div = event(1.0, 5.0, FailureMode::Divergence { rate: 0.3 });
        let s = spec(StreamKind::PoseOnly, quiet());
        let m = simulate_stream(&truth(3.0), &s, &[&div], &epoch0(), &mut rng()).unwrap();
        assert!((m.covariance.unwrap().position_trace() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn drift_integrates_bias() {
        let drift = event(1.0, 5.0, FailureMode::Drift { bias: [0.5, 0.0, 0.0] });
        let s = spec(StreamKind::PoseVelocity, quiet());
        let e = epoch0();
        let clean = simulate_stream(&truth(3.0), &s, &[], &e, &mut rng()).unwrap();
        let drifted = simulate_stream(&truth(3.0), &s, &[&drift], &e, &mut rng()).unwrap();
        assert!((drifted.pose.unwrap().t - clean.pose.unwrap().t - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let dv = drifted.velocity.unwrap().v - clean.velocity.unwrap().v;
        assert!((dv.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sensor_degrade_overrides_stats() {
        let degrade = event(
            0.0,
            5.0,
            FailureMode::SensorDegrade {
                stats: SensorOverrides {
                    intensity_mean: Some(0.02),
                    ..Default::default()
                },
            },
        );
        let s = spec(StreamKind::PoseOnly, quiet());
        let m = simulate_stream(&truth(1.0), &s, &[&degrade], &epoch0(), &mut rng()).unwrap();
        let stats = m.sensor_stats.unwrap();
        assert_eq!(stats.intensity_mean, 0.02);
        assert_eq!(stats.output_rate, 20.0);
    }

    #[test]
    fn stream_noise_matches_configuration() {
        let sigma = 0.05;
        let s = spec(
            StreamKind::PoseOnly,
            StreamNoise {
                position: sigma,
                ..quiet()
            },
        );
        let gt = truth(0.0);
        let e = EpochInfo {
            epoch: 0,
            origin: Pose::identity(),
            start: 0.0,
        };
        let mut r = rng();
        let n = 10_000;
        let errors: Vec<f64> = (0..n)
            .map(|_| simulate_stream(&gt, &s, &[], &e, &mut r).unwrap().pose.unwrap().t.x - gt.p.x)
            .collect();
        let var = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.1, "variance ratio {}", var / (sigma * sigma));
    }

    fn imu_cfg(gyro_noise: f64, accel_noise: f64, accel_bias: [f64; 3]) -> ImuConfig {
        ImuConfig {
            rate: 200.0,
            gyro_noise,
            accel_noise,
            gyro_bias: [0.0; 3],
            accel_bias,
            timeout: 0.05,
        }
    }

    #[test]
    fn hover_imu_reads_specific_force() {
        let s = simulate_imu(&RobotState::default(), &imu_cfg(0.0, 0.0, [0.0; 3]), &mut rng());
        assert_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81));
        assert_eq!(s.gyro, Vector3::zeros());
    }

    #[test]
    fn imu_bias_mean_within_three_sigma() {
        let cfg = imu_cfg(0.0, 0.01, [0.05, -0.02, 0.01]);
        let sigma = cfg.accel_noise * cfg.rate.sqrt();
        let n = 10_000;
        let mut r = rng();
        let mut sum = Vector3::zeros();
        for _ in 0..n {
            sum += simulate_imu(&RobotState::default(), &cfg, &mut r).accel - Vector3::new(0.0, 0.0, 9.81);
        }
        let mean = sum / n as f64;
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for i in 0..3 {
            assert!((mean[i] - cfg.accel_bias[i]).abs() < bound, "axis {i}: {}", mean[i]);
        }
    }

    #[test]
    fn imu_noise_variance_within_ten_percent() {
        let cfg = imu_cfg(0.002, 0.02, [0.0; 3]);
        let n = 10_000;
        let mut r = rng();
        let (mut sg, mut sa) = (0.0, 0.0);
        for _ in 0..n {
            let s = simulate_imu(&RobotState::default(), &cfg, &mut r);
            sg += s.gyro.x * s.gyro.x;
            sa += (s.accel.z - 9.81).powi(2);
        }
        let var_g = sg / n as f64;
        let var_a = sa / n as f64;
        let want_g = (cfg.gyro_noise * cfg.rate.sqrt()).powi(2);
        let want_a = (cfg.accel_noise * cfg.rate.sqrt()).powi(2);
        assert!((var_g / want_g - 1.0).abs() < 0.1);
        assert!((var_a / want_a - 1.0).abs() < 0.1);
    }

    #[test]
    fn ranger_examples() {
        let cfg = RangerSimConfig {
            rate: 20.0,
            noise_std: 0.0,
            max_range: 5.0,
        };
        let mut gt = RobotState::default();
        gt.p.z = 1.5;
        assert_eq!(simulate_range(&gt, &cfg, &mut rng()), Some(1.5));
        gt.p.z = 6.0;
        assert_eq!(simulate_range(&gt, &cfg, &mut rng()), None);
    }
}
