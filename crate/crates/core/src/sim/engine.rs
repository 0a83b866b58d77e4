//! The tick loop.
//!
//! Time advances in IMU intervals; every `imu_per_tick` intervals the mux and
//! the behavior layer run once. A tick at `t_k` consumes the inputs stamped in
//! `(t_{k-1}, t_k]`. The control command of a tick holds until the next one.
//! All instants are computed as `index / rate` so equal instants compare equal.

use std::time::{Duration, Instant};

use log::{debug, info};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::Pose;
use crate::harness::telemetry::{EventKind, EventRecord, RunHeader, StreamColumns, Telemetry, TickRow};
use crate::mobility::{behavior_step, BehaviorState, ControlCommand, Mission};
use crate::mux::{Mux, MuxConfig, MuxEvent, MuxInput, MuxStreamConfig, RangerConfig};
use crate::streams::StreamId;

use super::plant::Plant;
use super::scenario::{ConfigError, FailureEvent, FailureMode, ScenarioConfig, StreamSpec, IMU_TARGET, RANGER_TARGET};
use super::sensors::{simulate_imu, simulate_range, simulate_stream, EpochInfo};

const IMU_SUBSTREAM: u64 = 1;
const RANGER_SUBSTREAM: u64 = 2;

/// Floor on the ranger variance handed to the filter, m².
const MIN_RANGE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    /// Pace ticks against the wall clock. Does not change any output.
    pub real_time: bool,
}

/// FNV-1a; substream selector of an odometry stream.
fn substream_of(id: &StreamId) -> u64 {
    id.as_str().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct SimStream<'a> {
    spec: &'a StreamSpec,
    failures: Vec<&'a FailureEvent>,
    epoch: EpochInfo,
    rng: ChaCha8Rng,
    /// Index of the next output; output `m` is stamped `m / rate`.
    next_output: u64,
    /// Scheduled restarts as `(first, period, next k)`.
    schedule: Vec<(f64, f64, u64)>,
    /// Restart time of a commanded re-initialization; silent until then.
    restart_at: Option<f64>,
}

impl SimStream<'_> {
    fn next_output_time(&self) -> f64 {
        self.next_output as f64 / self.spec.rate
    }

    fn next_scheduled(&self) -> Option<f64> {
        self.schedule
            .iter()
            .map(|(first, period, k)| first + *k as f64 * period)
            .min_by(f64::total_cmp)
    }

    fn pop_scheduled(&mut self, t: f64) {
        for (first, period, k) in &mut self.schedule {
            if *first + *k as f64 * *period <= t {
                *k += 1;
            }
        }
    }

    fn restart(&mut self, t: f64, origin: Pose) {
        self.epoch = EpochInfo {
            epoch: self.epoch.epoch + 1,
            origin,
            start: t,
        };
        debug!("t={t:.3} {} restarted in epoch {}", self.spec.id, self.epoch.epoch);
    }
}

fn gap_active(failures: &[&FailureEvent], t: f64) -> bool {
    failures.iter().any(|f| f.mode == FailureMode::Gap && f.covers(t))
}

/// Earliest instant at or after `t` outside every gap of the stream.
fn after_gaps(failures: &[&FailureEvent], mut t: f64) -> f64 {
    while let Some(f) = failures.iter().find(|f| f.mode == FailureMode::Gap && f.covers(t)) {
        t = f.t_end;
    }
    t
}

pub fn mux_config(cfg: &ScenarioConfig) -> MuxConfig {
    MuxConfig {
        tick_rate: cfg.tick_rate,
        streams: cfg
            .streams
            .iter()
            .map(|s| MuxStreamConfig {
                id: s.id.clone(),
                kind: s.kind,
                checks: cfg.check_config(s),
                fallback_cov: s.noise.covariance(),
            })
            .collect(),
        ranking: cfg.ranking.clone(),
        lifecycle: cfg.lifecycle,
        noise: cfg.filter.process_noise,
        initial_uncertainty: cfg.filter.initial,
        imu_timeout: cfg.imu.timeout,
        ranger: cfg.ranger.map(|r| RangerConfig {
            rate: r.rate,
            variance: (r.noise_std * r.noise_std).max(MIN_RANGE_VARIANCE),
            timeout_factor: 3.0,
        }),
        v_max: cfg.platform.v_max,
        preempt_on_recovery: cfg.mux.preempt_on_recovery,
        voting: cfg.mux.voting,
    }
}

fn header(cfg: &ScenarioConfig) -> RunHeader {
    RunHeader {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        tick_rate: cfg.tick_rate,
        duration: cfg.duration(),
        v_max: cfg.platform.v_max,
        descent_rate: cfg.behavior.descent_rate,
        safety_timeout: cfg.behavior.safety_timeout,
        streams: cfg.streams.iter().map(|s| s.id.clone()).collect(),
        failures: cfg.failures.clone(),
    }
}

fn event_of(e: MuxEvent) -> EventKind {
    match e {
        MuxEvent::Switch { from, to } => EventKind::Switch { from, to },
        MuxEvent::StateChange { stream, from, to, reason } => EventKind::StateChange { stream, from, to, reason },
        MuxEvent::HardFail { stream, check, detail } => EventKind::HardFail {
            stream,
            check,
            detail: detail.is_finite().then_some(detail),
        },
        MuxEvent::ReinitCommand { stream } => EventKind::ReinitCommand { stream },
        MuxEvent::ReinitComplete { stream, epoch } => EventKind::ReinitComplete { stream, epoch },
        MuxEvent::EpochAdvance { stream, epoch } => EventKind::EpochAdvance { stream, epoch },
        MuxEvent::ContinuityViolation { step, bound } => EventKind::ContinuityViolation { step, bound },
    }
}

/// Run a validated scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Telemetry, ConfigError> {
    cfg.validate()?;
    let tick_rate = cfg.tick_rate;
    let imu_rate = cfg.imu.rate;
    let per_tick = cfg.imu_per_tick();
    let ticks = opts.max_ticks.map_or(cfg.tick_count(), |m| m.min(cfg.tick_count()));
    let dt_imu = 1.0 / imu_rate;

    let reference = cfg.trajectory.reference(0.0);
    let (mut plant, mut behavior) = if cfg.mission.takeoff {
        let ground = Vector3::new(reference.p.x, reference.p.y, 0.0);
        (Plant::new(0.0, ground, Vector3::zeros()), BehaviorState::on_ground(reference.p.z))
    } else {
        (Plant::new(0.0, reference.p, reference.v), BehaviorState::airborne())
    };
    let start = plant.state_at(0.0);
    let mut mux = Mux::new(mux_config(cfg), start.pose(), start.world_velocity(), 0.0).map_err(|e| {
        ConfigError::Invalid {
            problems: vec![("ranking".into(), e.to_string())],
        }
    })?;

    let failures_of = |target: &str| -> Vec<&FailureEvent> {
        cfg.failures.iter().filter(|f| f.stream.as_str() == target).collect()
    };
    let mut streams: Vec<SimStream> = cfg
        .streams
        .iter()
        .map(|spec| SimStream {
            spec,
            failures: failures_of(spec.id.as_str()),
            epoch: EpochInfo {
                epoch: 0,
                origin: start.pose(),
                start: 0.0,
            },
            rng: substream(cfg.seed, substream_of(&spec.id)),
            next_output: 1,
            schedule: cfg
                .reinit_schedule
                .iter()
                .filter(|r| r.stream == spec.id)
                .map(|r| (r.first(), r.period, 0))
                .collect(),
            restart_at: None,
        })
        .collect();
    let imu_failures = failures_of(IMU_TARGET);
    let ranger_failures = failures_of(RANGER_TARGET);
    let mut imu_rng = substream(cfg.seed, IMU_SUBSTREAM);
    let mut ranger_rng = substream(cfg.seed, RANGER_SUBSTREAM);
    let mut next_range: u64 = 1;

    let mut rows = Vec::with_capacity(ticks as usize);
    let mut events = Vec::new();
    let mut cmd = ControlCommand::hover();
    let mut service = None;
    let mut imu_index: u64 = 0;
    let wall_start = Instant::now();
    info!("running '{}' for {ticks} ticks (seed {})", cfg.name, cfg.seed);

    for k in 1..=ticks {
        let t_prev = (k - 1) as f64 / tick_rate;
        let t_k = k as f64 / tick_rate;
        let mut inputs = Vec::new();
        let mut touchdown = None;

        for _ in 0..per_tick {
            let t_a = imu_index as f64 / imu_rate;
            imu_index += 1;
            let t_b = imu_index as f64 / imu_rate;
            plant.t = t_a;
            plant.apply(&cmd, &cfg.platform);

            for s in &mut streams {
                loop {
                    let t_out = s.next_output_time();
                    let t_sched = s.next_scheduled().filter(|t| *t <= t_b);
                    let t_restart = s.restart_at.filter(|t| *t <= t_b);
                    if let Some(t) = t_restart.filter(|t| *t <= t_out) {
                        let origin = plant.state_at(t - t_a).pose();
                        s.restart(t, origin);
                        s.restart_at = None;
                        continue;
                    }
                    if let Some(t) = t_sched.filter(|t| *t <= t_out) {
                        s.pop_scheduled(t);
                        // A commanded restart supersedes the operator's.
                        if s.restart_at.is_none() {
                            let origin = plant.state_at(t - t_a).pose();
                            s.restart(t, origin);
                        }
                        continue;
                    }
                    if t_out > t_b {
                        break;
                    }
                    s.next_output += 1;
                    if s.restart_at.is_some() {
                        continue;
                    }
                    let mut gt = plant.state_at(t_out - t_a);
                    gt.stamp = t_out;
                    if let Some(msg) = simulate_stream(&gt, s.spec, &s.failures, &s.epoch, &mut s.rng) {
                        inputs.push(MuxInput::Odometry(msg));
                    }
                }
            }

            if let Some(r) = &cfg.ranger {
                loop {
                    let t_r = next_range as f64 / r.rate;
                    if t_r > t_b {
                        break;
                    }
                    next_range += 1;
                    if gap_active(&ranger_failures, t_r) {
                        continue;
                    }
                    let mut gt = plant.state_at(t_r - t_a);
                    gt.stamp = t_r;
                    let range = simulate_range(&gt, r, &mut ranger_rng);
                    inputs.push(MuxInput::Range { stamp: t_r, range });
                }
            }

            if !gap_active(&imu_failures, t_b) {
                let mut gt = plant.imu_truth(dt_imu);
                gt.stamp = t_b;
                inputs.push(MuxInput::Imu(simulate_imu(&gt, &cfg.imu, &mut imu_rng)));
            }

            if let Some(td) = plant.advance(dt_imu) {
                touchdown = Some(td);
            }
            plant.t = t_b;
        }

        for f in &cfg.failures {
            let starts = f.t_start > t_prev || (k == 1 && f.t_start <= t_prev);
            if starts && f.t_start <= t_k {
                events.push(EventRecord {
                    t: t_k,
                    kind: EventKind::FailureStart {
                        stream: f.stream.clone(),
                        mode: f.mode.name().into(),
                    },
                });
            }
            if f.t_end > t_prev && f.t_end <= t_k {
                events.push(EventRecord {
                    t: t_k,
                    kind: EventKind::FailureEnd {
                        stream: f.stream.clone(),
                        mode: f.mode.name().into(),
                    },
                });
            }
        }

        let out = mux.step(t_k, &inputs);
        for id in &out.reinit_commands {
            if let Some(s) = streams.iter_mut().find(|s| &s.spec.id == id) {
                let at = after_gaps(&s.failures, t_k + cfg.lifecycle.reinit_delay);
                s.restart_at = Some(at);
            }
        }
        events.extend(out.events.iter().cloned().map(|e| EventRecord { t: t_k, kind: event_of(e) }));

        if service != Some(out.service_hint) {
            if let Some(from) = service {
                events.push(EventRecord {
                    t: t_k,
                    kind: EventKind::Service {
                        from,
                        to: out.service_hint,
                    },
                });
            }
            service = Some(out.service_hint);
        }
        let before = behavior.active;
        let (next, next_cmd) = behavior_step(
            &behavior,
            out.service_hint,
            &out.quality,
            &out.state,
            &cfg.trajectory,
            t_k,
            &cfg.behavior,
        );
        behavior = next;
        cmd = next_cmd;
        if behavior.active != before {
            info!("t={t_k:.3} behavior {} -> {}", before.as_str(), behavior.active.as_str());
            events.push(EventRecord {
                t: t_k,
                kind: EventKind::Behavior {
                    from: before,
                    to: behavior.active,
                },
            });
        }
        if let Some(td) = touchdown {
            info!("t={:.3} touchdown at {:.3} m/s", td.stamp, td.speed);
            events.push(EventRecord {
                t: t_k,
                kind: EventKind::Touchdown { speed: td.speed },
            });
        }

        let gt = plant.state_at(0.0);
        let est_v = out.state.world_velocity();
        rows.push(TickRow {
            t: t_k,
            gt_p: gt.p.into(),
            gt_v: plant.v.into(),
            gt_yaw: gt.r.yaw(),
            est_p: out.state.p.into(),
            est_v: est_v.into(),
            est_yaw: out.state.r.yaw(),
            est_cov_trace: out.position_cov_trace,
            quality: out.quality,
            channel: out.channel.clone(),
            service: out.service_hint,
            behavior: behavior.active,
            cmd_mode: cmd.mode,
            cmd_loops: cmd.loops,
            cmd_accel: cmd.accel.into(),
            cmd_yaw_rate: cmd.yaw_rate,
            streams: out
                .streams
                .iter()
                .map(|s| StreamColumns {
                    state: s.state,
                    epoch: s.init_epoch,
                    raw: s.raw_pose.map_or([f64::NAN; 3], |p| p.t.into()),
                    verdict: s.verdict,
                    check: s.failing_check,
                    cov_trace: s.filter_cov_trace,
                })
                .collect(),
        });

        if opts.real_time {
            let due = wall_start + Duration::from_secs_f64(t_k);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }

    Ok(Telemetry {
        header: header(cfg),
        ticks: rows,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::{Behavior, MobilityService};
    use crate::sim::scenario::bundled;
    use crate::streams::LifecycleState;

    fn short(name: &str, seconds: f64) -> Telemetry {
        let cfg = bundled(name).unwrap();
        let opts = RunOptions {
            max_ticks: Some((seconds * cfg.tick_rate) as u64),
            real_time: false,
        };
        run_scenario(&cfg, &opts).unwrap()
    }

    #[test]
    fn one_row_per_tick_at_exact_stamps() {
        let t = short("hover", 2.0);
        assert_eq!(t.ticks.len(), 200);
        for (k, row) in t.ticks.iter().enumerate() {
            assert_eq!(row.t, (k + 1) as f64 / 100.0);
        }
    }

    #[test]
    fn substreams_are_isolated() {
        // Adding a stream must not perturb the noise of the others.
        let base = bundled("fig7_reinit").unwrap();
        let mut more = base.clone();
        let mut extra = base.streams[0].clone();
        extra.id = "extra".into();
        more.streams.push(extra);
        more.ranking.0.push("extra".into());
        let opts = RunOptions {
            max_ticks: Some(50),
            real_time: false,
        };
        let a = run_scenario(&base, &opts).unwrap();
        let b = run_scenario(&more, &opts).unwrap();
        let raw = |t: &Telemetry| -> Vec<[u64; 3]> {
            t.ticks.iter().map(|r| r.streams[0].raw.map(f64::to_bits)).collect()
        };
        assert_eq!(raw(&a), raw(&b));
        assert_ne!(substream_of(&"lo".into()), substream_of(&"extra".into()));
    }

    #[test]
    fn gap_silences_stream_and_commands_reinit_after_gap() {
        let mut cfg = bundled("hover").unwrap();
        cfg.failures = vec![FailureEvent {
            stream: cfg.streams[0].id.clone(),
            t_start: 2.0,
            t_end: 5.0,
            mode: FailureMode::Gap,
        }];
        let opts = RunOptions {
            max_ticks: Some(800),
            real_time: false,
        };
        let t = run_scenario(&cfg, &opts).unwrap();
        let id = cfg.streams[0].id.clone();
        let fail = t
            .events
            .iter()
            .find(|e| matches!(&e.kind, EventKind::HardFail { stream, .. } if *stream == id))
            .expect("gap detected");
        assert!(fail.t > 2.0 && fail.t < 2.5);
        let complete = t
            .events
            .iter()
            .find(|e| matches!(&e.kind, EventKind::ReinitComplete { stream, .. } if *stream == id))
            .expect("reinit completes");
        // The restart waits for the end of the gap.
        assert!(complete.t >= 5.0 && complete.t < 5.0 + 0.1, "{}", complete.t);
        let last = t.ticks.last().unwrap();
        assert_eq!(last.streams[0].state, LifecycleState::Healthy);
        assert_eq!(last.streams[0].epoch, 1);
    }

    #[test]
    fn imu_gap_forces_open_loop_landing() {
        let mut cfg = bundled("hover").unwrap();
        cfg.mission.takeoff = false;
        cfg.failures = vec![FailureEvent {
            stream: IMU_TARGET.into(),
            t_start: 1.0,
            t_end: 1.5,
            mode: FailureMode::Gap,
        }];
        let t = run_scenario(
            &cfg,
            &RunOptions {
                max_ticks: Some(200),
                real_time: false,
            },
        )
        .unwrap();
        let row = t.ticks.iter().find(|r| r.service == MobilityService::OpenLoopLand).unwrap();
        assert!(row.t > 1.0 && row.t <= 1.0 + cfg.imu.timeout + 0.02);
        assert_eq!(row.behavior, Behavior::AttitudeLand);
        assert_eq!(t.ticks.last().unwrap().behavior, Behavior::AttitudeLand);
    }

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let mut cfg = bundled("hover").unwrap();
        cfg.tick_rate = 0.0;
        assert!(matches!(
            run_scenario(&cfg, &RunOptions::default()),
            Err(ConfigError::Invalid { .. })
        ));
    }
}
