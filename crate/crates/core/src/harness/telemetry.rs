//! Run telemetry: one CSV row per tick plus a JSONL event log.
//!
//! Floats are written with 17 significant digits so that a reader recovers
//! every value bit for bit. The first event line is `scenario_start` and
//! carries everything metrics need beyond the tick rows.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::health::{CheckId, Verdict};
use crate::mobility::{Behavior, ClosedLoops, ControlMode, MobilityService};
use crate::sim::scenario::FailureEvent;
use crate::state::StateQuality;
use crate::streams::{LifecycleState, StreamId};

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file} line {line}: {message}")]
    Malformed {
        file: &'static str,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Run parameters recorded ahead of the tick data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: String,
    pub seed: u64,
    pub tick_rate: f64,
    pub duration: f64,
    pub v_max: f64,
    pub descent_rate: f64,
    pub safety_timeout: f64,
    pub streams: Vec<StreamId>,
    pub failures: Vec<FailureEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    ScenarioStart(RunHeader),
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
        detail: Option<f64>,
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
    FailureStart {
        stream: StreamId,
        mode: String,
    },
    FailureEnd {
        stream: StreamId,
        mode: String,
    },
    Service {
        from: MobilityService,
        to: MobilityService,
    },
    Behavior {
        from: Behavior,
        to: Behavior,
    },
    Touchdown {
        speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamColumns {
    pub state: LifecycleState,
    pub epoch: u32,
    /// Latest raw stream-local position; NaN before the first message.
    pub raw: [f64; 3],
    pub verdict: Verdict,
    pub check: Option<CheckId>,
    pub cov_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub t: f64,
    pub gt_p: [f64; 3],
    /// World frame.
    pub gt_v: [f64; 3],
    pub gt_yaw: f64,
    pub est_p: [f64; 3],
    /// World frame.
    pub est_v: [f64; 3],
    pub est_yaw: f64,
    pub est_cov_trace: f64,
    pub quality: StateQuality,
    pub channel: Option<StreamId>,
    pub service: MobilityService,
    pub behavior: Behavior,
    pub cmd_mode: ControlMode,
    pub cmd_loops: ClosedLoops,
    pub cmd_accel: [f64; 3],
    pub cmd_yaw_rate: f64,
    pub streams: Vec<StreamColumns>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub header: RunHeader,
    pub ticks: Vec<TickRow>,
    /// Excludes the `scenario_start` record, which is `header`.
    pub events: Vec<EventRecord>,
}

const BASE_COLUMNS: [&str; 30] = [
    "t",
    "gt_x",
    "gt_y",
    "gt_z",
    "gt_vx",
    "gt_vy",
    "gt_vz",
    "gt_yaw",
    "est_x",
    "est_y",
    "est_z",
    "est_vx",
    "est_vy",
    "est_vz",
    "est_yaw",
    "est_cov_trace",
    "q_p",
    "q_gz",
    "q_vxy",
    "q_vz",
    "q_att",
    "channel",
    "service",
    "behavior",
    "cmd_mode",
    "cmd_loops",
    "cmd_ax",
    "cmd_ay",
    "cmd_az",
    "cmd_yaw_rate",
];

const STREAM_COLUMNS: [&str; 8] = ["state", "epoch", "raw_x", "raw_y", "raw_z", "verdict", "check", "cov_trace"];

/// Placeholder for an absent channel or check.
const NONE: &str = "-";

pub fn columns(streams: &[StreamId]) -> Vec<String> {
    let mut out: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for s in streams {
        for c in STREAM_COLUMNS {
            out.push(format!("{s}_{c}"));
        }
    }
    out
}

/// 17 significant digits; parses back to the identical value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn bit(q: crate::state::Quality) -> &'static str {
    if q.is_good() {
        "1"
    } else {
        "0"
    }
}

impl TickRow {
    fn record(&self) -> Vec<String> {
        let mut r = Vec::with_capacity(BASE_COLUMNS.len() + STREAM_COLUMNS.len() * self.streams.len());
        r.push(fmt_f64(self.t));
        r.extend(self.gt_p.iter().chain(&self.gt_v).map(|x| fmt_f64(*x)));
        r.push(fmt_f64(self.gt_yaw));
        r.extend(self.est_p.iter().chain(&self.est_v).map(|x| fmt_f64(*x)));
        r.push(fmt_f64(self.est_yaw));
        r.push(fmt_f64(self.est_cov_trace));
        let q = &self.quality;
        r.extend([q.p, q.gz, q.vxy, q.vz, q.att].map(|b| bit(b).to_string()));
        r.push(self.channel.as_ref().map_or(NONE.to_string(), |c| c.to_string()));
        r.push(self.service.as_str().to_string());
        r.push(self.behavior.as_str().to_string());
        r.push(self.cmd_mode.as_str().to_string());
        r.push(self.cmd_loops.tag());
        r.extend(self.cmd_accel.iter().map(|x| fmt_f64(*x)));
        r.push(fmt_f64(self.cmd_yaw_rate));
        for s in &self.streams {
            r.push(s.state.as_str().to_string());
            r.push(s.epoch.to_string());
            r.extend(s.raw.iter().map(|x| fmt_f64(*x)));
            r.push(s.verdict.as_str().to_string());
            r.push(s.check.map_or(NONE.to_string(), |c| c.as_str().to_string()));
            r.push(fmt_f64(s.cov_trace));
        }
        r
    }

    fn parse(fields: &csv::StringRecord, n_streams: usize, line: usize) -> Result<Self, TelemetryError> {
        let bad = |message: String| TelemetryError::Malformed {
            file: TELEMETRY_FILE,
            line,
            message,
        };
        let expected = BASE_COLUMNS.len() + STREAM_COLUMNS.len() * n_streams;
        if fields.len() != expected {
            return Err(bad(format!("expected {expected} fields, got {}", fields.len())));
        }
        let f = |i: usize| -> Result<f64, TelemetryError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", i + 1)))
        };
        let v3 = |i: usize| -> Result<[f64; 3], TelemetryError> { Ok([f(i)?, f(i + 1)?, f(i + 2)?]) };
        let q = |i: usize| -> Result<bool, TelemetryError> {
            match &fields[i] {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(bad(format!("quality bit '{other}'"))),
            }
        };
        let quality = StateQuality::from_bits([q(16)?, q(17)?, q(18)?, q(19)?, q(20)?]);
        let channel = match &fields[21] {
            NONE => None,
            c => Some(StreamId::new(c)),
        };
        let service = MobilityService::parse(&fields[22]).ok_or_else(|| bad(format!("service '{}'", &fields[22])))?;
        let behavior = Behavior::parse(&fields[23]).ok_or_else(|| bad(format!("behavior '{}'", &fields[23])))?;
        let cmd_mode = ControlMode::parse(&fields[24]).ok_or_else(|| bad(format!("mode '{}'", &fields[24])))?;
        let cmd_loops = ClosedLoops::parse_tag(&fields[25]).ok_or_else(|| bad(format!("loops '{}'", &fields[25])))?;
        let mut streams = Vec::with_capacity(n_streams);
        for k in 0..n_streams {
            let o = BASE_COLUMNS.len() + k * STREAM_COLUMNS.len();
            let state = LifecycleState::parse(&fields[o]).ok_or_else(|| bad(format!("state '{}'", &fields[o])))?;
            let epoch = fields[o + 1]
                .parse::<u32>()
                .map_err(|e| bad(format!("epoch: {e}")))?;
            let verdict = Verdict::parse(&fields[o + 5]).ok_or_else(|| bad(format!("verdict '{}'", &fields[o + 5])))?;
            let check = match &fields[o + 6] {
                NONE => None,
                c => Some(CheckId::parse(c).ok_or_else(|| bad(format!("check '{c}'")))?),
            };
            streams.push(StreamColumns {
                state,
                epoch,
                raw: v3(o + 2)?,
                verdict,
                check,
                cov_trace: f(o + 7)?,
            });
        }
        Ok(TickRow {
            t: f(0)?,
            gt_p: v3(1)?,
            gt_v: v3(4)?,
            gt_yaw: f(7)?,
            est_p: v3(8)?,
            est_v: v3(11)?,
            est_yaw: f(14)?,
            est_cov_trace: f(15)?,
            quality,
            channel,
            service,
            behavior,
            cmd_mode,
            cmd_loops,
            cmd_accel: v3(26)?,
            cmd_yaw_rate: f(29)?,
            streams,
        })
    }
}

impl Telemetry {
    pub fn events_of<'a>(&'a self, pred: impl Fn(&EventKind) -> bool + 'a) -> impl Iterator<Item = &'a EventRecord> {
        self.events.iter().filter(move |e| pred(&e.kind))
    }

    pub fn stream_index(&self, id: &StreamId) -> Option<usize> {
        self.header.streams.iter().position(|s| s == id)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), TelemetryError> {
        let mut out = csv::WriterBuilder::new().from_writer(w);
        out.write_record(columns(&self.header.streams))?;
        for row in &self.ticks {
            out.write_record(row.record())?;
        }
        out.flush().map_err(|source| TelemetryError::Io {
            path: TELEMETRY_FILE.into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_events(&self, mut w: impl Write) -> Result<(), TelemetryError> {
        let start = EventRecord {
            t: 0.0,
            kind: EventKind::ScenarioStart(self.header.clone()),
        };
        for e in std::iter::once(&start).chain(&self.events) {
            let line = serde_json::to_string(e).expect("events serialize");
            writeln!(w, "{line}").map_err(|source| TelemetryError::Io {
                path: EVENTS_FILE.into(),
                source,
            })?;
        }
        Ok(())
    }

    /// Write `telemetry.csv` and `events.jsonl` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), TelemetryError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv_path = dir.join(TELEMETRY_FILE);
        self.write_csv(BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?))?;
        let ev_path = dir.join(EVENTS_FILE);
        let mut w = BufWriter::new(File::create(&ev_path).map_err(io_err(&ev_path))?);
        self.write_events(&mut w)?;
        w.flush().map_err(io_err(&ev_path))?;
        Ok(())
    }

    pub fn read(csv_src: impl std::io::Read, events_src: impl BufRead) -> Result<Self, TelemetryError> {
        let mut records = Vec::new();
        for (i, line) in events_src.lines().enumerate() {
            let line = line.map_err(|source| TelemetryError::Io {
                path: EVENTS_FILE.into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EventRecord = serde_json::from_str(&line).map_err(|e| TelemetryError::Malformed {
                file: EVENTS_FILE,
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        let mut it = records.into_iter();
        let header = match it.next() {
            Some(EventRecord {
                kind: EventKind::ScenarioStart(h),
                ..
            }) => h,
            _ => {
                return Err(TelemetryError::Malformed {
                    file: EVENTS_FILE,
                    line: 1,
                    message: "first event must be scenario_start".into(),
                })
            }
        };
        let events: Vec<EventRecord> = it.collect();

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_src);
        let expected = columns(&header.streams);
        let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if got != expected {
            return Err(TelemetryError::Malformed {
                file: TELEMETRY_FILE,
                line: 1,
                message: "header does not match the streams of scenario_start".into(),
            });
        }
        let mut ticks = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            ticks.push(TickRow::parse(&rec?, header.streams.len(), i + 2)?);
        }
        Ok(Telemetry { header, ticks, events })
    }

    pub fn read_dir(dir: &Path) -> Result<Self, TelemetryError> {
        let csv_path = dir.join(TELEMETRY_FILE);
        let ev_path = dir.join(EVENTS_FILE);
        let csv_file = File::open(&csv_path).map_err(io_err(&csv_path))?;
        let ev_file = File::open(&ev_path).map_err(io_err(&ev_path))?;
        Self::read(BufReader::new(csv_file), BufReader::new(ev_file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::FailureMode;

    fn sample() -> Telemetry {
        let header = RunHeader {
            scenario: "unit".into(),
            seed: 3,
            tick_rate: 100.0,
            duration: 0.02,
            v_max: 3.0,
            descent_rate: 0.3,
            safety_timeout: 3.0,
            streams: vec!["lo".into(), "vio".into()],
            failures: vec![FailureEvent {
                stream: "vio".into(),
                t_start: 0.01,
                t_end: 0.02,
                mode: FailureMode::Jump { offset: [1.0, 0.0, 0.0] },
            }],
        };
        let stream = StreamColumns {
            state: LifecycleState::Healthy,
            epoch: 2,
            raw: [0.1, f64::NAN, -3.0e-17],
            verdict: Verdict::SoftFail,
            check: Some(CheckId::SensorData),
            cov_trace: 1.0 / 3.0,
        };
        let row = TickRow {
            t: 0.01,
            gt_p: [1.0 / 7.0, 2.0, 3.0],
            gt_v: [0.0; 3],
            gt_yaw: -0.0,
            est_p: [std::f64::consts::PI, 1e-300, 2.5],
            est_v: [0.1, 0.2, 0.3],
            est_yaw: 0.25,
            est_cov_trace: 1e-4,
            quality: StateQuality::from_bits([false, true, true, true, true]),
            channel: Some("lo".into()),
            service: MobilityService::Local,
            behavior: Behavior::VelocityHold,
            cmd_mode: ControlMode::Velocity,
            cmd_loops: ClosedLoops::parse_tag("HVWA").unwrap(),
            cmd_accel: [0.01, -0.02, 0.0],
            cmd_yaw_rate: 0.0,
            streams: vec![stream, StreamColumns { check: None, ..stream }],
        };
        let mut row2 = row.clone();
        row2.t = 0.02;
        row2.channel = None;
        Telemetry {
            header,
            ticks: vec![row, row2],
            events: vec![
                EventRecord {
                    t: 0.01,
                    kind: EventKind::HardFail {
                        stream: "vio".into(),
                        check: CheckId::Jump,
                        detail: Some(1.0000000000000002),
                    },
                },
                EventRecord {
                    t: 0.02,
                    kind: EventKind::Switch {
                        from: Some("lo".into()),
                        to: None,
                    },
                },
            ],
        }
    }

    fn same(a: &Telemetry, b: &Telemetry) -> bool {
        // NaN-aware comparison through the serialized form.
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        x == y && a.header == b.header && a.events == b.events
    }

    #[test]
    fn round_trip_is_exact() {
        let t = sample();
        let mut csv_buf = Vec::new();
        let mut ev_buf = Vec::new();
        t.write_csv(&mut csv_buf).unwrap();
        t.write_events(&mut ev_buf).unwrap();
        let back = Telemetry::read(&csv_buf[..], &ev_buf[..]).unwrap();
        assert!(same(&t, &back));
        assert_eq!(back.ticks[0].gt_p[0].to_bits(), (1.0f64 / 7.0).to_bits());
        assert_eq!(back.ticks[0].est_p[1], 1e-300);
        assert!(back.ticks[0].streams[0].raw[1].is_nan());
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e10, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let t = sample();
        let mut csv_buf = Vec::new();
        let mut ev_buf = Vec::new();
        t.write_csv(&mut csv_buf).unwrap();
        let mut other = t.clone();
        other.header.streams.pop();
        other.write_events(&mut ev_buf).unwrap();
        assert!(matches!(
            Telemetry::read(&csv_buf[..], &ev_buf[..]),
            Err(TelemetryError::Malformed { file: TELEMETRY_FILE, .. })
        ));
    }

    #[test]
    fn events_need_a_start_record() {
        let t = sample();
        let mut csv_buf = Vec::new();
        t.write_csv(&mut csv_buf).unwrap();
        let ev = b"{\"t\":0.0,\"event\":\"touchdown\",\"speed\":0.2}\n";
        assert!(matches!(
            Telemetry::read(&csv_buf[..], &ev[..]),
            Err(TelemetryError::Malformed { file: EVENTS_FILE, .. })
        ));
    }
}
