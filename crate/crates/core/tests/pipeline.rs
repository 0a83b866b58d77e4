//! End-to-end runs of the bundled scenarios through files and back.

use std::path::PathBuf;

use hero_core::harness::{compute_metrics, run_to_dir, MetricsReport, Telemetry};
use hero_core::sim::scenario::{bundled, bundled_names};
use hero_core::sim::{run_scenario, RunOptions};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"))
}

/// Availability and largest step read straight from the CSV text.
fn csv_oracle(csv_text: &str) -> (f64, f64) {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (q, x, y, z) = (col("q_p"), col("est_x"), col("est_y"), col("est_z"));
    let (mut n, mut good, mut max_step) = (0usize, 0usize, 0.0f64);
    let mut prev: Option<[f64; 3]> = None;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        n += 1;
        if f[q] == "1" {
            good += 1;
        }
        let p = [x, y, z].map(|c| f[c].parse::<f64>().unwrap());
        if let Some(o) = prev {
            let d = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2) + (p[2] - o[2]).powi(2)).sqrt();
            max_step = max_step.max(d);
        }
        prev = Some(p);
    }
    (good as f64 / n as f64, max_step)
}

fn csv_bytes(t: &Telemetry) -> Vec<u8> {
    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    out
}

#[test]
fn bundled_scenarios_round_trip_and_match_goldens() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for name in bundled_names() {
        let cfg = bundled(name).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, m) = run_to_dir(&cfg, &RunOptions::default(), dir.path()).unwrap();

        // Raw columns hold NaN before a stream's first output, so compare the
        // re-serialized bytes rather than the values.
        let back = Telemetry::read_dir(dir.path()).unwrap();
        assert_eq!(csv_bytes(&back), csv_bytes(&t), "{name}: telemetry does not survive the files");
        assert_eq!(back.events, t.events, "{name}");
        let again = compute_metrics(&back);
        assert_eq!(again, m, "{name}: metrics differ after reading back");

        let csv_text = std::fs::read_to_string(dir.path().join("telemetry.csv")).unwrap();
        let (availability, max_step) = csv_oracle(&csv_text);
        assert!((availability - m.availability).abs() <= 1e-12, "{name}");
        assert!((max_step - m.max_discontinuity).abs() <= 1e-12, "{name}");

        let written = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let path = golden_path(name);
        if update {
            std::fs::write(&path, &written).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing {}; run with UPDATE_GOLDEN=1", path.display()));
        let golden: MetricsReport = serde_json::from_str(&golden).unwrap();
        assert_eq!(golden, m, "{name}: metrics drifted from the golden file");
    }
}

#[test]
fn hover_never_switches() {
    let t = run_scenario(&bundled("hover").unwrap(), &RunOptions::default()).unwrap();
    let m = compute_metrics(&t);
    assert_eq!(m.availability, 1.0);
    assert_eq!(m.switch_count, 0);
    assert_eq!(m.continuity_violations, 0);
}

#[test]
fn losing_every_stream_lands_safely() {
    let t = run_scenario(&bundled("all_fail_land").unwrap(), &RunOptions::default()).unwrap();
    let m = compute_metrics(&t);
    assert!(m.landed_safely);
    assert!(m.availability < 1.0);
    assert_eq!(m.loop_violations, 0);
}

#[test]
fn tick_limit_truncates_the_run() {
    let cfg = bundled("hover").unwrap();
    let opts = RunOptions {
        max_ticks: Some(50),
        real_time: false,
    };
    let short = run_scenario(&cfg, &opts).unwrap();
    let full = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(short.ticks.len(), 50);
    let mut head = full.clone();
    head.ticks.truncate(50);
    assert_eq!(csv_bytes(&short), csv_bytes(&head));
}

#[test]
fn seed_changes_the_stream_noise() {
    let mut cfg = bundled("hover").unwrap();
    let a = run_scenario(&cfg, &RunOptions::default()).unwrap();
    cfg.seed += 1;
    let b = run_scenario(&cfg, &RunOptions::default()).unwrap();
    assert_ne!(a.ticks[100].streams[0].raw, b.ticks[100].streams[0].raw);
    assert_eq!(a.ticks[100].t, b.ticks[100].t);
}

/// Every field the config serializes is described by the published schema.
#[test]
fn schema_covers_every_config_field() {
    let schema_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schema/scenario.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    for name in bundled_names() {
        let cfg = serde_json::to_value(bundled(name).unwrap()).unwrap();
        for (key, value) in cfg.as_object().unwrap() {
            let described = &schema["properties"][key];
            assert!(!described.is_null(), "schema lacks '{key}'");
            if let (Some(fields), Some(props)) = (value.as_object(), described["properties"].as_object()) {
                for sub in fields.keys() {
                    assert!(props.contains_key(sub), "schema lacks '{key}.{sub}'");
                }
            }
        }
    }
}
