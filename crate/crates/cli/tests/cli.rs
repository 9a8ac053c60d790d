use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terratrack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn terratrack")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SURVEY: &str = r#"{
  "area": { "min": [0, 0], "max": [2.4, 1.2] },
  "terrain": { "kind": "rolling", "amplitude": 0.1, "wavelength": 2.0 },
  "map": { "margin": 1.0 },
  "targets": [ { "position": [1.2, 0.6] } ]
}"#;

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn ablate_writes_logs_summary_heatmaps_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "small.json", SMALL_SURVEY);
    let out = tmp.path().join("run");
    let o = run(&[
        "ablate",
        "--scenario",
        s(&sc),
        "--out",
        s(&out),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    for m in ["proposed", "aligned1", "aligned6", "fixed"] {
        assert!(out.join(format!("{m}_log.csv")).is_file(), "{m} log");
        let ppm = fs::read(out.join(format!("{m}_signal.ppm"))).unwrap();
        assert!(ppm.starts_with(b"P6\n"));
        let pgm = fs::read(out.join(format!("{m}_signal.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(out.join("report.json").is_file());

    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["command"], "ablate");
    let text = fs::read(&sc).unwrap();
    assert_eq!(m["scenario_sha256"], terratrack_cli::sha256_hex(&text));
    // Each listed artifact exists and its hash matches.
    let artifacts = m["artifacts"].as_array().unwrap();
    // 4 logs, summary, report, and ppm/pgm/scale for two heatmaps per method.
    assert_eq!(artifacts.len(), 4 + 2 + 4 * 2 * 3);
    for a in artifacts {
        let bytes = fs::read(out.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(
            a["sha256"].as_str().unwrap(),
            terratrack_cli::sha256_hex(&bytes)
        );
    }
}

#[test]
fn ablate_rerun_gives_identical_summary() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "small.json", SMALL_SURVEY);
    let summaries: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|d| {
            let out = tmp.path().join(d);
            let o = run(&[
                "ablate",
                "--scenario",
                s(&sc),
                "--out",
                s(&out),
                "--methods",
                "proposed,fixed",
                "--emit",
                "csv",
            ]);
            assert!(o.status.success());
            assert!(!out.join("proposed_signal.ppm").exists());
            fs::read(out.join("summary.csv")).unwrap()
        })
        .collect();
    assert_eq!(summaries[0], summaries[1]);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let sc = write(tmp.path(), "small.json", SMALL_SURVEY);
    let o = run(&[
        "ablate",
        "--scenario",
        s(&sc),
        "--out",
        s(&tmp.path().join("x")),
        "--methods",
        "proposed,hover",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("unknown method 'hover'"), "{err}");
    assert!(err.contains("--help"));
}

#[test]
fn bad_scenarios_and_flags_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let missing = tmp.path().join("nope.json");
    assert_eq!(
        run(&["ablate", "--scenario", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    let bad = write(
        tmp.path(),
        "bad.json",
        r#"{ "area": { "min": [0, 0], "max": [1, 1] }, "terrain": { "kind": "ramp", "angle_deg": 95 } }"#,
    );
    assert_eq!(
        run(&["terrain", "--scenario", s(&bad), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    let garbled = write(tmp.path(), "garbled.json", "{ not json");
    assert_eq!(
        run(&["fuse", "--scenario", s(&garbled), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["ablate", "--emit", "csv,movie"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["survey"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let sc = write(
        tmp.path(),
        "flat.json",
        r#"{ "area": { "min": [0, 0], "max": [1, 1] }, "terrain": { "kind": "flat" } }"#,
    );
    let file = write(tmp.path(), "occupied", "");
    let o = run(&[
        "terrain",
        "--scenario",
        s(&sc),
        "--out",
        s(&file.join("sub")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flat_terrain_is_constant_and_missing_dirs_are_created() {
    let tmp = TempDir::new().unwrap();
    let sc = write(
        tmp.path(),
        "flat.json",
        r#"{ "area": { "min": [0, 0], "max": [2, 1] }, "terrain": { "kind": "flat" } }"#,
    );
    let out = tmp.path().join("deep/er/dir");
    let o = run(&["terrain", "--scenario", s(&sc), "--out", s(&out)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("terrain.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("x,y,z"));
    let z: Vec<&str> = rows.map(|r| r.rsplit(',').next().unwrap()).collect();
    assert!(z.len() > 100);
    assert!(z.iter().all(|v| *v == "0.000000"));
    assert!(out.join("terrain.ppm").is_file());
    assert_eq!(manifest(&out)["seed"], 7);
}

#[test]
fn seeded_fractal_terrain_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let sc = write(
        tmp.path(),
        "fractal.json",
        r#"{ "area": { "min": [0, 0], "max": [3, 2] }, "terrain": { "kind": "fractal", "craters": 2 } }"#,
    );
    let bytes = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        assert!(run(&[
            "terrain",
            "--scenario",
            s(&sc),
            "--out",
            s(&out),
            "--seed",
            seed,
            "--emit",
            "csv"
        ])
        .status
        .success());
        fs::read(out.join("terrain.csv")).unwrap()
    };
    let (a, b, c) = (bytes("a", "11"), bytes("b", "11"), bytes("c", "12"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn fuse(tmp: &TempDir, name: &str, scenario: &str) -> serde_json::Value {
    let sc = write(tmp.path(), &format!("{name}.json"), scenario);
    let out = tmp.path().join(name);
    let o = run(&["fuse", "--scenario", s(&sc), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "streams.csv",
        "estimates.csv",
        "odometry.csv",
        "trace.csv",
        "fused_error.ppm",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    serde_json::from_str(&fs::read_to_string(out.join("fusion_report.json")).unwrap()).unwrap()
}

#[test]
fn dropout_estimates_cover_the_timeline() {
    let tmp = TempDir::new().unwrap();
    let r = fuse(
        &tmp,
        "dropout",
        r#"{ "path": { "waypoints": [[0, 0, 1], [6, 0, 1], [6, 3, 1]], "speed": 1.0 },
             "gnss": { "dropouts": [[3, 6]] } }"#,
    );
    let gap = r["max_estimate_gap"].as_f64().unwrap();
    assert!(gap <= 0.05 + 1e-9, "gap {gap}");
    assert_eq!(r["estimates"], r["odometry"]["matched"]);
}

#[test]
fn zero_noise_fusion_is_exact() {
    let tmp = TempDir::new().unwrap();
    let r = fuse(
        &tmp,
        "quiet",
        r#"{ "path": { "waypoints": [[0, 0, 1], [3, 0, 1], [3, 2, 1]], "speed": 1.0 },
             "odometry": { "sigma_trans": 0, "sigma_rot_deg": 0, "drift_fraction": 0 },
             "gnss": { "sigma": 0 } }"#,
    );
    let rmse = r["fused"]["rmse"].as_f64().unwrap();
    assert!(rmse < 1e-6, "rmse {rmse}");
}

#[test]
fn fusion_beats_drifting_odometry() {
    let tmp = TempDir::new().unwrap();
    let r = fuse(
        &tmp,
        "drift",
        r#"{ "path": { "waypoints": [[0, 0, 1], [8, 0, 1], [8, 4, 1], [0, 4, 1], [0, 0, 1]], "speed": 1.0 },
             "odometry": { "drift_fraction": 0.03, "degenerate": [{ "start": 0, "end": 12, "axis": [1, 0, 0] }] } }"#,
    );
    let fused = r["fused"]["closure"].as_f64().unwrap().abs();
    let odom = r["odometry"]["closure"].as_f64().unwrap().abs();
    assert!(fused < odom, "fused {fused} vs odometry {odom}");
}
