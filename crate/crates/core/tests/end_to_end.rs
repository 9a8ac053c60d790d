use std::fs;
use std::path::Path;

use terratrack::exec::Exec;
use terratrack::fusion::{
    read_streams_csv, run_experiment, run_fusion, write_estimates_csv, write_streams_csv,
    FusionScenario,
};
use terratrack::metrics::{detection_report, safety_stats, truth_obstacles};
use terratrack::sim::{run_survey, Method, ScenarioConfig, World};

fn scenarios() -> Vec<(String, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn shipped_scenarios_parse() {
    let all = scenarios();
    assert!(all.len() >= 5);
    for (name, text) in all {
        let ok = if name.starts_with("fusion") {
            FusionScenario::from_json(&text).map(|_| ())
        } else {
            ScenarioConfig::from_json(&text).map(|_| ())
        };
        ok.unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

fn small_world(json: &str) -> World {
    World::build(
        &ScenarioConfig::from_json(json).unwrap(),
        5,
        Exec::Sequential,
    )
    .unwrap()
}

const BUMPY: &str = r#"{
  "area": { "min": [0, 0], "max": [3, 1.2] },
  "terrain": { "kind": "fractal", "roughness": 0.08, "base_wavelength": 1.5 },
  "map": { "margin": 1.0 },
  "targets": [ { "position": [1.5, 0.6] } ],
  "detector": { "noise_sigma": 0.01 }
}"#;

#[test]
fn sequential_and_parallel_surveys_are_identical() {
    let world = small_world(BUMPY);
    for method in [Method::Proposed, Method::Aligned(6)] {
        let a = run_survey(&world, method, Exec::Sequential).unwrap();
        let b = run_survey(&world, method, Exec::Parallel).unwrap();
        assert_eq!(a.log, b.log, "{method}");
    }
}

#[test]
fn buried_target_is_found_where_it_is() {
    let world = small_world(BUMPY);
    let out = run_survey(&world, Method::Proposed, Exec::default()).unwrap();
    let t = world.scenario.targets[0].xy();
    let r = detection_report(&out.map, &[t], None);
    assert_eq!(r.detected(), 1);
    assert!(r.targets[0].error.unwrap() < 0.15);
    let s = safety_stats(
        &world,
        &out.log,
        &out.map,
        &truth_obstacles(&world, Exec::default()).unwrap(),
    )
    .unwrap();
    assert_eq!(s.clearance_violations, 0);
    assert!(s.coverage_fraction > 0.95, "{s:?}");
}

#[test]
fn fusion_replays_identically_from_the_stream_file() {
    let sc = FusionScenario::from_json(
        r#"{ "path": { "waypoints": [[0, 0, 1], [4, 0, 1], [4, 2, 1]], "speed": 1.0 },
             "gnss": { "extrinsic_yaw_deg": -40, "dropouts": [[2, 3]] } }"#,
    )
    .unwrap();
    let exp = run_experiment(&sc, 9).unwrap();
    let mut file = Vec::new();
    write_streams_csv(&exp.streams, &mut file).unwrap();
    let replayed = read_streams_csv(file.as_slice()).unwrap();
    let again = run_fusion(&replayed, &sc.fusion).unwrap();
    let csv = |e: &[terratrack::fusion::Estimate]| {
        let mut b = Vec::new();
        write_estimates_csv(e, &mut b).unwrap();
        b
    };
    let (a, b) = (csv(&exp.run.estimates), csv(&again.estimates));
    assert_eq!(exp.streams, replayed);
    assert_eq!(a, b);
    assert!(exp.evaluation.final_yaw_error_deg.unwrap() < 2.0);
}

#[test]
fn drifting_loop_closes_within_gnss_noise() {
    let sc = FusionScenario::from_json(
        r#"{ "path": { "waypoints": [[0, 0, 1], [20, 0, 1], [20, 10, 1], [0, 10, 1], [0, 0, 1]],
                       "speed": 1.0, "hover_end_s": 3 },
             "odometry": { "drift_fraction": 0.01, "degenerate": [{ "start": 0, "end": 1000, "axis": [1, 0, 0] }] },
             "gnss": { "sigma": 0.02 } }"#,
    )
    .unwrap();
    let e = run_experiment(&sc, 4).unwrap().evaluation;
    // 1% of the 60 m loop, all along x.
    assert!(
        (e.odometry.closure.abs() - 0.6).abs() < 0.05,
        "{:?}",
        e.odometry
    );
    assert!(e.fused.closure.abs() < 3.0 * 0.02, "{:?}", e.fused);
}
