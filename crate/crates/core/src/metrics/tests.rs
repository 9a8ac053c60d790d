use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

use super::*;
use crate::gridmap::DetectorPose;
use crate::sim::{Detection, Method, TickRecord};

fn tick(time: f64, yaw: f64, pitch: f64, detections: Vec<Detection>) -> TickRecord {
    let pose = DetectorPose::new(Vector3::zeros(), yaw, pitch);
    TickRecord {
        time,
        commanded: pose,
        realized: pose,
        cost: 0.0,
        dyaw: 0.0,
        dpitch: 0.0,
        detections,
        over_unobserved: false,
        preferred: false,
        shifted: false,
        stalled: false,
        sample: None,
    }
}

fn log(ticks: Vec<TickRecord>) -> SurveyLog {
    SurveyLog {
        method: Method::Proposed,
        ticks,
        skipped: vec![],
    }
}

fn det(yaw: f64, pitch: f64, cells: &[(usize, usize)]) -> Detection {
    Detection {
        pose: DetectorPose::new(Vector3::zeros(), yaw, pitch),
        cells: cells.iter().map(|&(c, r)| CellIndex::new(c, r)).collect(),
        signal: 0.0,
    }
}

/// 3 m x 3 m map at 0.1 m with z = f(x, y) everywhere.
fn surface(f: impl Fn(f64, f64) -> f64) -> ElevationMap {
    let mut m = ElevationMap::new(Vector2::zeros(), Vector2::new(3.0, 3.0), 0.1).unwrap();
    for c in m.cells().collect::<Vec<_>>() {
        let p = m.cell_center(c);
        m.set_elevation(c, Some(f(p.x, p.y))).unwrap();
    }
    m
}

#[test]
fn nearest_rank_percentile() {
    let v: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(percentile_nearest_rank(&v, 95.0).unwrap(), 19.0);
    assert_eq!(percentile_nearest_rank(&v, 100.0).unwrap(), 20.0);
    assert_eq!(percentile_nearest_rank(&v, 0.0).unwrap(), 1.0);
    assert_eq!(
        percentile_nearest_rank(&[4.0, 1.0, 3.0], 50.0).unwrap(),
        3.0
    );
    assert!(percentile_nearest_rank(&[], 95.0).is_err());
    assert!(percentile_nearest_rank(&v, 101.0).is_err());
}

#[test]
fn perfectly_aligned_survey_is_zero() {
    let truth = NormalField::from_map(&surface(|_, _| 0.3), 1).unwrap();
    let l = log(vec![
        tick(1.0, 0.0, 0.0, vec![det(0.0, 0.0, &[(5, 5), (6, 5)])]),
        tick(2.0, 1.0, 0.0, vec![det(1.0, 0.0, &[(6, 5), (7, 5)])]),
    ]);
    let s = alignment_stats(&l, &truth).unwrap();
    assert!(s.mean_deg.abs() < 1e-6 && s.p95_deg.abs() < 1e-6);
    assert_eq!(s.covered_cells(), 3);
}

#[test]
fn level_coil_on_ramp_sees_the_slope() {
    let t = 20f64.to_radians().tan();
    let truth = NormalField::from_map(&surface(|x, _| x * t), 1).unwrap();
    let cells: Vec<(usize, usize)> = (3..25).flat_map(|c| (3..25).map(move |r| (c, r))).collect();
    let l = log(vec![tick(1.0, 0.0, 0.0, vec![det(0.0, 0.0, &cells)])]);
    let s = alignment_stats(&l, &truth).unwrap();
    assert!((s.mean_deg - 20.0).abs() < 1e-6, "{}", s.mean_deg);
    assert!((s.p95_deg - 20.0).abs() < 1e-6);
}

#[test]
fn hand_built_three_cells() {
    let truth = NormalField::from_map(&surface(|_, _| 0.0), 1).unwrap();
    // Cell A seen at pitch 10 then 4, cell B at 10, cell C at 4 and 7.
    let l = log(vec![
        tick(
            1.0,
            0.0,
            10f64.to_radians(),
            vec![det(0.0, 10f64.to_radians(), &[(2, 2), (3, 2)])],
        ),
        tick(
            2.0,
            0.0,
            4f64.to_radians(),
            vec![det(0.0, 4f64.to_radians(), &[(2, 2), (4, 2)])],
        ),
        tick(
            3.0,
            0.0,
            7f64.to_radians(),
            vec![det(0.0, 7f64.to_radians(), &[(4, 2)])],
        ),
    ]);
    let s = alignment_stats(&l, &truth).unwrap();
    let got: Vec<f64> = s.per_cell.iter().map(|(_, a)| *a).collect();
    for (g, e) in got.iter().zip([4.0, 10.0, 4.0]) {
        assert!((g - e).abs() < 1e-9, "{got:?}");
    }
    assert!((s.mean_deg - 6.0).abs() < 1e-9);
    assert!((s.p95_deg - 10.0).abs() < 1e-9);
}

#[test]
fn no_covered_cells_is_an_empty_report() {
    let truth = NormalField::from_map(&surface(|_, _| 0.0), 1).unwrap();
    let l = log(vec![tick(1.0, 0.0, 0.0, vec![])]);
    assert!(matches!(
        alignment_stats(&l, &truth),
        Err(Error::EmptyReport(_))
    ));
    assert!(alignment_stats(&log(vec![]), &truth).is_err());
}

#[test]
fn yaw_pitch_examples() {
    let constant = log((0..5).map(|i| tick(i as f64, 0.4, 0.1, vec![])).collect());
    let s = yaw_pitch_stats(&constant).unwrap();
    assert_eq!((s.dyaw_mean, s.dyaw_std, s.dpitch_mean), (0.0, 0.0, 0.0));

    let alternating = log((0..6)
        .map(|i| {
            tick(
                i as f64,
                if i % 2 == 0 { 0.0 } else { 30f64.to_radians() },
                0.0,
                vec![],
            )
        })
        .collect());
    let s = yaw_pitch_stats(&alternating).unwrap();
    assert!((s.dyaw_mean - 30.0).abs() < 1e-9 && s.dyaw_std < 1e-9);
    assert!(s.dyaw_signed_std > 29.0);

    // Wraps across the branch cut.
    let across = log(vec![
        tick(0.0, 179f64.to_radians(), 0.0, vec![]),
        tick(1.0, -179f64.to_radians(), 0.0, vec![]),
    ]);
    assert!((yaw_pitch_stats(&across).unwrap().dyaw_mean - 2.0).abs() < 1e-9);

    assert!(yaw_pitch_stats(&log(vec![tick(0.0, 0.0, 0.0, vec![])])).is_err());
}

#[test]
fn trajectory_examples() {
    let truth: Vec<(f64, Vector3<f64>)> = (0..=100)
        .map(|i| {
            (
                i as f64 * 0.1,
                Vector3::new((i as f64 * 0.1).sin(), i as f64 * 0.05, 0.0),
            )
        })
        .collect();
    let e = trajectory_errors(&truth, &truth).unwrap();
    assert_eq!((e.rmse, e.closure), (0.0, 0.0));

    let shifted: Vec<_> = truth
        .iter()
        .map(|(t, p)| (*t, p + Vector3::new(0.0, 0.1, 0.0)))
        .collect();
    assert!((trajectory_errors(&shifted, &truth).unwrap().rmse - 0.1).abs() < 1e-12);

    let later: Vec<_> = truth.iter().map(|(t, p)| (t + 100.0, *p)).collect();
    assert!(trajectory_errors(&later, &truth).is_err());
    assert!(trajectory_errors(&[], &truth).is_err());
}

#[test]
fn drifting_trajectory_matches_dense_oracle() {
    // Truth on a 1 ms grid of a straight line, estimate at 0.37 s with a
    // linear drift; interpolation is exact on a line.
    let v = Vector3::new(1.0, 0.5, 0.0);
    let truth: Vec<_> = (0..=20_000)
        .map(|i| (i as f64 * 1e-3, v * (i as f64 * 1e-3)))
        .collect();
    let drift = Vector3::new(0.0, 0.01, 0.002);
    let est: Vec<_> = (0..54)
        .map(|i| i as f64 * 0.37)
        .map(|t| (t, v * t + drift * t))
        .collect();
    let e = trajectory_errors(&est, &truth).unwrap();
    let oracle = (est
        .iter()
        .map(|(t, _)| (drift * *t).norm_squared())
        .sum::<f64>()
        / est.len() as f64)
        .sqrt();
    assert!((e.rmse - oracle).abs() < 1e-9, "{} vs {oracle}", e.rmse);
    let t_last = est[est.len() - 1].0;
    let closure_oracle = ((v + drift) * t_last).norm() - (v * t_last).norm();
    assert!((e.closure - closure_oracle).abs() < 1e-9);
}

fn blobs(targets: &[Vector2<f64>]) -> ElevationMap {
    let mut m = ElevationMap::new(Vector2::zeros(), Vector2::new(5.0, 3.0), 0.1).unwrap();
    for c in m.cells().collect::<Vec<_>>() {
        let p = m.cell_center(c);
        let s: f64 = targets
            .iter()
            .map(|t| (-(p - t).norm_squared() / (2.0 * 0.1f64.powi(2))).exp())
            .sum();
        m.accumulate_signal(&[c], s.min(1.0)).unwrap();
    }
    m
}

#[test]
fn single_target_is_localized() {
    let t = Vector2::new(2.02, 1.47);
    let r = detection_report(&blobs(&[t]), &[t], None);
    assert_eq!(r.components.len(), 1);
    assert_eq!(r.detected(), 1);
    assert!(r.targets[0].error.unwrap() < 0.1);
}

#[test]
fn empty_map_detects_nothing() {
    let m = ElevationMap::new(Vector2::zeros(), Vector2::new(2.0, 2.0), 0.1).unwrap();
    let r = detection_report(&m, &[Vector2::new(1.0, 1.0)], None);
    assert_eq!((r.detected(), r.components.len()), (0, 0));
}

#[test]
fn two_targets_keep_their_spacing() {
    let ts = [Vector2::new(1.5, 1.5), Vector2::new(3.15, 1.5)];
    let r = detection_report(&blobs(&ts), &ts, None);
    assert_eq!(r.components.len(), 2);
    assert_eq!(r.detected(), 2);
    let d = (r.components[0].centroid() - r.components[1].centroid()).norm();
    assert!((d - 1.65).abs() < 0.15, "{d}");
}

#[test]
fn report_csv_is_fixed_precision() {
    let r = SurveyReport {
        method: "proposed".into(),
        duration_s: 320.12345,
        dyaw_mean: 0.1,
        dyaw_std: 0.2,
        dpitch_mean: 1.0 / 3.0,
        dpitch_std: 0.0,
        alpha_min_mean: 2.5,
        alpha_min_p95: 6.0,
        over_unobserved: 0,
        covered_cells: 1234,
    };
    let mut out = Vec::new();
    write_report_csv(&[r], &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], REPORT_CSV_HEADER);
    assert_eq!(
        lines[1],
        "proposed,320.123,0.1000,0.2000,0.3333,0.0000,2.5000,6.0000,0,1234"
    );
}

proptest! {
    #[test]
    fn percentile_of_constant_is_constant(v in -1e3f64..1e3, n in 1usize..50, p in 0.0f64..=100.0) {
        prop_assert_eq!(percentile_nearest_rank(&vec![v; n], p).unwrap(), v);
    }

    #[test]
    fn alignment_stats_ignore_tick_order(
        poses in proptest::collection::vec((-3.0f64..3.0, -0.6f64..0.6, 0usize..6), 2..12),
        seed in any::<u64>(),
    ) {
        let truth = NormalField::from_map(&surface(|x, y| 0.3 * x + 0.1 * y * y), 1).unwrap();
        let ticks: Vec<TickRecord> = poses
            .iter()
            .enumerate()
            .map(|(i, &(yaw, pitch, c))| tick(i as f64, yaw, pitch, vec![det(yaw, pitch, &[(5 + c, 6), (6 + c, 7)])]))
            .collect();
        let mut shuffled = ticks.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = alignment_stats(&log(ticks), &truth).unwrap();
        let b = alignment_stats(&log(shuffled), &truth).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.mean_deg >= 0.0 && a.mean_deg <= a.max_deg + 1e-12);
        prop_assert!(a.p95_deg <= a.max_deg);
    }

    #[test]
    fn yaw_pitch_matches_reference(yaws in proptest::collection::vec(-3.2f64..3.2, 2..40)) {
        let l = log(yaws.iter().enumerate().map(|(i, y)| tick(i as f64, *y, *y * 0.1, vec![])).collect());
        let s = yaw_pitch_stats(&l).unwrap();
        // Welford over the absolute wrapped differences.
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for w in yaws.windows(2) {
            let mut d = (w[1] - w[0]).to_degrees();
            while d > 180.0 { d -= 360.0; }
            while d <= -180.0 { d += 360.0; }
            let x = d.abs();
            n += 1.0;
            let delta = x - mean;
            mean += delta / n;
            m2 += delta * (x - mean);
        }
        prop_assert!((s.dyaw_mean - mean).abs() < 1e-9);
        prop_assert!((s.dyaw_std - (m2 / n).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn zero_threshold_joins_all_covered_cells(c0 in 2usize..10, r0 in 2usize..10, w in 1usize..8, h in 1usize..8) {
        let mut m = ElevationMap::new(Vector2::zeros(), Vector2::new(2.0, 2.0), 0.1).unwrap();
        for c in c0..c0 + w {
            for r in r0..r0 + h {
                m.accumulate_signal(&[CellIndex::new(c, r)], 0.01 + 0.001 * (c * r) as f64).unwrap();
            }
        }
        let r = detection_report(&m, &[], Some(0.0));
        prop_assert_eq!(r.components.len(), 1);
        prop_assert_eq!(r.components[0].cells.len(), w * h);
    }
}

fn pole_world() -> World {
    let sc = crate::sim::ScenarioConfig::from_json(
        r#"{ "area": { "min": [0, 0], "max": [6, 3] }, "terrain": { "kind": "flat" },
             "obstacles": [ { "shape": "cylinder", "center": [3.0, 1.5], "radius": 0.1, "height": 2.0 } ] }"#,
    )
    .unwrap();
    World::build(&sc, 1, crate::exec::Exec::Sequential).unwrap()
}

#[test]
fn safety_counts_violations_and_reachable_cells() {
    let world = pole_world();
    let obstacles = truth_obstacles(&world, crate::exec::Exec::Sequential).unwrap();
    let mut map = world.empty_map().unwrap();
    let at = |x: f64| {
        let mut t = tick(1.0, 0.0, 0.0, vec![]);
        t.commanded = DetectorPose::new(Vector3::new(x, 1.5, 0.15), 0.0, 0.0);
        t
    };
    let far = map.cell_at(&Vector2::new(0.5, 0.5)).unwrap();
    map.accumulate_signal(&[far], 0.3).unwrap();
    let s = safety_stats(
        &world,
        &log(vec![at(3.3), at(4.5), at(0.5)]),
        &map,
        &obstacles,
    )
    .unwrap();
    assert_eq!(s.clearance_violations, 1);
    assert_eq!(s.covered_reachable, 1);
    assert!(s.min_clearance < 0.3);

    // Obstacle cells lie on the pole rim, within radius + one cell of its axis.
    let res = world.scenario.map.resolution;
    let r = world.scenario.planner.body_radius;
    let centers: Vec<f64> = map
        .cells()
        .map(|c| map.cell_center(c))
        .filter(|p| world.scenario.area.contains(p))
        .map(|p| (p - Vector2::new(3.0, 1.5)).norm())
        .collect();
    let surely = centers
        .iter()
        .filter(|d| **d >= r + 0.1 + 2.0 * res)
        .count();
    let at_most = centers
        .iter()
        .filter(|d| **d >= r - 0.1 - 2.0 * res)
        .count();
    assert!(
        s.reachable_cells >= surely && s.reachable_cells <= at_most,
        "{} not in [{surely}, {at_most}]",
        s.reachable_cells
    );
    assert!(s.reachable_cells < centers.len());
}
