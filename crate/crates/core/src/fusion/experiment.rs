use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pipeline::{
    dead_reckoning, positions, run_fusion, run_fusion_with, FusionConfig, FusionRun,
};
use super::streams::{
    simulate_streams, true_extrinsic, GnssNoise, OdometryNoise, PathSpec, Streams, Trajectory,
};
use crate::angles::{abs_diff, deg};
use crate::error::{invalid, Result};
use crate::metrics::{trajectory_errors, TrajectoryErrors};

/// Fusion experiment file: truth path, sensor noise and smoother settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionScenario {
    #[serde(default)]
    pub name: String,
    pub path: PathSpec,
    #[serde(default)]
    pub odometry: OdometryNoise,
    #[serde(default)]
    pub gnss: GnssNoise,
    #[serde(default)]
    pub fusion: FusionConfig,
}

impl FusionScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: FusionScenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        Trajectory::from_path(&self.path)?;
        self.fusion.smoother.validate()?;
        if !(self.odometry.rate_hz > 0.0 && self.gnss.rate_hz > 0.0) {
            return invalid("sensor rates must be positive");
        }
        if self.odometry.sigma_trans < 0.0
            || self.odometry.sigma_rot_deg < 0.0
            || self.gnss.sigma < 0.0
        {
            return invalid("noise levels must be non-negative");
        }
        if self.gnss.dropouts.iter().any(|d| !(d[1] >= d[0])) {
            return invalid("dropout intervals must be [start, end] with end >= start");
        }
        if !(self.fusion.optimize_period_s > 0.0) {
            return invalid("optimize_period_s must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionEvaluation {
    pub fused: TrajectoryErrors,
    pub odometry: TrajectoryErrors,
    /// Largest deviation of an estimate step from the true step within
    /// `RECOVERY_WINDOW_S` after each dropout ends, m.
    pub recovery_jump: Option<f64>,
    /// Same, over the latest state after each solve (the real-time output).
    pub online_recovery_jump: Option<f64>,
    pub gate_open_time: Option<f64>,
    /// Odometry path length when the gate opened, m.
    pub gate_open_distance: Option<f64>,
    /// Path length after which the extrinsic yaw error stays below
    /// `yaw_tolerance_deg` for the rest of the run, m.
    pub yaw_converged_distance: Option<f64>,
    pub yaw_tolerance_deg: f64,
    pub final_yaw_error_deg: Option<f64>,
    pub fixes_attached: usize,
    pub fixes_gated: usize,
    pub estimates: usize,
    /// Largest gap between consecutive estimate timestamps, s.
    pub max_estimate_gap: f64,
}

pub const RECOVERY_WINDOW_S: f64 = 3.0;

pub struct Experiment {
    pub truth: Trajectory,
    pub streams: Streams,
    pub run: FusionRun,
    /// Latest state position after every solve.
    pub online: Vec<(f64, Vector3<f64>)>,
    pub evaluation: FusionEvaluation,
}

pub fn run_experiment(scenario: &FusionScenario, seed: u64) -> Result<Experiment> {
    scenario.validate()?;
    let truth = Trajectory::from_path(&scenario.path)?;
    let streams = simulate_streams(&truth, &scenario.odometry, &scenario.gnss, seed)?;
    let mut online = Vec::new();
    let run = run_fusion_with(&streams, &scenario.fusion, |g, _| {
        let s = g.latest_state();
        online.push((s.timestamp, s.pose.translation));
    })?;
    let evaluation = evaluate(scenario, &truth, &streams, &run, &online, 2.0)?;
    Ok(Experiment {
        truth,
        streams,
        run,
        online,
        evaluation,
    })
}

pub fn evaluate(
    scenario: &FusionScenario,
    truth: &Trajectory,
    streams: &Streams,
    run: &FusionRun,
    online: &[(f64, Vector3<f64>)],
    yaw_tolerance_deg: f64,
) -> Result<FusionEvaluation> {
    let rate = scenario.odometry.rate_hz;
    let truth_positions: Vec<_> = truth
        .times(rate)
        .into_iter()
        .map(|t| (t, truth.pose_at(t).translation))
        .collect();
    let fused = trajectory_errors(&positions(&run.estimates), &truth_positions)?;
    let odometry = trajectory_errors(&positions(&dead_reckoning(streams)), &truth_positions)?;

    let recovery_jump = recovery_jump_of(scenario, truth, &positions(&run.estimates));
    let online_recovery_jump = recovery_jump_of(scenario, truth, online);

    let true_yaw = true_extrinsic(truth, &scenario.gnss).yaw();
    let errors: Vec<(f64, f64)> = run
        .trace
        .iter()
        .map(|r| (r.traveled, deg(abs_diff(r.extrinsic_yaw, true_yaw))))
        .collect();
    // Last row outside tolerance; convergence is the row after it.
    let yaw_converged_distance = match errors.iter().rposition(|(_, e)| *e >= yaw_tolerance_deg) {
        None => errors.first().map(|e| e.0),
        Some(k) => errors.get(k + 1).map(|e| e.0),
    };
    let gate_open = run.trace.iter().find(|r| !r.gated);

    let max_estimate_gap = run
        .estimates
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .fold(0.0, f64::max);
    Ok(FusionEvaluation {
        fused,
        odometry,
        recovery_jump,
        online_recovery_jump,
        gate_open_time: gate_open.map(|r| r.timestamp),
        gate_open_distance: gate_open.map(|r| r.traveled),
        yaw_converged_distance,
        yaw_tolerance_deg,
        final_yaw_error_deg: errors.last().map(|e| e.1),
        fixes_attached: run.fixes_attached,
        fixes_gated: run.fixes_gated,
        estimates: run.estimates.len(),
        max_estimate_gap,
    })
}

fn recovery_jump_of(
    scenario: &FusionScenario,
    truth: &Trajectory,
    track: &[(f64, Vector3<f64>)],
) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for d in &scenario.gnss.dropouts {
        let (lo, hi) = (d[1], d[1] + RECOVERY_WINDOW_S);
        for w in track.windows(2) {
            if w[1].0 < lo || w[0].0 > hi {
                continue;
            }
            let tru = truth.pose_at(w[1].0).translation - truth.pose_at(w[0].0).translation;
            let dev = (w[1].1 - w[0].1 - tru).norm();
            worst = Some(worst.map_or(dev, |j| j.max(dev)));
        }
    }
    worst
}

/// Largest change in any state estimate up to `until` caused by the fixes
/// taken before it: both streams are cut at `until` and the fusion is rerun
/// with and without those fixes, m.
pub fn fix_influence_until(streams: &Streams, config: &FusionConfig, until: f64) -> Result<f64> {
    let odometry: Vec<_> = streams
        .odometry
        .iter()
        .filter(|o| o.timestamp < until)
        .cloned()
        .collect();
    let gnss: Vec<_> = streams
        .gnss
        .iter()
        .filter(|g| g.timestamp < until)
        .cloned()
        .collect();
    let with = run_fusion(
        &Streams {
            odometry: odometry.clone(),
            gnss,
        },
        config,
    )?;
    let without = run_fusion(
        &Streams {
            odometry,
            gnss: Vec::new(),
        },
        config,
    )?;
    if with.estimates.len() != without.estimates.len() {
        return invalid("runs with and without fixes exported different state sets");
    }
    Ok(with
        .estimates
        .iter()
        .zip(&without.estimates)
        .map(|(a, b)| (a.pose.translation - b.pose.translation).norm())
        .fold(0.0, f64::max))
}
