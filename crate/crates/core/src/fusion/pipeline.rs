use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::graph::{Estimate, FixedLagSmoother, SmootherConfig, WindowEstimate};
use super::streams::Streams;
use super::transform::RigidTransform;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub smoother: SmootherConfig,
    /// Antenna position in the body frame, m.
    pub lever_arm: [f64; 3],
    /// Optimization cadence in stream time, s.
    pub optimize_period_s: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            smoother: SmootherConfig::default(),
            lever_arm: [0.0, 0.0, 0.1],
            optimize_period_s: 0.2,
        }
    }
}

/// Extrinsic state after one window solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub timestamp: f64,
    /// Odometry path length so far, m.
    pub traveled: f64,
    pub extrinsic_yaw: f64,
    pub extrinsic_translation: [f64; 3],
    pub yaw_variance: f64,
    pub yaw_variance_nominal: f64,
    /// Whether the next fix will be inflated.
    pub gated: bool,
    pub iterations: usize,
    pub window_states: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionRun {
    pub estimates: Vec<Estimate>,
    pub trace: Vec<TraceRow>,
    pub diagnostics: Vec<String>,
    pub fixes_attached: usize,
    pub fixes_gated: usize,
}

impl FusionRun {
    /// Time of the first solve after which fixes are no longer inflated.
    pub fn gate_open_time(&self) -> Option<f64> {
        self.trace.iter().find(|r| !r.gated).map(|r| r.timestamp)
    }
}

/// Replays the streams through the smoother, solving every
/// `optimize_period_s` of stream time.
pub fn run_fusion(streams: &Streams, config: &FusionConfig) -> Result<FusionRun> {
    run_fusion_with(streams, config, |_, _| {})
}

/// [`run_fusion`], calling `on_solve` after every window solve.
pub fn run_fusion_with(
    streams: &Streams,
    config: &FusionConfig,
    mut on_solve: impl FnMut(&FixedLagSmoother, &WindowEstimate),
) -> Result<FusionRun> {
    if !(config.optimize_period_s > 0.0) {
        return invalid("optimize_period_s must be positive");
    }
    let Some(first) = streams.odometry.first() else {
        return invalid("fusion needs at least one odometry record");
    };
    let lever = Vector3::from(config.lever_arm);
    let mut graph = FixedLagSmoother::new(config.smoother.clone(), first.timestamp, first.delta)?;
    let mut run = FusionRun {
        estimates: Vec::new(),
        trace: Vec::new(),
        diagnostics: Vec::new(),
        fixes_attached: 0,
        fixes_gated: 0,
    };
    let mut last_solve = first.timestamp;
    let (mut i, mut j) = (1, 0);
    // Fixes taken before the first odometry record have no state to attach to.
    while j < streams.gnss.len()
        && streams.gnss[j].timestamp < first.timestamp - config.smoother.attach_tolerance_s
    {
        run.diagnostics.push(format!(
            "dropped fix at t={}: before the first state",
            streams.gnss[j].timestamp
        ));
        j += 1;
    }
    loop {
        let next_odom = streams.odometry.get(i).map(|o| o.timestamp);
        let next_gnss = streams.gnss.get(j).map(|g| g.timestamp);
        let now = match (next_odom, next_gnss) {
            (None, None) => break,
            (Some(o), Some(g)) => o.min(g),
            (Some(o), None) => o,
            (None, Some(g)) => g,
        };
        while let Some(o) = streams.odometry.get(i).filter(|o| o.timestamp <= now) {
            graph.add_odometry(o.timestamp, o.delta, &o.covariance)?;
            i += 1;
        }
        while let Some(g) = streams.gnss.get(j).filter(|g| g.timestamp <= now) {
            let gated = graph.gated();
            if graph
                .add_position_fix(g.timestamp, g.position, &g.covariance, lever)?
                .is_some()
            {
                run.fixes_attached += 1;
                run.fixes_gated += usize::from(gated);
            }
            j += 1;
        }
        let done = i >= streams.odometry.len() && j >= streams.gnss.len();
        if now - last_solve >= config.optimize_period_s - 1e-9 || done {
            let w = solve(&mut graph, &mut run)?;
            on_solve(&graph, &w);
            last_solve = now;
        }
    }
    run.diagnostics.extend(graph.diagnostics().iter().cloned());
    let mut estimates = std::mem::take(&mut run.estimates);
    estimates.extend(graph.finish());
    run.estimates = estimates;
    Ok(run)
}

fn solve(graph: &mut FixedLagSmoother, run: &mut FusionRun) -> Result<WindowEstimate> {
    let w = graph.optimize_window()?;
    run.estimates.extend(graph.take_exported());
    if let Some(e) = w.extrinsics.last() {
        let t = e.transform.translation;
        run.trace.push(TraceRow {
            timestamp: graph.latest_state().timestamp,
            traveled: graph.traveled(),
            extrinsic_yaw: e.transform.yaw(),
            extrinsic_translation: [t.x, t.y, t.z],
            yaw_variance: e.yaw_variance,
            yaw_variance_nominal: e.yaw_variance_nominal,
            gated: graph.gated(),
            iterations: w.report.iterations,
            window_states: w.states.len(),
        });
    }
    Ok(w)
}

/// Odometry-only trajectory: composition of the deltas from the initial pose.
pub fn dead_reckoning(streams: &Streams) -> Vec<Estimate> {
    let mut pose = RigidTransform::identity();
    streams
        .odometry
        .iter()
        .enumerate()
        .map(|(k, o)| {
            pose = if k == 0 { o.delta } else { pose * o.delta };
            Estimate {
                timestamp: o.timestamp,
                pose,
                yaw_var_extrinsic: f64::NAN,
            }
        })
        .collect()
}

pub const ESTIMATE_CSV_HEADER: &str = "timestamp,x,y,z,qw,qx,qy,qz,yaw_var_extrinsic";

/// Fixed-precision rows (1e-9 m, 1e-12 for quaternions) so reruns compare
/// byte for byte.
pub fn write_estimates_csv<W: Write>(estimates: &[Estimate], out: &mut W) -> Result<()> {
    writeln!(out, "{ESTIMATE_CSV_HEADER}")?;
    for e in estimates {
        let t = e.pose.translation;
        let q = e.pose.rotation.quaternion();
        writeln!(
            out,
            "{:.6},{:.9},{:.9},{:.9},{:.12},{:.12},{:.12},{:.12},{:.6e}",
            e.timestamp, t.x, t.y, t.z, q.w, q.i, q.j, q.k, e.yaw_var_extrinsic
        )?;
    }
    Ok(())
}

pub fn positions(estimates: &[Estimate]) -> Vec<(f64, Vector3<f64>)> {
    estimates
        .iter()
        .map(|e| (e.timestamp, e.pose.translation))
        .collect()
}
