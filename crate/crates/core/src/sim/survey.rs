use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};

use super::detector::detector_sample;
use super::lidar::lidar_scan;
use super::scenario::World;
use super::{step_vehicle, Pose, VehicleState};
use crate::alignment::{aligned_headings, optimal_pitch, residual_alignment};
use crate::angles::{abs_diff, deg, wrap};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::gridmap::{CellIndex, ElevationMap};
use crate::planner::{lift_sample, Command, Planner, PlanningMap};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Proposed,
    /// Perfect-alignment heading chosen over a window of `k` samples.
    Aligned(usize),
    FixedAttitude,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Proposed => write!(f, "proposed"),
            Method::Aligned(k) => write!(f, "aligned{k}"),
            Method::FixedAttitude => write!(f, "fixed"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "fixed" | "fixed_attitude" => Ok(Method::FixedAttitude),
            _ => match s.strip_prefix("aligned").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Method::Aligned(k)),
                _ => invalid(format!(
                    "unknown method '{s}' (expected proposed, alignedK or fixed)"
                )),
            },
        }
    }
}

/// One detector reading.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub pose: Pose,
    pub cells: Vec<CellIndex>,
    pub signal: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    /// Elapsed time at the end of the tick, s.
    pub time: f64,
    pub commanded: Pose,
    pub realized: Pose,
    pub cost: f64,
    pub dyaw: f64,
    pub dpitch: f64,
    pub detections: Vec<Detection>,
    pub over_unobserved: bool,
    pub preferred: bool,
    pub shifted: bool,
    pub stalled: bool,
    pub sample: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurveyLog {
    pub method: Method,
    pub ticks: Vec<TickRecord>,
    pub skipped: Vec<usize>,
}

impl SurveyLog {
    pub fn duration(&self) -> f64 {
        self.ticks.last().map_or(0.0, |t| t.time)
    }

    pub fn over_unobserved(&self) -> usize {
        self.ticks.iter().filter(|t| t.over_unobserved).count()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{SURVEY_CSV_HEADER}")?;
        for (i, t) in self.ticks.iter().enumerate() {
            let p = &t.commanded;
            let signal = t.detections.iter().map(|d| d.signal).fold(0.0, f64::max);
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{},{},{},{:.6},{:.6},{}",
                i,
                p.position.x,
                p.position.y,
                p.position.z,
                deg(p.yaw),
                deg(p.pitch),
                deg(t.cost),
                t.preferred as u8,
                t.shifted as u8,
                t.stalled as u8,
                signal,
                t.time,
                t.over_unobserved as u8
            )?;
        }
        Ok(())
    }
}

pub const SURVEY_CSV_HEADER: &str =
    "tick,x,y,z,yaw_deg,pitch_deg,cost_deg,preferred,shifted,stalled,signal,time_s,over_unobserved";

#[derive(Clone, Debug)]
pub struct SurveyOutcome {
    pub log: SurveyLog,
    pub map: ElevationMap,
}

struct Step {
    pose: Pose,
    cost: f64,
    preferred: bool,
    shifted: bool,
    stalled: bool,
    over_unobserved: bool,
    sample: Option<usize>,
    /// Minimum tick duration (hovering), s.
    wait: f64,
}

impl Step {
    fn moving(pose: Pose, sample: Option<usize>) -> Self {
        Step {
            pose,
            cost: 0.0,
            preferred: false,
            shifted: false,
            stalled: false,
            over_unobserved: false,
            sample,
            wait: 0.0,
        }
    }
}

enum Controller {
    Proposed { planner: Planner, stalled_for: f64 },
    Baseline { method: Method, next: usize },
}

/// Closed-loop survey: scan, integrate, command, move, read the detector
/// along the motion. Deterministic for a fixed world and method.
pub fn run_survey(world: &World, method: Method, exec: Exec) -> Result<SurveyOutcome> {
    let sc = &world.scenario;
    let params = &sc.planner;
    let path = &world.path;
    let mut map = world.empty_map()?;
    let mut rng = seed::rng(world.seed, &format!("detector/{method}"));
    let noise = Normal::new(0.0, sc.detector.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("detector noise: {e}")))?;

    let first = path.sample(0)?;
    let start_xy = first.position;
    let start = Vector3::new(
        start_xy.x,
        start_xy.y,
        world.truth.height(start_xy.x, start_xy.y) + params.standoff,
    );
    let mut state = VehicleState::new(start, first.lane_yaw());
    // Takeoff: look both ways along the first lane.
    for yaw in [state.yaw + std::f64::consts::PI, state.yaw] {
        let s = VehicleState {
            yaw: wrap(yaw),
            ..state
        };
        map.integrate_points(&lidar_scan(&world.truth, &s, &sc.sensor, exec));
    }

    let mut controller = match method {
        Method::Proposed => Controller::Proposed {
            planner: Planner::new(params.clone())?,
            stalled_for: 0.0,
        },
        _ => Controller::Baseline { method, next: 0 },
    };
    let max_ticks = sc.survey.max_ticks_per_sample.max(1) * path.len() + 100;
    let mut ticks = Vec::new();
    for _ in 0..max_ticks {
        map.integrate_points(&lidar_scan(&world.truth, &state, &sc.sensor, exec));
        let steps = match &mut controller {
            Controller::Proposed {
                planner,
                stalled_for,
            } => proposed_step(world, planner, stalled_for, &state, &map, exec)?,
            Controller::Baseline { method, next } => {
                if *next >= path.len() {
                    None
                } else {
                    let s = baseline_step(world, *method, *next, &state, &map);
                    *next += 1;
                    Some(vec![s])
                }
            }
        };
        let Some(steps) = steps else {
            let skipped = match &controller {
                Controller::Proposed { planner, .. } => planner.skipped().iter().copied().collect(),
                Controller::Baseline { .. } => Vec::new(),
            };
            return Ok(SurveyOutcome {
                log: SurveyLog {
                    method,
                    ticks,
                    skipped,
                },
                map,
            });
        };
        for step in steps {
            let (next, dt) = step_vehicle(&state, &step.pose, &sc.limits);
            let dt = dt.max(step.wait);
            if dt <= 0.0 {
                state = VehicleState {
                    elapsed: state.elapsed,
                    ..next
                };
                continue;
            }
            let next = VehicleState {
                elapsed: state.elapsed + dt,
                ..next
            };
            let detections = read_detector(world, &mut map, &state, &next, &mut rng, &noise)?;
            ticks.push(TickRecord {
                time: next.elapsed,
                commanded: step.pose,
                realized: next.pose(),
                cost: step.cost,
                dyaw: abs_diff(state.yaw, next.yaw),
                dpitch: (next.pitch - state.pitch).abs(),
                detections,
                over_unobserved: step.over_unobserved,
                preferred: step.preferred,
                shifted: step.shifted,
                stalled: step.stalled,
                sample: step.sample,
            });
            state = next;
        }
    }
    Err(Error::PlannerStall {
        sample: 0,
        reason: format!("survey did not finish within {max_ticks} ticks"),
    })
}

fn command_pose(c: &Command) -> Pose {
    Pose::new(c.position, c.yaw, c.pitch)
}

fn proposed_step(
    world: &World,
    planner: &mut Planner,
    stalled_for: &mut f64,
    state: &VehicleState,
    map: &ElevationMap,
    exec: Exec,
) -> Result<Option<Vec<Step>>> {
    let sc = &world.scenario;
    let pm = PlanningMap::new(map, &sc.planner, exec);
    let planned = match planner.plan_tick(state, &pm, &world.path) {
        Err(Error::PlannerStall { .. }) => planner.plan_tick_free_root(state, &pm, &world.path),
        other => other,
    };
    let to_step = |c: &Command| Step {
        cost: c.cost,
        preferred: c.preferred,
        shifted: c.shifted,
        ..Step::moving(command_pose(c), Some(c.sample_index))
    };
    match planned {
        Ok(Some(c)) => {
            *stalled_for = 0.0;
            let mut steps = Vec::with_capacity(2);
            if let Some((yaw, pitch)) = c.rotate_first {
                steps.push(Step {
                    stalled: true,
                    ..Step::moving(Pose::new(state.position, yaw, pitch), None)
                });
            }
            steps.push(to_step(&c));
            Ok(Some(steps))
        }
        Ok(None) => Ok(None),
        Err(Error::PlannerStall { .. }) => {
            // Hover: turn toward the pending lane direction and rescan.
            let hover = sc.survey.hover_time;
            *stalled_for += hover;
            if *stalled_for > sc.survey.stall_timeout {
                planner.skip_pending();
                *stalled_for = 0.0;
                if planner.is_finished(&world.path) {
                    return Ok(None);
                }
            }
            let pending = planner.pending_sample().min(world.path.len() - 1);
            let lane_yaw = world.path.sample(pending)?.lane_yaw();
            let turn = wrap(lane_yaw - state.yaw).clamp(
                -sc.limits.omega_max() * hover,
                sc.limits.omega_max() * hover,
            );
            let yaw = wrap(state.yaw + turn);
            let pitch = pm
                .surface(&state.position.xy())
                .and_then(|(_, n)| optimal_pitch(&n, yaw).ok())
                .unwrap_or(state.pitch);
            Ok(Some(vec![Step {
                stalled: true,
                wait: hover,
                ..Step::moving(Pose::new(state.position, yaw, pitch), None)
            }]))
        }
        Err(e) => Err(e),
    }
}

fn baseline_step(
    world: &World,
    method: Method,
    index: usize,
    state: &VehicleState,
    map: &ElevationMap,
) -> Step {
    let sc = &world.scenario;
    let p = &sc.planner;
    let path = world.path.samples();
    let xy = path[index].position;
    let cell = map.cell_at(&xy);
    let observed = cell.is_some_and(|c| map.is_observed(c));
    let normal_at = |i: usize| {
        let c = map.cell_at(&path[i].position)?;
        map.elevation(c)?;
        map.surface_normal(c, p.normal_window).ok()?
    };
    let hold = Vector3::new(xy.x, xy.y, state.position.z);
    let pose = match method {
        Method::FixedAttitude => {
            let z = cell
                .and_then(|c| map.elevation(c))
                .map_or(state.position.z, |z| z + p.standoff);
            Pose::new(Vector3::new(xy.x, xy.y, z), 0.0, 0.0)
        }
        Method::Aligned(k) => {
            let position = lift_sample(map, &xy, p.standoff, p.normal_window).unwrap_or(hold);
            let window: Vec<_> = (index..(index + k).min(path.len()))
                .filter_map(normal_at)
                .collect();
            let mut best: Option<(f64, f64, f64)> = None;
            for n in &window {
                let Some((a, b)) = aligned_headings(n) else {
                    continue;
                };
                for yaw in [a, b] {
                    let total: f64 = window
                        .iter()
                        .map(|m| residual_alignment(m, yaw).unwrap_or(0.0))
                        .sum();
                    let turn = abs_diff(state.yaw, yaw);
                    let better = best.map_or(true, |(t, r, _)| {
                        total < t - 1e-12 || ((total - t).abs() <= 1e-12 && turn < r)
                    });
                    if better {
                        best = Some((total, turn, yaw));
                    }
                }
            }
            let yaw = best.map_or(state.yaw, |b| b.2);
            let pitch = normal_at(index)
                .and_then(|n| optimal_pitch(&n, yaw).ok())
                .unwrap_or(state.pitch);
            Pose::new(position, yaw, pitch)
        }
        Method::Proposed => unreachable!("proposed method uses the planner"),
    };
    Step {
        over_unobserved: !observed,
        ..Step::moving(pose, Some(index))
    }
}

/// Readings every `sample_step` along the motion from `from` to `to`, each
/// accumulated into the footprint cells of the current map.
fn read_detector(
    world: &World,
    map: &mut ElevationMap,
    from: &VehicleState,
    to: &VehicleState,
    rng: &mut impl rand::Rng,
    noise: &Normal<f64>,
) -> Result<Vec<Detection>> {
    let sc = &world.scenario;
    let spec = &sc.detector;
    let dist = (to.position - from.position).norm();
    let n = ((dist / spec.sample_step).ceil() as usize).max(1);
    let semi = nalgebra::Vector2::new(spec.semi_axes[0], spec.semi_axes[1]);
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let t = i as f64 / n as f64;
        let pose = Pose::new(
            from.position.lerp(&to.position, t),
            wrap(from.yaw + wrap(to.yaw - from.yaw) * t),
            from.pitch + (to.pitch - from.pitch) * t,
        );
        let cells = map.raytrace_footprint(&pose, semi, spec.max_range)?;
        let mut signal =
            detector_sample(&world.truth, &sc.targets, &pose, spec, sc.planner.standoff);
        if spec.noise_sigma > 0.0 {
            signal = (signal + noise.sample(rng)).clamp(0.0, 1.0);
        }
        map.accumulate_signal(&cells, signal)?;
        out.push(Detection {
            pose,
            cells,
            signal,
        });
    }
    Ok(out)
}
