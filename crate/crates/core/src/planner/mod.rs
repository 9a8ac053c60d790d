//! Receding-horizon yaw-lattice planner.
//!
//! Each tick lifts the next coverage sample onto the mapped terrain, samples
//! the yaw candidates that keep the detector aligned, and commits the first
//! edge of the cheapest path through the horizon.

mod lattice;

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::{optimal_pitch, residual_alignment};
use crate::angles::{abs_diff, deg, heading, rad};
use crate::coverage::{CoveragePath, PathSample};
use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::gridmap::{ElevationMap, TraversabilityMask};
use crate::sim::VehicleState;

pub use lattice::{
    edge_cost, search_best, yaw_candidates, LatticeLayer, LatticeNode, LatticeTree, SearchResult,
    TIE_TOLERANCE,
};

/// Planner parameters. Angles are radians in memory and degrees in files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsFile", from = "ParamsFile")]
pub struct PlannerParams {
    pub horizon: f64,
    pub sample_spacing: f64,
    pub yaw_resolution: f64,
    pub alpha_max: f64,
    /// Largest allowed angle between heading and lane direction.
    pub lane_yaw_max: f64,
    /// Half-width of the sector around the next-lane direction that marks a
    /// terminal node as preferred.
    pub e_max: f64,
    pub step_yaw_max: f64,
    pub standoff: f64,
    pub body_radius: f64,
    pub vertical_clearance: f64,
    pub slope_max: f64,
    pub normal_window: usize,
    pub avoidance_k_max: usize,
    /// Extra clearance demanded of sample positions before avoidance kicks in.
    pub avoidance_margin: f64,
    pub checkpoint_spacing: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            horizon: 1.8,
            sample_spacing: 0.3,
            yaw_resolution: rad(3.0),
            alpha_max: rad(7.5),
            lane_yaw_max: rad(120.0),
            e_max: rad(30.0),
            step_yaw_max: rad(30.0),
            standoff: 0.15,
            body_radius: 0.6,
            vertical_clearance: 0.1,
            slope_max: rad(45.0),
            normal_window: 1,
            avoidance_k_max: 10,
            avoidance_margin: 0.15,
            checkpoint_spacing: 0.05,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ParamsFile {
    horizon: f64,
    sample_spacing: f64,
    yaw_resolution_deg: f64,
    alpha_max_deg: f64,
    lane_yaw_max_deg: f64,
    e_max_deg: f64,
    step_yaw_max_deg: f64,
    standoff: f64,
    body_radius: f64,
    vertical_clearance: f64,
    slope_max_deg: f64,
    normal_window: usize,
    avoidance_k_max: usize,
    avoidance_margin: f64,
    checkpoint_spacing: f64,
}

impl Default for ParamsFile {
    fn default() -> Self {
        PlannerParams::default().into()
    }
}

impl From<PlannerParams> for ParamsFile {
    fn from(p: PlannerParams) -> Self {
        ParamsFile {
            horizon: p.horizon,
            sample_spacing: p.sample_spacing,
            yaw_resolution_deg: deg(p.yaw_resolution),
            alpha_max_deg: deg(p.alpha_max),
            lane_yaw_max_deg: deg(p.lane_yaw_max),
            e_max_deg: deg(p.e_max),
            step_yaw_max_deg: deg(p.step_yaw_max),
            standoff: p.standoff,
            body_radius: p.body_radius,
            vertical_clearance: p.vertical_clearance,
            slope_max_deg: deg(p.slope_max),
            normal_window: p.normal_window,
            avoidance_k_max: p.avoidance_k_max,
            avoidance_margin: p.avoidance_margin,
            checkpoint_spacing: p.checkpoint_spacing,
        }
    }
}

impl From<ParamsFile> for PlannerParams {
    fn from(f: ParamsFile) -> Self {
        PlannerParams {
            horizon: f.horizon,
            sample_spacing: f.sample_spacing,
            yaw_resolution: rad(f.yaw_resolution_deg),
            alpha_max: rad(f.alpha_max_deg),
            lane_yaw_max: rad(f.lane_yaw_max_deg),
            e_max: rad(f.e_max_deg),
            step_yaw_max: rad(f.step_yaw_max_deg),
            standoff: f.standoff,
            body_radius: f.body_radius,
            vertical_clearance: f.vertical_clearance,
            slope_max: rad(f.slope_max_deg),
            normal_window: f.normal_window,
            avoidance_k_max: f.avoidance_k_max,
            avoidance_margin: f.avoidance_margin,
            checkpoint_spacing: f.checkpoint_spacing,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("sample_spacing", self.sample_spacing),
            ("yaw_resolution", self.yaw_resolution),
            ("alpha_max", self.alpha_max),
            ("lane_yaw_max", self.lane_yaw_max),
            ("e_max", self.e_max),
            ("step_yaw_max", self.step_yaw_max),
            ("standoff", self.standoff),
            ("body_radius", self.body_radius),
            ("vertical_clearance", self.vertical_clearance),
            ("slope_max", self.slope_max),
            ("checkpoint_spacing", self.checkpoint_spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!(
                    "planner parameter {name} must be positive, got {v}"
                ));
            }
        }
        if self.avoidance_margin < 0.0 || self.normal_window == 0 || self.layer_count() == 0 {
            return invalid(
                "planner needs a non-negative margin, a normal window and at least one layer",
            );
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        (self.horizon / self.sample_spacing).round() as usize
    }
}

/// Terrain state at a horizontal position as the planner sees it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    Feasible {
        position: Vector3<f64>,
        normal: Vector3<f64>,
    },
    Unobserved,
    Blocked,
}

/// Map snapshot with the obstacle mask used for clearance. Only terrain seen
/// to be steep counts as an obstacle; unobserved terrain is rejected
/// separately by requiring every visited cell to be observed.
pub struct PlanningMap<'a> {
    map: &'a ElevationMap,
    obstacles: TraversabilityMask,
    params: PlannerParams,
}

impl<'a> PlanningMap<'a> {
    pub fn new(map: &'a ElevationMap, params: &PlannerParams, exec: Exec) -> Self {
        let obstacles = map.obstacle_mask_with(params.slope_max, params.normal_window, exec);
        PlanningMap {
            map,
            obstacles,
            params: params.clone(),
        }
    }

    pub fn map(&self) -> &ElevationMap {
        self.map
    }

    pub fn obstacles(&self) -> &TraversabilityMask {
        &self.obstacles
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    /// Fitted surface height and normal at `xy`; `None` when the cell is
    /// unobserved or its normal unknown.
    pub fn surface(&self, xy: &Vector2<f64>) -> Option<(f64, Vector3<f64>)> {
        let c = self.map.cell_at(xy)?;
        self.map.elevation(c)?;
        let fit = self.map.plane_fit(c, self.params.normal_window).ok()??;
        Some((fit.height_at(&(xy - self.map.cell_center(c))), fit.normal))
    }

    pub fn clearance(&self, xy: &Vector2<f64>) -> f64 {
        self.obstacles.clearance(xy).unwrap_or(0.0)
    }

    /// Classifies a candidate sample position: observed, on known terrain,
    /// not an obstacle and at least `body_radius + avoidance_margin` from one.
    pub fn probe(&self, xy: &Vector2<f64>) -> Probe {
        let Some(c) = self.map.cell_at(xy) else {
            return Probe::Blocked;
        };
        if !self.obstacles.is_traversable(c) {
            return Probe::Blocked;
        }
        let Some((z, n)) = self.surface(xy) else {
            return Probe::Unobserved;
        };
        let position = Vector3::new(xy.x, xy.y, z) + self.params.standoff * n;
        let need = self.params.body_radius + self.params.avoidance_margin;
        let lifted = position.xy();
        if self.clearance(xy) < need || self.clearance(&lifted) < need {
            return Probe::Blocked;
        }
        if !self
            .map
            .cell_at(&lifted)
            .is_some_and(|c| self.map.is_observed(c))
        {
            return Probe::Unobserved;
        }
        Probe::Feasible {
            position,
            normal: n,
        }
    }

    /// Straight-line motion check between two platform positions at
    /// `checkpoint_spacing` intervals: every checkpoint is over observed
    /// terrain, keeps `body_radius` clearance and `vertical_clearance` above
    /// the fitted surface.
    pub fn segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Probe {
        let steps = ((b - a).xy().norm() / self.params.checkpoint_spacing)
            .ceil()
            .max(1.0) as usize;
        for i in 0..=steps {
            let p = a.lerp(b, i as f64 / steps as f64);
            let xy = p.xy();
            if self.clearance(&xy) < self.params.body_radius {
                return Probe::Blocked;
            }
            let Some(c) = self.map.cell_at(&xy) else {
                return Probe::Blocked;
            };
            let ground = match self.surface(&xy) {
                Some((z, _)) => z,
                None => match self.map.elevation(c) {
                    Some(z) => z,
                    None => return Probe::Unobserved,
                },
            };
            if p.z - ground < self.params.vertical_clearance - 1e-9 {
                return Probe::Blocked;
            }
        }
        Probe::Feasible {
            position: *b,
            normal: Vector3::z(),
        }
    }
}

/// Sample position raised by the standoff along the fitted surface normal;
/// `None` over unobserved terrain or where the normal is unknown.
pub fn lift_sample(
    map: &ElevationMap,
    xy: &Vector2<f64>,
    standoff: f64,
    window: usize,
) -> Option<Vector3<f64>> {
    let c = map.cell_at(xy)?;
    map.elevation(c)?;
    let fit = map.plane_fit(c, window).ok()??;
    let z = fit.height_at(&(xy - map.cell_center(c)));
    Some(Vector3::new(xy.x, xy.y, z) + standoff * fit.normal)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Avoidance {
    /// Position to use; `offset` is the signed lateral shift (left positive).
    Feasible {
        xy: Vector2<f64>,
        position: Vector3<f64>,
        normal: Vector3<f64>,
        offset: f64,
    },
    /// Nothing feasible within reach; the sample is skipped.
    Blocked,
    /// Terrain needed to decide is not mapped yet.
    Unobserved,
}

/// Probes the sample, then offsets `+k·res, −k·res` for `k = 1..k_max`
/// perpendicular to the lane (left first), returning the first feasible one.
pub fn avoid_obstacle(
    pm: &PlanningMap,
    sample: &Vector2<f64>,
    lane_dir: &Vector2<f64>,
) -> Avoidance {
    avoid_obstacle_with(pm, sample, lane_dir, |_| Probe::Feasible {
        position: Vector3::zeros(),
        normal: Vector3::z(),
    })
}

/// As [`avoid_obstacle`], additionally requiring `accept` (e.g. the motion
/// from the previous layer) to pass for the lifted position.
pub fn avoid_obstacle_with(
    pm: &PlanningMap,
    sample: &Vector2<f64>,
    lane_dir: &Vector2<f64>,
    accept: impl Fn(&Vector3<f64>) -> Probe,
) -> Avoidance {
    let res = pm.map.resolution();
    let left = Vector2::new(-lane_dir.y, lane_dir.x);
    let mut saw_unobserved = false;
    let offsets = std::iter::once(0.0)
        .chain((1..=pm.params.avoidance_k_max).flat_map(|k| [k as f64 * res, -(k as f64) * res]));
    for (i, offset) in offsets.enumerate() {
        let xy = sample + left * offset;
        let probe = match pm.probe(&xy) {
            Probe::Feasible { position, normal } => match accept(&position) {
                Probe::Feasible { .. } => {
                    return Avoidance::Feasible {
                        xy,
                        position,
                        normal,
                        offset,
                    }
                }
                other => other,
            },
            other => other,
        };
        if probe == Probe::Unobserved {
            if i == 0 {
                return Avoidance::Unobserved;
            }
            saw_unobserved = true;
        }
    }
    if saw_unobserved {
        Avoidance::Unobserved
    } else {
        Avoidance::Blocked
    }
}

/// Full edge check between nodes of consecutive layers: yaw step within
/// `step_yaw_max` and a collision-free straight motion.
pub fn edge_feasible(
    pm: &PlanningMap,
    a: (&LatticeLayer, &LatticeNode),
    b: (&LatticeLayer, &LatticeNode),
) -> bool {
    abs_diff(b.1.yaw, a.1.yaw) <= pm.params.step_yaw_max + 1e-12
        && matches!(
            pm.segment(&a.0.position, &b.0.position),
            Probe::Feasible { .. }
        )
}

/// Pose the vehicle should fly to next.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Command {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    /// In-place rotation to perform before moving (recovery planning only).
    pub rotate_first: Option<(f64, f64)>,
    /// Cost of the selected horizon path.
    pub cost: f64,
    pub preferred: bool,
    pub shifted: bool,
    pub sample_index: usize,
    pub nodes_added: usize,
}

#[derive(Clone, Debug)]
pub struct Planner {
    params: PlannerParams,
    tree: LatticeTree,
    next_sample: usize,
    /// Samples below this index are committed or given up on.
    settled: usize,
    skipped: BTreeSet<usize>,
}

impl Planner {
    pub fn new(params: PlannerParams) -> Result<Self> {
        params.validate()?;
        Ok(Planner {
            params,
            tree: LatticeTree::default(),
            next_sample: 0,
            settled: 0,
            skipped: BTreeSet::new(),
        })
    }

    /// Planner whose path cursor starts at `sample` instead of the first one.
    pub fn starting_at(params: PlannerParams, sample: usize) -> Result<Self> {
        let mut p = Planner::new(params)?;
        p.next_sample = sample;
        p.settled = sample;
        Ok(p)
    }

    pub fn params(&self) -> &PlannerParams {
        &self.params
    }

    pub fn tree(&self) -> &LatticeTree {
        &self.tree
    }

    /// Samples that were skipped as blocked.
    pub fn skipped(&self) -> &BTreeSet<usize> {
        &self.skipped
    }

    /// First path sample not yet committed.
    pub fn pending_sample(&self) -> usize {
        self.tree
            .layers
            .get(1)
            .and_then(|l| l.sample)
            .unwrap_or(self.next_sample)
    }

    pub fn is_finished(&self, path: &CoveragePath) -> bool {
        self.tree.depth() == 0 && self.next_sample >= path.len()
    }

    /// Gives up on the first pending sample.
    pub fn skip_pending(&mut self) {
        let s = self.pending_sample();
        self.tree.truncate(0);
        self.skipped.insert(s);
        self.next_sample = s + 1;
        self.settled = s + 1;
    }

    /// One planning iteration from the current state. Returns `None` once the
    /// path is exhausted.
    pub fn plan_tick(
        &mut self,
        state: &VehicleState,
        pm: &PlanningMap,
        path: &CoveragePath,
    ) -> Result<Option<Command>> {
        let root = LatticeNode::root(state.yaw, state.pitch, 0.0);
        self.tick(state, vec![root], pm, path)
    }

    /// Planning iteration whose root may rotate in place to any aligned yaw
    /// first, the rotation being charged as cost. Used to recover from stalls.
    pub fn plan_tick_free_root(
        &mut self,
        state: &VehicleState,
        pm: &PlanningMap,
        path: &CoveragePath,
    ) -> Result<Option<Command>> {
        let s = self.pending_sample().min(path.len().saturating_sub(1));
        let lane_yaw = path.sample(s)?.lane_yaw();
        let normal = pm.surface(&state.position.xy()).map(|(_, n)| n);
        let mut roots: Vec<LatticeNode> =
            yaw_candidates(lane_yaw, self.params.yaw_resolution, std::f64::consts::PI)
                .into_iter()
                .filter_map(|yaw| {
                    let pitch = match normal {
                        Some(n)
                            if residual_alignment(&n, yaw).ok()?
                                <= self.params.alpha_max + 1e-12 =>
                        {
                            optimal_pitch(&n, yaw).ok()?
                        }
                        Some(_) => return None,
                        None => state.pitch,
                    };
                    Some(LatticeNode::root(yaw, pitch, abs_diff(yaw, state.yaw)))
                })
                .collect();
        roots.dedup_by(|a, b| abs_diff(a.yaw, b.yaw) < 1e-9);
        self.tick(state, roots, pm, path)
    }

    fn tick(
        &mut self,
        state: &VehicleState,
        roots: Vec<LatticeNode>,
        pm: &PlanningMap,
        path: &CoveragePath,
    ) -> Result<Option<Command>> {
        let root_sample = self.tree.layers.first().and_then(|l| l.sample);
        let root = LatticeLayer {
            sample: root_sample,
            xy: state.position.xy(),
            position: state.position,
            normal: Vector3::z(),
            lane_yaw: state.yaw,
            shifted: false,
            nodes: roots,
        };
        if self.tree.layers.is_empty() {
            self.tree.layers.push(root);
        } else {
            self.tree.layers[0] = root;
        }
        let mut added = self.refresh(pm, path)?;
        added += self.expand(pm, path)?;
        self.connect();
        self.tree.propagate();
        let depth = self.tree.reachable_depth();
        if depth < self.tree.depth() {
            self.drop_from(depth + 1);
        }
        if depth == 0 {
            if self.next_sample >= path.len() {
                return Ok(None);
            }
            return Err(Error::PlannerStall {
                sample: self.pending_sample(),
                reason: "no reachable node in the first layer".into(),
            });
        }
        let best = search_best(&mut self.tree)?;
        let root_node = self.tree.layers[0].nodes[best.nodes[0]].clone();
        let layer = &self.tree.layers[1];
        let node = layer.nodes[best.nodes[1]].clone();
        let rotate_first = (self.tree.layers[0].nodes.len() > 1
            && abs_diff(root_node.yaw, state.yaw) > 1e-12)
            .then_some((root_node.yaw, root_node.pitch));
        let command = Command {
            position: layer.position,
            yaw: node.yaw,
            pitch: node.pitch,
            rotate_first,
            cost: best.cost,
            preferred: best.preferred,
            shifted: layer.shifted,
            sample_index: layer.sample.expect("path layer"),
            nodes_added: added,
        };
        // Commit: the first layer becomes the root holding the chosen node.
        self.tree.layers.remove(0);
        let mut committed = node;
        committed.parents.clear();
        committed.best_cost = 0.0;
        committed.parent = None;
        self.tree.layers[0].nodes = vec![committed];
        self.settled = command.sample_index + 1;
        Ok(Some(command))
    }

    /// Drops layers from index `k` on and rewinds the sample cursor so they
    /// (and any samples skipped after layer `k - 1`) are expanded again.
    fn drop_from(&mut self, k: usize) {
        let resume = self.tree.layers[k - 1]
            .sample
            .map_or(0, |s| s + 1)
            .max(self.settled);
        self.next_sample = resume;
        self.skipped.retain(|&s| s < resume);
        self.tree.truncate(k - 1);
    }

    /// Re-validates kept layers against the current map snapshot and
    /// truncates at the first one that no longer holds.
    fn refresh(&mut self, pm: &PlanningMap, path: &CoveragePath) -> Result<usize> {
        let mut added = 0;
        for k in 1..self.tree.layers.len() {
            let layer = &self.tree.layers[k];
            let prev = self.tree.layers[k - 1].position;
            let ok = match pm.probe(&layer.xy) {
                Probe::Feasible { position, normal } => {
                    matches!(pm.segment(&prev, &position), Probe::Feasible { .. })
                        .then_some((position, normal))
                }
                _ => None,
            };
            let Some((position, normal)) = ok else {
                self.drop_from(k);
                return Ok(added);
            };
            let sample = path.sample(layer.sample.expect("path layer"))?;
            let changed = (normal - layer.normal).norm() > 1e-12;
            let nodes = changed.then(|| self.candidates(sample, &normal));
            let layer = &mut self.tree.layers[k];
            layer.position = position;
            if let Some(nodes) = nodes {
                layer.normal = normal;
                layer.nodes = nodes;
                added += layer.nodes.len();
                if layer.nodes.is_empty() {
                    self.drop_from(k);
                    return Ok(added);
                }
            }
        }
        Ok(added)
    }

    /// Appends layers until the horizon is full or the next sample cannot be
    /// decided on the current map.
    fn expand(&mut self, pm: &PlanningMap, path: &CoveragePath) -> Result<usize> {
        let mut added = 0;
        while self.tree.depth() < self.params.layer_count() && self.next_sample < path.len() {
            let index = self.next_sample;
            let sample = path.sample(index)?;
            let prev = self.tree.layers.last().expect("root").position;
            let outcome = avoid_obstacle_with(pm, &sample.position, &sample.lane_dir, |p| {
                pm.segment(&prev, p)
            });
            match outcome {
                Avoidance::Feasible {
                    xy,
                    position,
                    normal,
                    offset,
                } => {
                    let nodes = self.candidates(sample, &normal);
                    if nodes.is_empty() {
                        break;
                    }
                    added += nodes.len();
                    self.tree.layers.push(LatticeLayer {
                        sample: Some(index),
                        xy,
                        position,
                        normal,
                        lane_yaw: sample.lane_yaw(),
                        shifted: offset != 0.0,
                        nodes,
                    });
                    self.next_sample += 1;
                }
                Avoidance::Blocked => {
                    self.skipped.insert(index);
                    self.next_sample += 1;
                }
                Avoidance::Unobserved => break,
            }
        }
        Ok(added)
    }

    /// Yaw candidates around the lane direction that satisfy the alignment
    /// bound, with their optimal pitch and exploration preference.
    fn candidates(&self, sample: &PathSample, normal: &Vector3<f64>) -> Vec<LatticeNode> {
        let p = &self.params;
        let next = sample.next_lane_dir.map(|d| heading(&d));
        yaw_candidates(sample.lane_yaw(), p.yaw_resolution, p.lane_yaw_max)
            .into_iter()
            .filter_map(|yaw| {
                if residual_alignment(normal, yaw).ok()? > p.alpha_max + 1e-12 {
                    return None;
                }
                let pitch = optimal_pitch(normal, yaw).ok()?;
                let preferred = next.is_some_and(|h| abs_diff(yaw, h) < p.e_max);
                Some(LatticeNode::new(yaw, pitch, preferred))
            })
            .collect()
    }

    /// Records feasible predecessors. Motion between layers was already
    /// checked, so only the yaw step remains per edge.
    fn connect(&mut self) {
        let step = self.params.step_yaw_max + 1e-12;
        for k in 1..self.tree.layers.len() {
            let (done, rest) = self.tree.layers.split_at_mut(k);
            let prev = &done[k - 1].nodes;
            for node in rest[0].nodes.iter_mut() {
                node.parents = (0..prev.len())
                    .filter(|&i| abs_diff(node.yaw, prev[i].yaw) <= step)
                    .collect();
            }
        }
    }
}
