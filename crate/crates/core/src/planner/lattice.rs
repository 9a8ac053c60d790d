//! Layered yaw lattice and its shortest-path search.

use nalgebra::{Vector2, Vector3};

use crate::angles::{abs_diff, wrap};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeNode {
    pub yaw: f64,
    pub pitch: f64,
    pub preferred: bool,
    /// Indices of feasible predecessors in the previous layer, ascending.
    pub parents: Vec<usize>,
    pub best_cost: f64,
    pub parent: Option<usize>,
}

impl LatticeNode {
    pub fn new(yaw: f64, pitch: f64, preferred: bool) -> Self {
        LatticeNode {
            yaw,
            pitch,
            preferred,
            parents: Vec::new(),
            best_cost: f64::INFINITY,
            parent: None,
        }
    }

    pub fn root(yaw: f64, pitch: f64, cost: f64) -> Self {
        LatticeNode {
            best_cost: cost,
            ..LatticeNode::new(yaw, pitch, false)
        }
    }

    pub fn is_reachable(&self) -> bool {
        self.best_cost.is_finite()
    }
}

/// One path sample lifted onto the terrain with its yaw candidates. All nodes
/// of a layer share the position.
#[derive(Clone, Debug)]
pub struct LatticeLayer {
    /// Path sample this layer realizes; `None` for a root that is not on the path.
    pub sample: Option<usize>,
    /// Horizontal reference position after any avoidance shift.
    pub xy: Vector2<f64>,
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub lane_yaw: f64,
    pub shifted: bool,
    pub nodes: Vec<LatticeNode>,
}

impl LatticeLayer {
    /// A layer without geometry, for search-only use.
    pub fn abstract_layer(lane_yaw: f64, nodes: Vec<LatticeNode>) -> Self {
        LatticeLayer {
            sample: None,
            xy: Vector2::zeros(),
            position: Vector3::zeros(),
            normal: Vector3::z(),
            lane_yaw,
            shifted: false,
            nodes,
        }
    }
}

/// Layer 0 is the root (current vehicle state or the set of in-place
/// rotations from it); edges only join consecutive layers.
#[derive(Clone, Debug, Default)]
pub struct LatticeTree {
    pub layers: Vec<LatticeLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Chosen node index per layer, root included.
    pub nodes: Vec<usize>,
    pub cost: f64,
    pub preferred: bool,
}

/// Costs closer than this (rad) are treated as ties when choosing between
/// paths. Reported costs are always the exact minimum.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub fn edge_cost(a: &LatticeNode, b: &LatticeNode) -> f64 {
    abs_diff(b.yaw, a.yaw)
}

impl LatticeTree {
    pub fn new(root: LatticeLayer) -> Self {
        LatticeTree { layers: vec![root] }
    }

    /// Layers beyond the root.
    pub fn depth(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.nodes.len()).sum()
    }

    /// Forward dynamic-programming pass. Root costs are taken as given.
    /// `best_cost` is the exact minimum over parents; among parents within
    /// [`TIE_TOLERANCE`] of it the one with the smallest yaw change wins (so
    /// turns happen as early as possible), then the smaller index.
    pub fn propagate(&mut self) {
        for k in 1..self.layers.len() {
            let (done, rest) = self.layers.split_at_mut(k);
            let prev = &done[k - 1].nodes;
            for node in rest[0].nodes.iter_mut() {
                let options: Vec<(usize, f64, f64)> = node
                    .parents
                    .iter()
                    .map(|&p| {
                        let turn = edge_cost(&prev[p], node);
                        (p, prev[p].best_cost + turn, turn)
                    })
                    .collect();
                let best = options.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
                let mut choice: Option<(usize, f64)> = None;
                if best.is_finite() {
                    for &(p, cost, turn) in &options {
                        if cost <= best + TIE_TOLERANCE && choice.map_or(true, |(_, t)| turn < t) {
                            choice = Some((p, turn));
                        }
                    }
                }
                node.best_cost = best;
                node.parent = choice.map(|(p, _)| p);
            }
        }
    }

    /// Number of leading layers beyond the root that each hold a reachable
    /// node. Valid after [`LatticeTree::propagate`].
    pub fn reachable_depth(&self) -> usize {
        self.layers
            .iter()
            .skip(1)
            .take_while(|l| l.nodes.iter().any(LatticeNode::is_reachable))
            .count()
    }

    /// Keeps the root and the first `depth` layers.
    pub fn truncate(&mut self, depth: usize) {
        self.layers.truncate(depth + 1);
    }
}

/// Minimum total |Δψ| path from the root to the last layer. Among reachable
/// terminals the preferred ones win when any exists; otherwise the constraint
/// is relaxed. Equal costs (within [`TIE_TOLERANCE`]) go to the terminal
/// closest to its lane direction, then to the smaller node index.
pub fn search_best(tree: &mut LatticeTree) -> Result<SearchResult> {
    if tree.layers.len() < 2 {
        return invalid("search needs at least one layer beyond the root");
    }
    tree.propagate();
    let last = tree.layers.last().expect("non-empty");
    let reachable = || {
        last.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_reachable())
    };
    let any_preferred = reachable().any(|(_, n)| n.preferred);
    let eligible = || reachable().filter(|(_, n)| n.preferred || !any_preferred);
    let cost = eligible()
        .map(|(_, n)| n.best_cost)
        .fold(f64::INFINITY, f64::min);
    let mut best: Option<(usize, &LatticeNode)> = None;
    for (i, n) in eligible().filter(|(_, n)| n.best_cost <= cost + TIE_TOLERANCE) {
        let off_lane = abs_diff(n.yaw, last.lane_yaw);
        if best.map_or(true, |(_, b)| off_lane < abs_diff(b.yaw, last.lane_yaw)) {
            best = Some((i, n));
        }
    }
    let Some((terminal, node)) = best else {
        return Err(Error::PlannerStall {
            sample: last.sample.unwrap_or(0),
            reason: "no feasible path reaches the frontier".into(),
        });
    };
    let preferred = node.preferred;
    let mut nodes = vec![terminal];
    for k in (1..tree.layers.len()).rev() {
        let i = *nodes.last().expect("non-empty");
        nodes.push(
            tree.layers[k].nodes[i]
                .parent
                .expect("reachable node has a parent"),
        );
    }
    nodes.reverse();
    Ok(SearchResult {
        nodes,
        cost,
        preferred,
    })
}

/// Yaw candidates `lane_yaw + j·resolution` for `|j·resolution| ≤ half_width`.
pub fn yaw_candidates(lane_yaw: f64, resolution: f64, half_width: f64) -> Vec<f64> {
    let j_max = (half_width / resolution + 1e-9).floor() as i64;
    (-j_max..=j_max)
        .map(|j| wrap(lane_yaw + j as f64 * resolution))
        .collect()
}
