use nalgebra::Vector2;
use serde::Serialize;

use super::mean_std;
use crate::gridmap::{CellIndex, ElevationMap};

/// Covered cells farther than this from every target form the background
/// sample, m.
pub const BACKGROUND_RADIUS: f64 = 0.5;

/// 8-connected group of cells whose mean signal exceeds the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub cells: Vec<CellIndex>,
    /// Signal-weighted centroid of the cell centers.
    pub centroid: [f64; 2],
    pub peak: f64,
    /// World-frame bounding box of the cells, `[min_x, min_y, max_x, max_y]`.
    pub bbox: [f64; 4],
}

impl Component {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.bbox[0] && p.y >= self.bbox[1] && p.x <= self.bbox[2] && p.y <= self.bbox[3]
    }

    pub fn centroid(&self) -> Vector2<f64> {
        Vector2::new(self.centroid[0], self.centroid[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetResult {
    pub position: [f64; 2],
    pub detected: bool,
    pub component: Option<usize>,
    /// Distance from the target to the matched component centroid, m.
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    pub threshold: f64,
    pub background_mean: f64,
    pub background_std: f64,
    pub background_cells: usize,
    pub components: Vec<Component>,
    pub targets: Vec<TargetResult>,
}

impl DetectionReport {
    pub fn detected(&self) -> usize {
        self.targets.iter().filter(|t| t.detected).count()
    }
}

/// Thresholds the accumulated signal layer and matches components to
/// targets. `threshold = None` uses background mean + 5σ (zero when there is
/// no background).
pub fn detection_report(
    map: &ElevationMap,
    targets: &[Vector2<f64>],
    threshold: Option<f64>,
) -> DetectionReport {
    let background: Vec<f64> = map
        .cells()
        .filter_map(|c| {
            let s = map.signal_mean(c)?;
            let center = map.cell_center(c);
            targets
                .iter()
                .all(|t| (t - center).norm() > BACKGROUND_RADIUS)
                .then_some(s)
        })
        .collect();
    let (background_mean, background_std) = mean_std(&background);
    let threshold = threshold.unwrap_or(if background.is_empty() {
        0.0
    } else {
        background_mean + 5.0 * background_std
    });

    let components = components(map, threshold);
    let targets = targets
        .iter()
        .map(|t| {
            let best = components
                .iter()
                .enumerate()
                .filter(|(_, c)| c.contains(t))
                .map(|(i, c)| (i, (c.centroid() - t).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            TargetResult {
                position: [t.x, t.y],
                detected: best.is_some(),
                component: best.map(|b| b.0),
                error: best.map(|b| b.1),
            }
        })
        .collect();
    DetectionReport {
        threshold,
        background_mean,
        background_std,
        background_cells: background.len(),
        components,
        targets,
    }
}

fn components(map: &ElevationMap, threshold: f64) -> Vec<Component> {
    let (w, h) = (map.width(), map.height());
    let hot = |c: CellIndex| map.signal_mean(c).is_some_and(|s| s > threshold);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in map.cells() {
        if seen[start.row * w + start.col] || !hot(start) {
            continue;
        }
        seen[start.row * w + start.col] = true;
        let mut stack = vec![start];
        let mut cells = Vec::new();
        while let Some(c) = stack.pop() {
            cells.push(c);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, col) = (c.row as i64 + dr, c.col as i64 + dc);
                    if r < 0 || col < 0 || r >= h as i64 || col >= w as i64 {
                        continue;
                    }
                    let n = CellIndex::new(col as usize, r as usize);
                    if !seen[n.row * w + n.col] && hot(n) {
                        seen[n.row * w + n.col] = true;
                        stack.push(n);
                    }
                }
            }
        }
        cells.sort();
        out.push(summarize(map, cells));
    }
    out
}

fn summarize(map: &ElevationMap, cells: Vec<CellIndex>) -> Component {
    let half = map.resolution() / 2.0;
    let mut bbox = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    let (mut sum, mut weighted, mut peak) = (0.0, Vector2::zeros(), f64::NEG_INFINITY);
    for &c in &cells {
        let p = map.cell_center(c);
        let s = map.signal_mean(c).unwrap_or(0.0);
        bbox = [
            bbox[0].min(p.x - half),
            bbox[1].min(p.y - half),
            bbox[2].max(p.x + half),
            bbox[3].max(p.y + half),
        ];
        sum += s;
        weighted += p * s;
        peak = peak.max(s);
    }
    let centroid = if sum > 0.0 {
        weighted / sum
    } else {
        cells
            .iter()
            .map(|c| map.cell_center(*c))
            .sum::<Vector2<f64>>()
            / cells.len() as f64
    };
    Component {
        cells,
        centroid: [centroid.x, centroid.y],
        peak,
        bbox,
    }
}
