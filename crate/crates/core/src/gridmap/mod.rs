//! 2.5D elevation map.
//!
//! Cells are indexed column-major in x and row-major in y, with row 0 at the
//! map origin (minimum y). Unobserved cells carry no elevation at all.

mod clearance;
mod export;
mod footprint;

pub use clearance::TraversabilityMask;
pub use export::{write_map_csv, Heatmap, MAP_CSV_HEADER};
pub use footprint::{DetectorPose, FOOTPRINT_BOUNDARY_RAYS};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub col: usize,
    pub row: usize,
}

impl CellIndex {
    pub fn new(col: usize, row: usize) -> Self {
        CellIndex { col, row }
    }
}

/// How repeated height samples in one cell are combined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FusionRule {
    /// Keep the highest sample (upper-bound terrain).
    #[default]
    Max,
    /// Exponential moving average with the given weight on the new sample.
    Ema { weight: f64 },
}

/// Plane fitted around a cell.
#[derive(Clone, Copy, Debug)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    /// Plane height at the cell center.
    pub height: f64,
    /// Root-mean-square vertical residual of the fit.
    pub rms_residual: f64,
}

impl PlaneFit {
    /// Plane height at `offset` from the cell center.
    pub fn height_at(&self, offset: &Vector2<f64>) -> f64 {
        self.height - (self.normal.x * offset.x + self.normal.y * offset.y) / self.normal.z
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IntegrateStats {
    /// Distinct cells touched by this batch.
    pub updated_cells: usize,
    pub out_of_bounds: usize,
}

#[derive(Clone, Debug)]
pub struct ElevationMap {
    origin: Vector2<f64>,
    resolution: f64,
    width: usize,
    height: usize,
    elevation: Vec<Option<f64>>,
    /// Sample closest to the cell center, as (offset x, offset y, z). Plane
    /// fits use it so curvature does not bias normals toward the uphill edge
    /// the way max-fused heights would.
    anchor: Vec<Option<Vector3<f64>>>,
    signal_sum: Vec<f64>,
    signal_count: Vec<u32>,
    fusion: FusionRule,
}

impl ElevationMap {
    pub fn new(origin: Vector2<f64>, size: Vector2<f64>, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return invalid(format!("resolution must be positive (got {resolution})"));
        }
        if !(size.x > 0.0 && size.y > 0.0) || !size.iter().all(|v| v.is_finite()) {
            return invalid(format!("map size must be positive (got {size:?})"));
        }
        let width = cell_count(size.x, resolution);
        let height = cell_count(size.y, resolution);
        let n = width * height;
        Ok(ElevationMap {
            origin,
            resolution,
            width,
            height,
            elevation: vec![None; n],
            anchor: vec![None; n],
            signal_sum: vec![0.0; n],
            signal_count: vec![0; n],
            fusion: FusionRule::Max,
        })
    }

    pub fn with_fusion(mut self, fusion: FusionRule) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fusion(&self) -> FusionRule {
        self.fusion
    }

    pub(crate) fn flat(&self, c: CellIndex) -> usize {
        c.row * self.width + c.col
    }

    pub fn contains(&self, c: CellIndex) -> bool {
        c.col < self.width && c.row < self.height
    }

    fn check(&self, c: CellIndex) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            invalid(format!(
                "cell ({}, {}) outside {}x{} map",
                c.col, c.row, self.width, self.height
            ))
        }
    }

    /// Cell containing `xy`, if inside the map.
    pub fn cell_at(&self, xy: &Vector2<f64>) -> Option<CellIndex> {
        let local = (xy - self.origin) / self.resolution;
        if !(local.x >= 0.0 && local.y >= 0.0) {
            return None;
        }
        let (col, row) = (local.x.floor() as usize, local.y.floor() as usize);
        let c = CellIndex { col, row };
        self.contains(c).then_some(c)
    }

    pub fn cell_center(&self, c: CellIndex) -> Vector2<f64> {
        self.origin
            + Vector2::new(
                (c.col as f64 + 0.5) * self.resolution,
                (c.row as f64 + 0.5) * self.resolution,
            )
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.height).flat_map(move |row| (0..self.width).map(move |col| CellIndex { col, row }))
    }

    /// Elevation of an in-bounds cell; `None` when unobserved.
    pub fn elevation(&self, c: CellIndex) -> Option<f64> {
        self.contains(c)
            .then(|| self.elevation[self.flat(c)])
            .flatten()
    }

    pub fn elevation_at(&self, xy: &Vector2<f64>) -> Option<f64> {
        self.cell_at(xy).and_then(|c| self.elevation(c))
    }

    pub fn is_observed(&self, c: CellIndex) -> bool {
        self.elevation(c).is_some()
    }

    pub fn observed_count(&self) -> usize {
        self.elevation.iter().filter(|e| e.is_some()).count()
    }

    /// Fuses 3D points into the map; points outside the footprint are skipped.
    pub fn integrate_points(&mut self, points: &[Vector3<f64>]) -> IntegrateStats {
        let mut stats = IntegrateStats::default();
        let mut touched = vec![false; self.len()];
        for p in points {
            if !p.iter().all(|v| v.is_finite()) {
                stats.out_of_bounds += 1;
                continue;
            }
            let Some(c) = self.cell_at(&p.xy()) else {
                stats.out_of_bounds += 1;
                continue;
            };
            let i = self.flat(c);
            let fused = match (self.elevation[i], self.fusion) {
                (None, _) => p.z,
                (Some(e), FusionRule::Max) => e.max(p.z),
                (Some(e), FusionRule::Ema { weight }) => e + weight * (p.z - e),
            };
            self.elevation[i] = Some(fused);
            let offset = p.xy() - self.cell_center(c);
            if self.anchor[i].map_or(true, |a| offset.norm_squared() < a.xy().norm_squared()) {
                self.anchor[i] = Some(Vector3::new(offset.x, offset.y, p.z));
            }
            if !touched[i] {
                touched[i] = true;
                stats.updated_cells += 1;
            }
        }
        stats
    }

    /// Directly sets a cell's elevation (synthetic maps and tests).
    pub fn set_elevation(&mut self, c: CellIndex, z: Option<f64>) -> Result<()> {
        self.check(c)?;
        let i = self.flat(c);
        self.elevation[i] = z;
        self.anchor[i] = z.map(|z| Vector3::new(0.0, 0.0, z));
        Ok(())
    }

    /// Least-squares plane `z = a dx + b dy + h` over observed cells within
    /// `window` cells (Chebyshev radius), using each cell's sample nearest
    /// its center. `None` with fewer than three cells or collinear
    /// support.
    pub fn plane_fit(&self, c: CellIndex, window: usize) -> Result<Option<PlaneFit>> {
        self.check(c)?;
        let r = window as isize;
        let mut samples = Vec::with_capacity((2 * window + 1).pow(2));
        for dr in -r..=r {
            for dc in -r..=r {
                let col = c.col as isize + dc;
                let row = c.row as isize + dr;
                if col < 0 || row < 0 {
                    continue;
                }
                let n = CellIndex::new(col as usize, row as usize);
                if let Some(a) = self
                    .contains(n)
                    .then(|| self.anchor[self.flat(n)])
                    .flatten()
                {
                    samples.push((
                        dc as f64 * self.resolution + a.x,
                        dr as f64 * self.resolution + a.y,
                        a.z,
                    ));
                }
            }
        }
        if samples.len() < 3 {
            return Ok(None);
        }
        let count = samples.len() as f64;
        let (mx, my, mz) = samples.iter().fold((0.0, 0.0, 0.0), |acc, s| {
            (
                acc.0 + s.0 / count,
                acc.1 + s.1 / count,
                acc.2 + s.2 / count,
            )
        });
        let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y, z) in &samples {
            let (x, y, z) = (x - mx, y - my, z - mz);
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
            sxz += x * z;
            syz += y * z;
        }
        let det = sxx * syy - sxy * sxy;
        let scale = (sxx + syy).powi(2);
        if det <= 1e-9 * scale || scale == 0.0 {
            return Ok(None);
        }
        let a = (sxz * syy - syz * sxy) / det;
        let b = (syz * sxx - sxz * sxy) / det;
        let height = mz - a * mx - b * my;
        let ss: f64 = samples
            .iter()
            .map(|&(x, y, z)| (z - (a * x + b * y + height)).powi(2))
            .sum();
        Ok(Some(PlaneFit {
            normal: Vector3::new(-a, -b, 1.0).normalize(),
            height,
            rms_residual: (ss / count).sqrt(),
        }))
    }

    /// Unit normal (positive z) from a plane fit; `None` when unknown.
    pub fn surface_normal(&self, c: CellIndex, window: usize) -> Result<Option<Vector3<f64>>> {
        Ok(self.plane_fit(c, window)?.map(|p| p.normal))
    }

    /// Steepest of the fitted plane's slope and the step slope to any
    /// observed neighbor in the window. A lone spike fits a level plane at its
    /// own cell, so the step term is what flags it.
    pub fn local_slope(&self, c: CellIndex, window: usize) -> Result<Option<f64>> {
        let Some(z) = self.elevation(c) else {
            self.check(c)?;
            return Ok(None);
        };
        let Some(fit) = self.plane_fit(c, window)? else {
            return Ok(None);
        };
        let mut slope = fit.normal.z.clamp(-1.0, 1.0).acos();
        let r = window as isize;
        for dr in -r..=r {
            for dc in -r..=r {
                let (col, row) = (c.col as isize + dc, c.row as isize + dr);
                if (dr == 0 && dc == 0) || col < 0 || row < 0 {
                    continue;
                }
                if let Some(zn) = self.elevation(CellIndex::new(col as usize, row as usize)) {
                    let run = self.resolution * ((dc * dc + dr * dr) as f64).sqrt();
                    slope = slope.max(((zn - z).abs() / run).atan());
                }
            }
        }
        Ok(Some(slope))
    }

    pub fn traversable_mask(&self, slope_max: f64) -> TraversabilityMask {
        self.traversable_mask_with(slope_max, 1, Exec::default())
    }

    /// Cells are traversable iff observed with a known [`local_slope`] of at
    /// most `slope_max`.
    ///
    /// [`local_slope`]: ElevationMap::local_slope
    pub fn traversable_mask_with(
        &self,
        slope_max: f64,
        window: usize,
        exec: Exec,
    ) -> TraversabilityMask {
        let rows = exec.map_range(self.height, |row| {
            (0..self.width)
                .map(|col| {
                    let c = CellIndex { col, row };
                    matches!(self.local_slope(c, window), Ok(Some(s)) if s <= slope_max)
                })
                .collect::<Vec<_>>()
        });
        TraversabilityMask::new(
            self.origin,
            self.resolution,
            self.width,
            self.height,
            rows.into_iter().flatten().collect(),
        )
    }

    /// Mask of known obstacles: only observed cells whose local slope is known
    /// and exceeds `slope_max` are blocked. Unobserved cells stay clear here so
    /// that clearance measures distance to terrain actually seen to be steep.
    pub fn obstacle_mask_with(
        &self,
        slope_max: f64,
        window: usize,
        exec: Exec,
    ) -> TraversabilityMask {
        let rows = exec.map_range(self.height, |row| {
            (0..self.width)
                .map(|col| {
                    let c = CellIndex { col, row };
                    !matches!(self.local_slope(c, window), Ok(Some(s)) if s > slope_max)
                })
                .collect::<Vec<_>>()
        });
        TraversabilityMask::new(
            self.origin,
            self.resolution,
            self.width,
            self.height,
            rows.into_iter().flatten().collect(),
        )
    }

    /// Adds one detector reading to each listed cell.
    pub fn accumulate_signal(&mut self, cells: &[CellIndex], signal: f64) -> Result<()> {
        if let Some(bad) = cells.iter().find(|c| !self.contains(**c)) {
            return self.check(*bad);
        }
        if !signal.is_finite() {
            return invalid("signal must be finite");
        }
        for c in cells {
            let i = self.flat(*c);
            self.signal_sum[i] += signal;
            self.signal_count[i] += 1;
        }
        Ok(())
    }

    pub fn signal_mean(&self, c: CellIndex) -> Option<f64> {
        if !self.contains(c) {
            return None;
        }
        let i = self.flat(c);
        (self.signal_count[i] > 0).then(|| self.signal_sum[i] / f64::from(self.signal_count[i]))
    }

    pub fn signal_count(&self, c: CellIndex) -> u32 {
        if self.contains(c) {
            self.signal_count[self.flat(c)]
        } else {
            0
        }
    }
}

fn cell_count(extent: f64, resolution: f64) -> usize {
    // Guard against 3.0 / 0.15 = 20.000000000000004 style round-up.
    let ratio = extent / resolution;
    let rounded = ratio.round();
    let n = if (ratio - rounded).abs() < 1e-9 * rounded.max(1.0) {
        rounded
    } else {
        ratio.ceil()
    };
    (n as usize).max(1)
}
