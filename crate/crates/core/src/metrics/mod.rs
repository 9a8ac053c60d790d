//! Survey statistics, detection mapping and trajectory errors.
//!
//! Angles in reports are degrees. Percentiles use the nearest-rank method.

mod detection;
mod safety;
mod trajectory;

pub use detection::{
    detection_report, Component, DetectionReport, TargetResult, BACKGROUND_RADIUS,
};
pub use safety::{safety_stats, truth_obstacles, SafetyStats};
pub use trajectory::{trajectory_errors, TrajectoryErrors};

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Vector2, Vector3};
use serde::Serialize;

use crate::alignment::alignment_error;
use crate::angles::{deg, wrap};
use crate::error::{invalid, Error, Result};
use crate::gridmap::{CellIndex, ElevationMap};
use crate::sim::{SurveyLog, World};

/// Nearest-rank percentile (`p` in percent) of an unsorted sample.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyReport("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return invalid(format!("percentile must be in [0, 100] (got {p})"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-cell reference normals on a map grid.
#[derive(Clone, Debug)]
pub struct NormalField {
    width: usize,
    normals: Vec<Option<Vector3<f64>>>,
}

impl NormalField {
    /// Plane-fit normals over a `(2 window + 1)²` neighbourhood.
    pub fn from_map(map: &ElevationMap, window: usize) -> Result<Self> {
        let normals = map
            .cells()
            .map(|c| map.surface_normal(c, window))
            .collect::<Result<Vec<_>>>()?;
        Ok(NormalField {
            width: map.width(),
            normals,
        })
    }

    /// Normals from `f` evaluated at each cell center of `grid`.
    pub fn from_fn(grid: &ElevationMap, f: impl Fn(f64, f64) -> Option<Vector3<f64>>) -> Self {
        let normals = grid
            .cells()
            .map(|c| grid.cell_center(c))
            .map(|p| f(p.x, p.y))
            .collect();
        NormalField {
            width: grid.width(),
            normals,
        }
    }

    /// Analytic truth normals of a survey world on its map grid, restricted
    /// to cells centered inside the survey area.
    pub fn survey_truth(world: &World) -> Result<Self> {
        let area = &world.scenario.area;
        Ok(Self::from_fn(&world.empty_map()?, |x, y| {
            area.contains(&Vector2::new(x, y))
                .then(|| world.truth.normal(x, y))
        }))
    }

    pub fn get(&self, c: CellIndex) -> Option<Vector3<f64>> {
        if c.col >= self.width {
            return None;
        }
        self.normals
            .get(c.row * self.width + c.col)
            .copied()
            .flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentStats {
    pub mean_deg: f64,
    pub p95_deg: f64,
    pub max_deg: f64,
    /// Best alignment seen by each covered cell, deg, in cell order.
    pub per_cell: Vec<(CellIndex, f64)>,
}

impl AlignmentStats {
    pub fn covered_cells(&self) -> usize {
        self.per_cell.len()
    }
}

/// Best-observed alignment per covered cell: the minimum over every detector
/// reading whose footprint contains the cell of the angle between the coil
/// axis and the reference normal. Cells without a reference normal are
/// ignored.
pub fn alignment_stats(log: &SurveyLog, truth: &NormalField) -> Result<AlignmentStats> {
    if log.ticks.is_empty() {
        return invalid("alignment statistics need a non-empty log");
    }
    let mut best: BTreeMap<CellIndex, f64> = BTreeMap::new();
    for det in log.ticks.iter().flat_map(|t| &t.detections) {
        let att = det.pose.attitude();
        for &c in &det.cells {
            let Some(n) = truth.get(c) else { continue };
            let a = alignment_error(&n, &att);
            best.entry(c).and_modify(|v| *v = v.min(a)).or_insert(a);
        }
    }
    if best.is_empty() {
        return Err(Error::EmptyReport(
            "no detector footprint covered a cell with a known normal".into(),
        ));
    }
    let per_cell: Vec<(CellIndex, f64)> = best.into_iter().map(|(c, a)| (c, deg(a))).collect();
    let values: Vec<f64> = per_cell.iter().map(|(_, a)| *a).collect();
    let (mean_deg, _) = mean_std(&values);
    Ok(AlignmentStats {
        mean_deg,
        p95_deg: percentile_nearest_rank(&values, 95.0)?,
        max_deg: values.iter().copied().fold(0.0, f64::max),
        per_cell,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YawPitchStats {
    pub dyaw_mean: f64,
    pub dyaw_std: f64,
    pub dpitch_mean: f64,
    pub dpitch_std: f64,
    /// σ of the signed wrapped yaw changes.
    pub dyaw_signed_std: f64,
    pub dyaw: Vec<f64>,
    pub dpitch: Vec<f64>,
}

/// Statistics of the absolute wrapped attitude change between consecutive
/// realized poses, deg.
pub fn yaw_pitch_stats(log: &SurveyLog) -> Result<YawPitchStats> {
    if log.ticks.len() < 2 {
        return invalid(format!(
            "attitude statistics need at least 2 ticks (got {})",
            log.ticks.len()
        ));
    }
    let pairs = log
        .ticks
        .windows(2)
        .map(|w| (&w[0].realized, &w[1].realized));
    let signed: Vec<f64> = pairs
        .clone()
        .map(|(a, b)| deg(wrap(b.yaw - a.yaw)))
        .collect();
    let dyaw: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
    let dpitch: Vec<f64> = pairs.map(|(a, b)| deg((b.pitch - a.pitch).abs())).collect();
    let (dyaw_mean, dyaw_std) = mean_std(&dyaw);
    let (dpitch_mean, dpitch_std) = mean_std(&dpitch);
    Ok(YawPitchStats {
        dyaw_mean,
        dyaw_std,
        dpitch_mean,
        dpitch_std,
        dyaw_signed_std: mean_std(&signed).1,
        dyaw,
        dpitch,
    })
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurveyReport {
    pub method: String,
    pub duration_s: f64,
    pub dyaw_mean: f64,
    pub dyaw_std: f64,
    pub dpitch_mean: f64,
    pub dpitch_std: f64,
    pub alpha_min_mean: f64,
    pub alpha_min_p95: f64,
    pub over_unobserved: usize,
    pub covered_cells: usize,
}

pub const REPORT_CSV_HEADER: &str = "method,duration_s,dyaw_mean,dyaw_std,dpitch_mean,dpitch_std,\
alpha_min_mean,alpha_min_p95,over_unobserved,covered_cells";

/// Report with the underlying distributions, for JSON export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullReport {
    pub summary: SurveyReport,
    pub dyaw_signed_std: f64,
    pub alpha_min_max: f64,
    pub dyaw_deg: Vec<f64>,
    pub dpitch_deg: Vec<f64>,
    pub alpha_min_deg: Vec<f64>,
}

impl FullReport {
    pub fn from_log(log: &SurveyLog, truth: &NormalField) -> Result<Self> {
        let yp = yaw_pitch_stats(log)?;
        let al = alignment_stats(log, truth)?;
        Ok(FullReport {
            summary: SurveyReport {
                method: log.method.to_string(),
                duration_s: log.duration(),
                dyaw_mean: yp.dyaw_mean,
                dyaw_std: yp.dyaw_std,
                dpitch_mean: yp.dpitch_mean,
                dpitch_std: yp.dpitch_std,
                alpha_min_mean: al.mean_deg,
                alpha_min_p95: al.p95_deg,
                over_unobserved: log.over_unobserved(),
                covered_cells: al.covered_cells(),
            },
            dyaw_signed_std: yp.dyaw_signed_std,
            alpha_min_max: al.max_deg,
            alpha_min_deg: al.per_cell.iter().map(|(_, a)| *a).collect(),
            dyaw_deg: yp.dyaw,
            dpitch_deg: yp.dpitch,
        })
    }
}

impl SurveyReport {
    pub fn from_log(log: &SurveyLog, truth: &NormalField) -> Result<Self> {
        Ok(FullReport::from_log(log, truth)?.summary)
    }
}

/// Fixed-precision CSV so reruns compare byte for byte.
pub fn write_report_csv<W: Write>(reports: &[SurveyReport], out: &mut W) -> Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{:.3},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.method,
            r.duration_s,
            r.dyaw_mean,
            r.dyaw_std,
            r.dpitch_mean,
            r.dpitch_std,
            r.alpha_min_mean,
            r.alpha_min_p95,
            r.over_unobserved,
            r.covered_cells
        )?;
    }
    Ok(())
}

pub fn write_report_json<W: Write>(reports: &[FullReport], out: &mut W) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, reports)?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests;
