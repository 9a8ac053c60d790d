use serde::Serialize;

use crate::error::Result;
use crate::exec::Exec;
use crate::gridmap::{ElevationMap, TraversabilityMask};
use crate::sim::{SurveyLog, World};

/// Coverage of the cells the body can reach and clearance of the commanded
/// poses, both judged against the truth obstacle mask.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SafetyStats {
    /// Survey-area cells whose center keeps `body_radius` from every
    /// obstacle cell.
    pub reachable_cells: usize,
    /// Reachable cells with at least one detector reading.
    pub covered_reachable: usize,
    pub coverage_fraction: f64,
    /// Commanded positions closer than `body_radius` to an obstacle cell.
    pub clearance_violations: usize,
    pub min_clearance: f64,
}

/// Cells of the truth terrain steeper than `slope_max`.
pub fn truth_obstacles(world: &World, exec: Exec) -> Result<TraversabilityMask> {
    let p = &world.scenario.planner;
    Ok(world
        .truth_map()?
        .obstacle_mask_with(p.slope_max, p.normal_window, exec))
}

pub fn safety_stats(
    world: &World,
    log: &SurveyLog,
    map: &ElevationMap,
    obstacles: &TraversabilityMask,
) -> Result<SafetyStats> {
    let radius = world.scenario.planner.body_radius;
    let area = &world.scenario.area;
    let (mut reachable, mut covered) = (0, 0);
    for c in map.cells() {
        let p = map.cell_center(c);
        if !area.contains(&p) || obstacles.clearance(&p)? < radius {
            continue;
        }
        reachable += 1;
        covered += usize::from(map.signal_count(c) > 0);
    }
    let mut violations = 0;
    let mut min_clearance = f64::INFINITY;
    for t in &log.ticks {
        let d = obstacles.clearance(&t.commanded.position.xy())?;
        violations += usize::from(d < radius);
        min_clearance = min_clearance.min(d);
    }
    Ok(SafetyStats {
        reachable_cells: reachable,
        covered_reachable: covered,
        coverage_fraction: if reachable == 0 {
            0.0
        } else {
            covered as f64 / reachable as f64
        },
        clearance_violations: violations,
        min_clearance,
    })
}
