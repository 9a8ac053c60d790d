use nalgebra::{Vector2, Vector3};
use std::f64::consts::TAU;

use super::{CellIndex, ElevationMap};
use crate::alignment::AttitudeYP;
use crate::error::{invalid, Result};

/// Boundary points sampled on the coil ellipse, in addition to its center.
pub const FOOTPRINT_BOUNDARY_RAYS: usize = 16;

/// Detector coil pose: center position plus yaw/pitch (zero roll).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorPose {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
}

impl DetectorPose {
    pub fn new(position: Vector3<f64>, yaw: f64, pitch: f64) -> Self {
        DetectorPose {
            position,
            yaw,
            pitch,
        }
    }

    pub fn attitude(&self) -> AttitudeYP {
        AttitudeYP {
            yaw: self.yaw,
            pitch: self.pitch,
        }
    }

    /// Coil-frame point (x along the major axis) expressed in the world.
    pub fn to_world(&self, local: Vector3<f64>) -> Vector3<f64> {
        self.position + self.attitude().rotation() * local
    }
}

impl ElevationMap {
    /// Cells hit by rays cast along the coil's -z axis from its center and
    /// boundary points. Rays are marched at a quarter cell up to `max_range`;
    /// unobserved cells are passed through. Center hit first, no duplicates.
    pub fn raytrace_footprint(
        &self,
        pose: &DetectorPose,
        semi_axes: Vector2<f64>,
        max_range: f64,
    ) -> Result<Vec<CellIndex>> {
        if !(semi_axes.x > 0.0 && semi_axes.y > 0.0) {
            return invalid(format!(
                "ellipse semi-axes must be positive (got {semi_axes:?})"
            ));
        }
        if !pose.position.iter().all(|v| v.is_finite())
            || !pose.yaw.is_finite()
            || !pose.pitch.is_finite()
        {
            return invalid("detector pose must be finite");
        }
        let rot = pose.attitude().rotation();
        let dir = -(rot * Vector3::z());
        let step = self.resolution() * 0.25;
        let steps = (max_range / step).ceil() as usize;

        let mut hits: Vec<CellIndex> = Vec::with_capacity(FOOTPRINT_BOUNDARY_RAYS + 1);
        let origins =
            std::iter::once(Vector3::zeros()).chain((0..FOOTPRINT_BOUNDARY_RAYS).map(|i| {
                let t = TAU * i as f64 / FOOTPRINT_BOUNDARY_RAYS as f64;
                Vector3::new(semi_axes.x * t.cos(), semi_axes.y * t.sin(), 0.0)
            }));
        for local in origins {
            let start = pose.position + rot * local;
            for k in 0..=steps {
                let p = start + dir * (k as f64 * step).min(max_range);
                let Some(c) = self.cell_at(&p.xy()) else {
                    continue;
                };
                if let Some(z) = self.elevation(c) {
                    if p.z <= z {
                        if !hits.contains(&c) {
                            hits.push(c);
                        }
                        break;
                    }
                }
            }
        }
        Ok(hits)
    }
}
