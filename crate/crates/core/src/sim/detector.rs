//! Metal-detector response model.
//!
//! The reading is a modeling choice, not physics: a Gaussian in horizontal
//! distance and in excess coil height, times the cosine of the coil
//! misalignment, summed over targets and clamped to [0, 1].

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::terrain::Heightfield;
use crate::alignment::alignment_error;
use crate::gridmap::DetectorPose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub position: [f64; 2],
    /// Burial depth below the surface, m.
    #[serde(default)]
    pub depth: f64,
    #[serde(default = "unit")]
    pub strength: f64,
}

fn unit() -> f64 {
    1.0
}

impl Target {
    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.position[0], self.position[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub sigma_r: f64,
    pub sigma_g: f64,
    /// Coil ellipse semi-axes (major along the detector x axis), m.
    pub semi_axes: [f64; 2],
    /// Standard deviation of additive reading noise.
    pub noise_sigma: f64,
    /// Spacing of readings along each motion, m.
    pub sample_step: f64,
    /// Footprint rays stop after this distance, m.
    pub max_range: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            sigma_r: 0.1,
            sigma_g: 0.1,
            semi_axes: [0.125, 0.09],
            noise_sigma: 0.0,
            sample_step: 0.1,
            max_range: 1.0,
        }
    }
}

/// Noise-free reading. `g` is the coil height above the surface beyond the
/// standoff `d` plus the target depth, so deeper targets read weaker.
pub fn detector_sample(
    truth: &Heightfield,
    targets: &[Target],
    pose: &DetectorPose,
    spec: &DetectorSpec,
    standoff: f64,
) -> f64 {
    let p = pose.position;
    let gap = p.z - truth.height(p.x, p.y);
    let excess = (gap - standoff).max(0.0);
    let n = truth.normal(p.x, p.y);
    let cos_a = alignment_error(&n, &pose.attitude()).cos().max(0.0);
    let sum: f64 = targets
        .iter()
        .map(|t| {
            let r = (t.xy() - p.xy()).norm();
            let g = excess + t.depth.max(0.0);
            t.strength
                * (-r * r / (2.0 * spec.sigma_r.powi(2))).exp()
                * (-g * g / (2.0 * spec.sigma_g.powi(2))).exp()
                * cos_a
        })
        .sum();
    sum.clamp(0.0, 1.0)
}
