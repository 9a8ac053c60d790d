//! Ground-truth world and vehicle simulation.

mod detector;
mod lidar;
mod scenario;
mod survey;
mod terrain;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::angles::{abs_diff, rad};
use crate::gridmap::DetectorPose;

pub use detector::{detector_sample, DetectorSpec, Target};
pub use lidar::{cast_ray, lidar_scan, SensorSpec};
pub use scenario::{CoverageSpec, MapSpec, ScenarioConfig, SurveySpec, World};
pub use survey::{
    run_survey, Detection, Method, SurveyLog, SurveyOutcome, TickRecord, SURVEY_CSV_HEADER,
};
pub use terrain::{generate_terrain, FractalSpec, Heightfield, Obstacle, TerrainFn, TerrainSpec};

/// Commanded or realized platform pose (detector center, yaw, pitch).
pub type Pose = DetectorPose;

/// 5-DOF platform state; roll is fixed at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub elapsed: f64,
}

impl VehicleState {
    pub fn new(position: Vector3<f64>, yaw: f64) -> Self {
        VehicleState {
            position,
            yaw,
            pitch: 0.0,
            elapsed: 0.0,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.yaw, self.pitch)
    }
}

/// Motion limits. Rates in files are degrees per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub v_max: f64,
    pub omega_max_deg: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            v_max: 1.0,
            omega_max_deg: 60.0,
        }
    }
}

impl Limits {
    pub fn omega_max(&self) -> f64 {
        rad(self.omega_max_deg)
    }
}

/// Kinematic step to the commanded pose. The duration is bound by whichever
/// of translation and yaw rotation takes longer; pitch follows instantly.
pub fn step_vehicle(state: &VehicleState, command: &Pose, limits: &Limits) -> (VehicleState, f64) {
    let dt = ((command.position - state.position).norm() / limits.v_max)
        .max(abs_diff(state.yaw, command.yaw) / limits.omega_max());
    let next = VehicleState {
        position: command.position,
        yaw: command.yaw,
        pitch: command.pitch,
        elapsed: state.elapsed + dt,
    };
    (next, dt)
}
