use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::detector::{DetectorSpec, Target};
use super::lidar::SensorSpec;
use super::terrain::{generate_terrain, Heightfield, Obstacle, TerrainSpec};
use super::Limits;
use crate::coverage::{boustrophedon_with, CoveragePath, LaneAxis, Rect};
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::gridmap::{ElevationMap, FusionRule};
use crate::planner::PlannerParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSpec {
    pub resolution: f64,
    /// Raster spacing of the ground truth, m.
    pub truth_resolution: f64,
    /// Extent mapped beyond the survey area on every side, m.
    pub margin: f64,
    pub fusion: FusionRule,
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec {
            resolution: 0.15,
            truth_resolution: 0.05,
            margin: 1.5,
            fusion: FusionRule::Max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSpec {
    pub lane_spacing: f64,
    pub axis: LaneAxis,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        CoverageSpec {
            lane_spacing: 0.2,
            axis: LaneAxis::Long,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveySpec {
    /// Time spent stalled on one sample before it is skipped, s.
    pub stall_timeout: f64,
    /// Minimum duration of one hover-and-rescan tick, s.
    pub hover_time: f64,
    /// Safety cap on ticks, as a multiple of the path sample count.
    pub max_ticks_per_sample: usize,
}

impl Default for SurveySpec {
    fn default() -> Self {
        SurveySpec {
            stall_timeout: 5.0,
            hover_time: 0.5,
            max_ticks_per_sample: 20,
        }
    }
}

/// Everything needed to run a survey. Units are SI, angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub area: Rect,
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub sensor: SensorSpec,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub map: MapSpec,
    #[serde(default)]
    pub coverage: CoverageSpec,
    #[serde(default)]
    pub survey: SurveySpec,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: ScenarioConfig = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.area.validate()?;
        self.terrain.validate()?;
        self.planner.validate()?;
        for t in &self.targets {
            if !self.area.contains(&t.xy()) {
                return invalid(format!(
                    "target at {:?} outside the survey area",
                    t.position
                ));
            }
        }
        if !(self.limits.v_max > 0.0 && self.limits.omega_max_deg > 0.0) {
            return invalid("speed limits must be positive");
        }
        if !(self.map.resolution > 0.0 && self.map.truth_resolution > 0.0 && self.map.margin >= 0.0)
        {
            return invalid("map resolutions must be positive and margin non-negative");
        }
        if !(self.coverage.lane_spacing > 0.0 && self.detector.sample_step > 0.0) {
            return invalid("lane spacing and detector sample step must be positive");
        }
        if !(self.survey.stall_timeout >= 0.0 && self.survey.hover_time > 0.0) {
            return invalid("stall timeout must be non-negative and hover time positive");
        }
        Ok(())
    }

    pub fn map_bounds(&self) -> Rect {
        let m = Vector2::repeat(self.map.margin);
        Rect::new(self.area.min() - m, self.area.max() + m)
    }
}

/// Immutable world shared by all survey runs of a scenario.
#[derive(Clone, Debug)]
pub struct World {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub truth: Heightfield,
    pub path: CoveragePath,
}

impl World {
    pub fn build(scenario: &ScenarioConfig, seed: u64, exec: Exec) -> Result<Self> {
        scenario.validate()?;
        let mb = scenario.map_bounds();
        let pad = Vector2::repeat(scenario.map.resolution);
        let bounds = Rect::new(mb.min() - pad, mb.max() + pad);
        let truth = generate_terrain(
            &scenario.terrain,
            &scenario.obstacles,
            &bounds,
            scenario.map.truth_resolution,
            seed,
            exec,
        )?;
        let path = boustrophedon_with(
            &scenario.area,
            scenario.coverage.lane_spacing,
            scenario.planner.sample_spacing,
            scenario.coverage.axis,
        )?;
        Ok(World {
            scenario: scenario.clone(),
            seed,
            truth,
            path,
        })
    }

    pub fn empty_map(&self) -> Result<ElevationMap> {
        let b = self.scenario.map_bounds();
        Ok(
            ElevationMap::new(b.min(), b.size(), self.scenario.map.resolution)?
                .with_fusion(self.scenario.map.fusion),
        )
    }

    /// Truth sampled on the map grid (every cell observed).
    pub fn truth_map(&self) -> Result<ElevationMap> {
        let b = self.scenario.map_bounds();
        self.truth
            .to_map(b.min(), b.size(), self.scenario.map.resolution)
    }
}
