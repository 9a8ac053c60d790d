//! Boustrophedon reference path over an axis-aligned rectangle.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::Range;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Rect {
            min: [min.x, min.y],
            max: [max.x, max.y],
        }
    }

    pub fn min(&self) -> Vector2<f64> {
        Vector2::new(self.min[0], self.min[1])
    }

    pub fn max(&self) -> Vector2<f64> {
        Vector2::new(self.max[0], self.max[1])
    }

    pub fn size(&self) -> Vector2<f64> {
        self.max() - self.min()
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.size();
        if !(s.x > 0.0 && s.y > 0.0) || !s.iter().all(|v| v.is_finite()) {
            return invalid(format!("degenerate area {:?}..{:?}", self.min, self.max));
        }
        Ok(())
    }
}

/// Which rectangle axis the lanes run along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneAxis {
    /// The longer side (fewest turns).
    #[default]
    Long,
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSample {
    pub position: Vector2<f64>,
    pub lane: usize,
    pub lane_dir: Vector2<f64>,
    pub next_lane_dir: Option<Vector2<f64>>,
}

impl PathSample {
    pub fn lane_yaw(&self) -> f64 {
        crate::angles::heading(&self.lane_dir)
    }
}

#[derive(Clone, Debug)]
pub struct CoveragePath {
    samples: Vec<PathSample>,
    lanes: Vec<Range<usize>>,
}

impl CoveragePath {
    /// Builds a path from explicit lane polylines (each with ≥ 2 points).
    pub fn from_lanes(lanes: Vec<Vec<Vector2<f64>>>) -> Result<Self> {
        if lanes.is_empty() {
            return invalid("path needs at least one lane");
        }
        let mut samples = Vec::new();
        let mut ranges = Vec::with_capacity(lanes.len());
        for (id, lane) in lanes.iter().enumerate() {
            if lane.len() < 2 {
                return invalid(format!("lane {id} needs at least two samples"));
            }
            let span = lane[lane.len() - 1] - lane[0];
            if span.norm() < 1e-12 {
                return invalid(format!("lane {id} has zero length"));
            }
            let dir = span.normalize();
            let start = samples.len();
            for p in lane {
                samples.push(PathSample {
                    position: *p,
                    lane: id,
                    lane_dir: dir,
                    next_lane_dir: None,
                });
            }
            ranges.push(start..samples.len());
        }
        for id in 0..ranges.len().saturating_sub(1) {
            let next = &lanes[id + 1];
            let (a, b) = (next[0], next[next.len() - 1]);
            for i in ranges[id].clone() {
                let p = samples[i].position;
                let target = closest_on_segment(&p, &a, &b);
                let d = target - p;
                samples[i].next_lane_dir = (d.norm() > 1e-12).then(|| d.normalize());
            }
        }
        Ok(CoveragePath {
            samples,
            lanes: ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> Result<&PathSample> {
        self.samples.get(index).ok_or_else(|| {
            crate::Error::InvalidArgument(format!("sample index {index} out of range"))
        })
    }

    pub fn lanes(&self) -> &[Range<usize>] {
        &self.lanes
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    /// Total polyline length through all samples in order, lane changes included.
    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "index,lane,x,y,dir_x,dir_y")?;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                i, s.lane, s.position.x, s.position.y, s.lane_dir.x, s.lane_dir.y
            )?;
        }
        Ok(())
    }
}

fn closest_on_segment(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Vector2<f64> {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

/// Horizontal unit vector toward the closest point on the next lane; `None` on
/// the final lane.
pub fn next_lane_direction(path: &CoveragePath, index: usize) -> Result<Option<Vector2<f64>>> {
    Ok(path.sample(index)?.next_lane_dir)
}

pub fn boustrophedon(area: &Rect, lane_spacing: f64, sample_spacing: f64) -> Result<CoveragePath> {
    boustrophedon_with(area, lane_spacing, sample_spacing, LaneAxis::Long)
}

/// Lanes every `lane_spacing` across the short axis (count
/// `floor(short / lane_spacing) + 1`), alternating direction, sampled every
/// `sample_spacing` with a shorter final step when the length does not divide.
pub fn boustrophedon_with(
    area: &Rect,
    lane_spacing: f64,
    sample_spacing: f64,
    axis: LaneAxis,
) -> Result<CoveragePath> {
    area.validate()?;
    if !(lane_spacing > 0.0 && sample_spacing > 0.0) {
        return invalid("lane and sample spacing must be positive");
    }
    let size = area.size();
    let along_x = match axis {
        LaneAxis::Long => size.x >= size.y,
        LaneAxis::X => true,
        LaneAxis::Y => false,
    };
    let (length, width) = if along_x {
        (size.x, size.y)
    } else {
        (size.y, size.x)
    };
    let lane_count = (width / lane_spacing + 1e-9).floor() as usize + 1;
    let steps = length / sample_spacing;
    let full = (steps + 1e-9).floor() as usize;

    let to_world = |u: f64, v: f64| -> Vector2<f64> {
        if along_x {
            area.min() + Vector2::new(u, v)
        } else {
            area.min() + Vector2::new(v, u)
        }
    };
    let lanes = (0..lane_count)
        .map(|j| {
            let v = j as f64 * lane_spacing;
            let mut us: Vec<f64> = (0..=full).map(|k| k as f64 * sample_spacing).collect();
            if length - us[us.len() - 1] > 1e-9 {
                us.push(length);
            } else {
                let last = us.len() - 1;
                us[last] = length;
            }
            if j % 2 == 1 {
                us.reverse();
            }
            us.into_iter().map(|u| to_world(u, v)).collect()
        })
        .collect();
    CoveragePath::from_lanes(lanes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: f64, h: f64) -> Rect {
        Rect::new(Vector2::zeros(), Vector2::new(w, h))
    }

    #[test]
    fn lane_counts() {
        let p = boustrophedon(&rect(1.0, 0.4), 0.2, 0.3).unwrap();
        assert_eq!(p.lane_count(), 3);
        let p = boustrophedon(&rect(25.0, 10.0), 0.2, 0.3).unwrap();
        assert_eq!(p.lane_count(), 51);
        // 83 full steps plus a shorter final one.
        assert_eq!(p.lanes()[0].len(), 85);
    }

    #[test]
    fn alternating_lanes_with_exact_spacing() {
        let p = boustrophedon(&rect(1.0, 0.4), 0.2, 0.3).unwrap();
        let s = p.samples();
        let lane0 = &s[p.lanes()[0].clone()];
        let lane1 = &s[p.lanes()[1].clone()];
        assert_eq!(lane0[0].lane_dir, Vector2::new(1.0, 0.0));
        assert_eq!(lane1[0].lane_dir, Vector2::new(-1.0, 0.0));
        for w in lane0.windows(2).take(lane0.len() - 2) {
            assert!(((w[1].position - w[0].position).norm() - 0.3).abs() < 1e-12);
        }
        let last = (lane0[lane0.len() - 1].position - lane0[lane0.len() - 2].position).norm();
        assert!((last - 0.1).abs() < 1e-12, "short final step {last}");
        assert!((lane1[0].position.y - 0.2).abs() < 1e-12);
    }

    #[test]
    fn lanes_follow_long_axis_unless_overridden() {
        let p = boustrophedon(&rect(0.4, 1.0), 0.2, 0.3).unwrap();
        assert_eq!(p.samples()[0].lane_dir, Vector2::new(0.0, 1.0));
        let p = boustrophedon_with(&rect(0.4, 1.0), 0.2, 0.3, LaneAxis::X).unwrap();
        assert_eq!(p.samples()[0].lane_dir, Vector2::new(1.0, 0.0));
        assert_eq!(p.lane_count(), 6);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(boustrophedon(&rect(0.0, 1.0), 0.2, 0.3).is_err());
        assert!(boustrophedon(&rect(1.0, 1.0), 0.0, 0.3).is_err());
        assert!(boustrophedon(&rect(1.0, 1.0), 0.2, -0.3).is_err());
    }

    #[test]
    fn next_lane_direction_examples() {
        let p = boustrophedon(&rect(3.0, 0.4), 0.2, 0.3).unwrap();
        assert_eq!(
            next_lane_direction(&p, 3).unwrap(),
            Some(Vector2::new(0.0, 1.0))
        );
        let last = p.len() - 1;
        assert_eq!(next_lane_direction(&p, last).unwrap(), None);
        assert!(next_lane_direction(&p, last + 1).is_err());
    }

    #[test]
    fn next_lane_direction_blends_near_lane_end() {
        // Next lane is shorter and offset, so late samples point diagonally at
        // its entry point.
        let lanes = vec![
            vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0),
                Vector2::new(2.0, 0.0),
            ],
            vec![Vector2::new(1.0, 0.5), Vector2::new(0.5, 0.5)],
        ];
        let p = CoveragePath::from_lanes(lanes).unwrap();
        // Oracle: closest point on segment (1,0.5)-(0.5,0.5) from (2,0) is (1,0.5).
        let d = next_lane_direction(&p, 2).unwrap().unwrap();
        let expected = Vector2::new(-1.0, 0.5).normalize();
        assert!((d - expected).norm() < 1e-12);
        let d = next_lane_direction(&p, 0).unwrap().unwrap();
        assert!((d - Vector2::new(0.5, 0.5).normalize()).norm() < 1e-12);
    }

    #[test]
    fn sample_disks_cover_area() {
        let area = rect(2.0, 1.0);
        let p = boustrophedon(&area, 0.2, 0.3).unwrap();
        // Grid check at half a map cell.
        let r = 0.2 / 2.0;
        let mut y = 0.0;
        while y <= 1.0 {
            let mut x = 0.0;
            while x <= 2.0 {
                let q = Vector2::new(x, y);
                // Samples are points; coverage is along the lane polyline.
                let covered = p.lanes().iter().any(|lane| {
                    p.samples()[lane.clone()].windows(2).any(|w| {
                        (closest_on_segment(&q, &w[0].position, &w[1].position) - q).norm()
                            <= r + 1e-9
                    })
                });
                assert!(covered, "{q:?} not covered");
                x += 0.075;
            }
            y += 0.075;
        }
    }

    #[test]
    fn mirrored_area_has_identical_length() {
        let a = boustrophedon(&rect(3.7, 1.3), 0.2, 0.3).unwrap();
        let b = boustrophedon(
            &Rect::new(Vector2::new(-3.7, 0.0), Vector2::new(0.0, 1.3)),
            0.2,
            0.3,
        )
        .unwrap();
        assert!((a.length() - b.length()).abs() < 1e-9);
        let segs: f64 = a
            .samples()
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum();
        assert_eq!(a.length(), segs);
    }

    #[test]
    fn csv_export() {
        let p = boustrophedon(&rect(0.3, 0.2), 0.2, 0.3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "index,lane,x,y,dir_x,dir_y");
        assert_eq!(lines[1], "0,0,0.000000,0.000000,1.000000,0.000000");
        assert_eq!(lines.len(), 5);
    }
}
