//! Synthetic ground truth: parameterized terrain plus obstacles on a raster.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angles::rad;
use crate::coverage::Rect;
use crate::error::{invalid, Result};
use crate::exec::Exec;
use crate::gridmap::ElevationMap;
use crate::seed;

/// Terrain description. Angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainSpec {
    Flat,
    Ramp {
        angle_deg: f64,
        #[serde(default)]
        heading_deg: f64,
    },
    /// Sinusoidal waves travelling along `heading_deg`.
    Rolling {
        amplitude: f64,
        wavelength: f64,
        #[serde(default)]
        heading_deg: f64,
    },
    /// Multi-octave value noise with optional bowl-shaped craters.
    Fractal(FractalSpec),
    /// Sum of the parts.
    Composite {
        parts: Vec<TerrainSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FractalSpec {
    /// Amplitude of the first octave, m.
    pub roughness: f64,
    pub base_wavelength: f64,
    pub octaves: usize,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    pub craters: usize,
    pub crater_radius: [f64; 2],
    /// Bowl depth of the largest crater, m.
    pub crater_depth: f64,
}

impl Default for FractalSpec {
    fn default() -> Self {
        FractalSpec {
            roughness: 0.2,
            base_wavelength: 3.0,
            octaves: 3,
            persistence: 0.45,
            craters: 0,
            crater_radius: [0.8, 1.6],
            crater_depth: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    /// Vertical cylinder rising `height` above the ground at its center.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        height: f64,
    },
    /// Rectangular block, `size` is the full extent, rotated by `yaw_deg`.
    Box {
        center: [f64; 2],
        size: [f64; 2],
        #[serde(default)]
        yaw_deg: f64,
        height: f64,
    },
}

impl Obstacle {
    fn contains(&self, p: &Vector2<f64>) -> bool {
        match self {
            Obstacle::Cylinder { center, radius, .. } => {
                (p - Vector2::new(center[0], center[1])).norm() <= *radius
            }
            Obstacle::Box {
                center,
                size,
                yaw_deg,
                ..
            } => {
                let d = p - Vector2::new(center[0], center[1]);
                let (s, c) = rad(*yaw_deg).sin_cos();
                let local = Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y);
                local.x.abs() <= size[0] / 2.0 && local.y.abs() <= size[1] / 2.0
            }
        }
    }

    fn center(&self) -> Vector2<f64> {
        match self {
            Obstacle::Cylinder { center, .. } | Obstacle::Box { center, .. } => {
                Vector2::new(center[0], center[1])
            }
        }
    }

    fn height(&self) -> f64 {
        match self {
            Obstacle::Cylinder { height, .. } | Obstacle::Box { height, .. } => *height,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Obstacle::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
            Obstacle::Box { size, height, .. } => size[0] > 0.0 && size[1] > 0.0 && *height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("obstacle {self:?} needs positive dimensions"))
        }
    }
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TerrainSpec::Flat => Ok(()),
            TerrainSpec::Ramp { angle_deg, .. } => {
                if angle_deg.abs() < 90.0 {
                    Ok(())
                } else {
                    invalid("ramp angle must be within (-90, 90) degrees")
                }
            }
            TerrainSpec::Rolling {
                amplitude,
                wavelength,
                ..
            } => {
                if *amplitude >= 0.0 && *wavelength > 0.0 {
                    Ok(())
                } else {
                    invalid("rolling terrain needs amplitude >= 0 and wavelength > 0")
                }
            }
            TerrainSpec::Fractal(f) => {
                let radii = f.crater_radius[0] > 0.0 && f.crater_radius[1] >= f.crater_radius[0];
                if f.roughness >= 0.0
                    && f.base_wavelength > 0.0
                    && f.persistence >= 0.0
                    && radii
                    && f.crater_depth >= 0.0
                {
                    Ok(())
                } else {
                    invalid(format!("invalid fractal spec {f:?}"))
                }
            }
            TerrainSpec::Composite { parts } => parts.iter().try_for_each(TerrainSpec::validate),
        }
    }
}

/// Ground truth sampled on a regular node raster with bilinear interpolation.
/// Queries outside the raster clamp to the border.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightfield {
    origin: Vector2<f64>,
    resolution: f64,
    nx: usize,
    ny: usize,
    z: Vec<f64>,
}

impl Heightfield {
    pub fn from_fn(
        bounds: &Rect,
        resolution: f64,
        exec: Exec,
        f: impl Fn(f64, f64) -> f64 + Sync + Send,
    ) -> Result<Self> {
        bounds.validate()?;
        if !(resolution > 0.0) {
            return invalid("heightfield resolution must be positive");
        }
        let size = bounds.size();
        let nx = ((size.x / resolution - 1e-9).ceil() as usize + 1).max(2);
        let ny = ((size.y / resolution - 1e-9).ceil() as usize + 1).max(2);
        let origin = bounds.min();
        let rows = exec.map_range(ny, |j| {
            (0..nx)
                .map(|i| {
                    f(
                        origin.x + i as f64 * resolution,
                        origin.y + j as f64 * resolution,
                    )
                })
                .collect::<Vec<_>>()
        });
        Ok(Heightfield {
            origin,
            resolution,
            nx,
            ny,
            z: rows.into_iter().flatten().collect(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn bounds(&self) -> Rect {
        let max = self.origin
            + Vector2::new((self.nx - 1) as f64, (self.ny - 1) as f64) * self.resolution;
        Rect::new(self.origin, max)
    }

    pub fn node_count(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.z[j * self.nx + i]
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        let u = ((x - self.origin.x) / self.resolution).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.origin.y) / self.resolution).clamp(0.0, (self.ny - 1) as f64);
        // Top and right borders interpolate within the last cell.
        let i = (u as usize).min(self.nx - 2);
        let j = (v as usize).min(self.ny - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        let k = j * self.nx + i;
        let (z00, z10) = (self.z[k], self.z[k + 1]);
        let (z01, z11) = (self.z[k + self.nx], self.z[k + self.nx + 1]);
        let bottom = z00 + (z10 - z00) * fu;
        let top = z01 + (z11 - z01) * fu;
        bottom + (top - bottom) * fv
    }

    /// Unit normal from central differences over one raster step.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        let h = self.resolution;
        let dx = (self.height(x + h, y) - self.height(x - h, y)) / (2.0 * h);
        let dy = (self.height(x, y + h) - self.height(x, y - h)) / (2.0 * h);
        Vector3::new(-dx, -dy, 1.0).normalize()
    }

    /// Fully observed elevation map sampling the truth at cell centers.
    pub fn to_map(
        &self,
        origin: Vector2<f64>,
        size: Vector2<f64>,
        resolution: f64,
    ) -> Result<ElevationMap> {
        let mut m = ElevationMap::new(origin, size, resolution)?;
        let cells: Vec<_> = m.cells().collect();
        for c in cells {
            let p = m.cell_center(c);
            m.set_elevation(c, Some(self.height(p.x, p.y)))?;
        }
        Ok(m)
    }

    /// Height field values as CSV `x,y,z` over the raster nodes.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "x,y,z")?;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let x = self.origin.x + i as f64 * self.resolution;
                let y = self.origin.y + j as f64 * self.resolution;
                writeln!(out, "{:.6},{:.6},{:.6}", x, y, self.node(i, j))?;
            }
        }
        Ok(())
    }
}

/// Deterministic terrain function for `spec` over `bounds`.
pub struct TerrainFn {
    kind: Kind,
}

enum Kind {
    Flat,
    Plane(Vector2<f64>),
    Rolling {
        amplitude: f64,
        k: Vector2<f64>,
    },
    Fractal {
        octaves: Vec<ValueNoise>,
        craters: Vec<Crater>,
    },
    Sum(Vec<TerrainFn>),
}

struct ValueNoise {
    origin: Vector2<f64>,
    spacing: f64,
    amplitude: f64,
    nx: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn eval(&self, x: f64, y: f64) -> f64 {
        let u = ((x - self.origin.x) / self.spacing).max(0.0);
        let v = ((y - self.origin.y) / self.spacing).max(0.0);
        let ny = self.values.len() / self.nx;
        let (i, j) = (
            (u.floor() as usize).min(self.nx - 2),
            (v.floor() as usize).min(ny - 2),
        );
        let s = |t: f64| {
            let t = t.clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        let (fu, fv) = (s(u - i as f64), s(v - j as f64));
        let at = |a: usize, b: usize| self.values[b * self.nx + a];
        let bottom = at(i, j) * (1.0 - fu) + at(i + 1, j) * fu;
        let top = at(i, j + 1) * (1.0 - fu) + at(i + 1, j + 1) * fu;
        self.amplitude * (bottom * (1.0 - fv) + top * fv)
    }
}

struct Crater {
    center: Vector2<f64>,
    radius: f64,
    depth: f64,
}

impl Crater {
    // Parabolic bowl with a smooth raised rim.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let r = (Vector2::new(x, y) - self.center).norm() / self.radius;
        let bowl = if r < 1.0 {
            -self.depth * (1.0 - r * r)
        } else {
            0.0
        };
        let rim = 0.25 * self.depth * (-((r - 1.0) / 0.3).powi(2)).exp();
        bowl + rim
    }
}

impl TerrainFn {
    pub fn new(spec: &TerrainSpec, bounds: &Rect, seed_value: u64) -> Result<Self> {
        spec.validate()?;
        bounds.validate()?;
        let kind = match spec {
            TerrainSpec::Flat => Kind::Flat,
            TerrainSpec::Ramp {
                angle_deg,
                heading_deg,
            } => {
                let (s, c) = rad(*heading_deg).sin_cos();
                Kind::Plane(Vector2::new(c, s) * rad(*angle_deg).tan())
            }
            TerrainSpec::Rolling {
                amplitude,
                wavelength,
                heading_deg,
            } => {
                let (s, c) = rad(*heading_deg).sin_cos();
                Kind::Rolling {
                    amplitude: *amplitude,
                    k: Vector2::new(c, s) * (TAU / wavelength),
                }
            }
            TerrainSpec::Fractal(f) => {
                let mut rng = seed::rng(seed_value, "fractal");
                let size = bounds.size();
                let octaves = (0..f.octaves)
                    .map(|o| {
                        let spacing = f.base_wavelength / 2f64.powi(o as i32);
                        let nx = (size.x / spacing).ceil() as usize + 2;
                        let ny = (size.y / spacing).ceil() as usize + 2;
                        let values = (0..nx * ny).map(|_| rng.random_range(-1.0..=1.0)).collect();
                        ValueNoise {
                            origin: bounds.min(),
                            spacing,
                            amplitude: f.roughness * f.persistence.powi(o as i32),
                            nx,
                            values,
                        }
                    })
                    .collect();
                let craters = (0..f.craters)
                    .map(|_| {
                        let center = Vector2::new(
                            rng.random_range(bounds.min[0]..=bounds.max[0]),
                            rng.random_range(bounds.min[1]..=bounds.max[1]),
                        );
                        let radius = rng.random_range(f.crater_radius[0]..=f.crater_radius[1]);
                        Crater {
                            center,
                            radius,
                            depth: f.crater_depth * radius / f.crater_radius[1],
                        }
                    })
                    .collect();
                Kind::Fractal { octaves, craters }
            }
            TerrainSpec::Composite { parts } => Kind::Sum(
                parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        TerrainFn::new(p, bounds, seed::derive(seed_value, &format!("part{i}")))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(TerrainFn { kind })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match &self.kind {
            Kind::Flat => 0.0,
            Kind::Plane(g) => g.x * x + g.y * y,
            Kind::Rolling { amplitude, k } => amplitude * (k.x * x + k.y * y).sin(),
            Kind::Fractal { octaves, craters } => {
                octaves.iter().map(|o| o.eval(x, y)).sum::<f64>()
                    + craters.iter().map(|c| c.eval(x, y)).sum::<f64>()
            }
            Kind::Sum(parts) => parts.iter().map(|p| p.eval(x, y)).sum(),
        }
    }
}

/// Ground-truth raster of `spec` over `bounds`, with obstacles raised above
/// the terrain height at their centers.
pub fn generate_terrain(
    spec: &TerrainSpec,
    obstacles: &[Obstacle],
    bounds: &Rect,
    resolution: f64,
    seed_value: u64,
    exec: Exec,
) -> Result<Heightfield> {
    obstacles.iter().try_for_each(Obstacle::validate)?;
    let terrain = TerrainFn::new(spec, bounds, seed::derive(seed_value, "terrain"))?;
    let tops: Vec<f64> = obstacles
        .iter()
        .map(|o| {
            let c = o.center();
            terrain.eval(c.x, c.y) + o.height()
        })
        .collect();
    Heightfield::from_fn(bounds, resolution, exec, |x, y| {
        let p = Vector2::new(x, y);
        let ground = terrain.eval(x, y);
        obstacles
            .iter()
            .zip(&tops)
            .filter(|(o, _)| o.contains(&p))
            .fold(ground, |z, (_, top)| z.max(*top))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Rect {
        Rect::new(Vector2::new(-1.0, -1.0), Vector2::new(5.0, 3.0))
    }

    fn field(spec: &TerrainSpec, obstacles: &[Obstacle], seed: u64) -> Heightfield {
        generate_terrain(spec, obstacles, &bounds(), 0.05, seed, Exec::Sequential).unwrap()
    }

    #[test]
    fn flat_is_zero() {
        let h = field(&TerrainSpec::Flat, &[], 1);
        assert!(h.z.iter().all(|z| *z == 0.0));
        assert_eq!(h.height(2.0, 1.0), 0.0);
    }

    #[test]
    fn ramp_matches_formula() {
        let h = field(
            &TerrainSpec::Ramp {
                angle_deg: 20.0,
                heading_deg: 0.0,
            },
            &[],
            1,
        );
        for &(x, y) in &[(0.0, 0.0), (1.234, 2.1), (4.5, -0.7)] {
            assert!((h.height(x, y) - x * rad(20.0).tan()).abs() < 1e-12);
        }
        let n = h.normal(2.0, 1.0);
        assert!((n - Vector3::new(-rad(20.0).sin(), 0.0, rad(20.0).cos())).norm() < 1e-9);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = TerrainSpec::Composite {
            parts: vec![
                TerrainSpec::Rolling {
                    amplitude: 0.3,
                    wavelength: 3.0,
                    heading_deg: 60.0,
                },
                TerrainSpec::Fractal(FractalSpec {
                    craters: 3,
                    ..FractalSpec::default()
                }),
            ],
        };
        let a = field(&spec, &[], 42);
        let b = generate_terrain(&spec, &[], &bounds(), 0.05, 42, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let c = field(&spec, &[], 43);
        assert_ne!(a, c);
    }

    #[test]
    fn obstacles_raise_terrain() {
        let pole = Obstacle::Cylinder {
            center: [2.0, 1.0],
            radius: 0.1,
            height: 1.5,
        };
        let wall = Obstacle::Box {
            center: [0.0, 0.0],
            size: [0.2, 1.0],
            yaw_deg: 90.0,
            height: 0.5,
        };
        let h = field(&TerrainSpec::Flat, &[pole, wall], 1);
        assert_eq!(h.height(2.0, 1.0), 1.5);
        assert_eq!(h.height(2.5, 1.0), 0.0);
        // Rotated 90 degrees: long side along x.
        assert_eq!(h.height(0.4, 0.0), 0.5);
        assert_eq!(h.height(0.0, 0.4), 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let b = bounds();
        assert!(TerrainFn::new(
            &TerrainSpec::Ramp {
                angle_deg: 95.0,
                heading_deg: 0.0
            },
            &b,
            0
        )
        .is_err());
        assert!(TerrainFn::new(
            &TerrainSpec::Rolling {
                amplitude: 1.0,
                wavelength: 0.0,
                heading_deg: 0.0
            },
            &b,
            0
        )
        .is_err());
        let bad = Obstacle::Cylinder {
            center: [0.0, 0.0],
            radius: -1.0,
            height: 1.0,
        };
        assert!(
            generate_terrain(&TerrainSpec::Flat, &[bad], &b, 0.05, 0, Exec::Sequential).is_err()
        );
        let parsed: std::result::Result<TerrainSpec, _> =
            serde_json::from_str(r#"{"kind": "volcano"}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec: TerrainSpec = serde_json::from_str(
            r#"{"kind": "composite", "parts": [{"kind": "rolling", "amplitude": 0.4, "wavelength": 4.0},
                {"kind": "fractal", "roughness": 0.1, "craters": 2}]}"#,
        )
        .unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TerrainSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn bilinear_is_exact_on_nodes_and_clamps_outside() {
        let spec = TerrainSpec::Fractal(FractalSpec::default());
        let h = field(&spec, &[], 5);
        let b = h.bounds();
        assert_eq!(h.height(b.min[0], b.min[1]), h.node(0, 0));
        assert_eq!(h.height(b.min[0] - 3.0, b.min[1] - 3.0), h.node(0, 0));
        let (nx, ny) = h.node_count();
        assert_eq!(
            h.height(b.max[0] + 1.0, b.max[1] + 1.0),
            h.node(nx - 1, ny - 1)
        );
    }
}
