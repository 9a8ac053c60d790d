//! Detector/surface alignment geometry.
//!
//! Attitudes are yaw about world z followed by pitch about the body y axis,
//! with roll structurally absent. The detector z axis under that rotation is
//! `(cos(yaw) sin(pitch), sin(yaw) sin(pitch), cos(pitch))`.

use nalgebra::{Rotation3, Vector3};
use std::f64::consts::FRAC_PI_2;

use crate::error::{invalid, Result};

/// Unit surface normal with a positive vertical component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceNormal(Vector3<f64>);

impl SurfaceNormal {
    /// Normalizes `v`; rejects zero-length and downward/overhanging normals.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return invalid("surface normal must be non-zero and finite");
        }
        let n = v / norm;
        if n.z <= 0.0 {
            return invalid(format!("surface normal must point up (n_z = {})", n.z));
        }
        Ok(SurfaceNormal(n))
    }

    pub fn up() -> Self {
        SurfaceNormal(Vector3::z())
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Slope of the surface relative to horizontal, in radians.
    pub fn slope(&self) -> f64 {
        self.0.z.clamp(-1.0, 1.0).acos()
    }

    pub fn optimal_pitch(&self, yaw: f64) -> f64 {
        pitch_for(&self.0, yaw)
    }

    pub fn residual_alignment(&self, yaw: f64) -> f64 {
        let pitch = self.optimal_pitch(yaw);
        alignment_error(&self.0, &AttitudeYP { yaw, pitch })
    }
}

impl From<SurfaceNormal> for Vector3<f64> {
    fn from(n: SurfaceNormal) -> Self {
        n.0
    }
}

/// Yaw/pitch attitude; roll is fixed at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttitudeYP {
    pub yaw: f64,
    pub pitch: f64,
}

impl AttitudeYP {
    pub fn new(yaw: f64, pitch: f64) -> Result<Self> {
        if !yaw.is_finite() || !pitch.is_finite() {
            return invalid("attitude angles must be finite");
        }
        if pitch <= -FRAC_PI_2 || pitch >= FRAC_PI_2 {
            return invalid(format!("pitch {pitch} outside (-pi/2, pi/2)"));
        }
        Ok(AttitudeYP { yaw, pitch })
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch)
    }
}

/// z column of the yaw-then-pitch rotation.
pub fn detector_z_axis(att: &AttitudeYP) -> Vector3<f64> {
    let (sy, cy) = att.yaw.sin_cos();
    let (sp, cp) = att.pitch.sin_cos();
    Vector3::new(cy * sp, sy * sp, cp)
}

/// Angle between the surface normal and the detector z axis, in [0, pi].
pub fn alignment_error(n: &Vector3<f64>, att: &AttitudeYP) -> f64 {
    n.dot(&detector_z_axis(att)).clamp(-1.0, 1.0).acos()
}

fn pitch_for(n: &Vector3<f64>, yaw: f64) -> f64 {
    let a = n.x * yaw.cos() + n.y * yaw.sin();
    (a / n.z).atan()
}

/// Pitch minimizing the alignment error for the given yaw.
///
/// Maximizes `f(pitch) = sin(pitch) a + cos(pitch) n_z` with
/// `a = n_x cos(yaw) + n_y sin(yaw)`; the stationary point `atan(a / n_z)` is
/// a maximum whenever `n_z > 0`.
pub fn optimal_pitch(n: &Vector3<f64>, yaw: f64) -> Result<f64> {
    if !(n.z > 0.0) {
        return invalid(format!("optimal pitch requires n_z > 0 (got {})", n.z));
    }
    Ok(pitch_for(n, yaw))
}

/// Alignment error remaining after choosing the optimal pitch for `yaw`.
pub fn residual_alignment(n: &Vector3<f64>, yaw: f64) -> Result<f64> {
    let pitch = optimal_pitch(n, yaw)?;
    Ok(alignment_error(n, &AttitudeYP { yaw, pitch }))
}

/// The two headings whose vertical plane contains the normal (perfect
/// alignment achievable). `None` on level ground, where every heading works.
pub fn aligned_headings(n: &Vector3<f64>) -> Option<(f64, f64)> {
    let horizontal = n.x.hypot(n.y);
    if horizontal < 1e-9 {
        return None;
    }
    let down = n.y.atan2(n.x);
    Some((down, crate::angles::wrap(down + std::f64::consts::PI)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angles::rad;
    use rand::{Rng, SeedableRng};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn z_axis_identity_and_pure_pitch() {
        let z = detector_z_axis(&AttitudeYP::new(0.0, 0.0).unwrap());
        assert!((z - Vector3::z()).norm() < 1e-15);
        let g = rad(23.0);
        let z = detector_z_axis(&AttitudeYP::new(0.0, g).unwrap());
        assert!((z - Vector3::new(g.sin(), 0.0, g.cos())).norm() < 1e-15);
    }

    #[test]
    fn z_axis_matches_explicit_matrix_product() {
        // Independent oracle: hand-written Rz * Ry, third column.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let yaw: f64 = rng.random_range(-3.2..3.2);
            let pitch: f64 = rng.random_range(-1.5..1.5);
            let (sy, cy) = yaw.sin_cos();
            let (sp, cp) = pitch.sin_cos();
            let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
            let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        m[i][j] += rz[i][k] * ry[k][j];
                    }
                }
            }
            let att = AttitudeYP::new(yaw, pitch).unwrap();
            let z = detector_z_axis(&att);
            for i in 0..3 {
                assert!(close(z[i], m[i][2], 1e-14));
            }
            let r = att.rotation();
            assert!((r * Vector3::z() - z).norm() < 1e-14);
        }
    }

    #[test]
    fn alignment_error_examples() {
        let up = Vector3::z();
        assert!(alignment_error(&up, &AttitudeYP::new(1.3, 0.0).unwrap()) < 1e-12);
        let a = alignment_error(&up, &AttitudeYP::new(0.4, rad(10.0)).unwrap());
        assert!(close(a, rad(10.0), 1e-12));
        let g = rad(20.0);
        let n = Vector3::new(g.sin(), 0.0, g.cos());
        let a = alignment_error(&n, &AttitudeYP::new(rad(90.0), 0.0).unwrap());
        assert!(close(a, g, 1e-12));
    }

    #[test]
    fn optimal_pitch_examples() {
        let up = Vector3::z();
        for yaw in [0.0, 1.0, -2.5] {
            assert_eq!(optimal_pitch(&up, yaw).unwrap(), 0.0);
        }
        let g = rad(17.0);
        let n = Vector3::new(g.sin(), 0.0, g.cos());
        assert!(close(optimal_pitch(&n, 0.0).unwrap(), g, 1e-12));
        assert!(close(optimal_pitch(&n, rad(90.0)).unwrap(), 0.0, 1e-12));
    }

    #[test]
    fn optimal_pitch_rejects_overhang() {
        assert!(optimal_pitch(&Vector3::new(1.0, 0.0, 0.0), 0.0).is_err());
        assert!(optimal_pitch(&Vector3::new(0.0, 0.6, -0.8), 0.0).is_err());
        assert!(SurfaceNormal::new(Vector3::new(0.0, 0.0, -1.0)).is_err());
        assert!(SurfaceNormal::new(Vector3::zeros()).is_err());
    }

    #[test]
    fn residual_alignment_examples() {
        assert!(residual_alignment(&Vector3::z(), 2.0).unwrap() < 1e-12);
        let g = rad(20.0);
        let n = Vector3::new(g.sin(), 0.0, g.cos());
        assert!(residual_alignment(&n, 0.0).unwrap() < 1e-7);
        // Cross-slope heading: brute-force minimum over a fine pitch grid.
        let yaw = rad(90.0);
        let brute = (0..=36000)
            .map(|i| rad(-89.99 + i as f64 * 0.005))
            .map(|p| alignment_error(&n, &AttitudeYP { yaw, pitch: p }))
            .fold(f64::INFINITY, f64::min);
        let r = residual_alignment(&n, yaw).unwrap();
        assert!(r <= brute + 1e-12);
        assert!(close(r, g, 1e-9));
    }

    #[test]
    fn aligned_headings_are_perfect() {
        let n = SurfaceNormal::new(Vector3::new(0.2, -0.3, 0.9)).unwrap();
        let (a, b) = aligned_headings(n.vector()).unwrap();
        assert!(n.residual_alignment(a) < 1e-7);
        assert!(n.residual_alignment(b) < 1e-7);
        assert!(aligned_headings(&Vector3::z()).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn normal() -> impl Strategy<Value = Vector3<f64>> {
            (-1.0f64..1.0, -1.0f64..1.0, 0.05f64..1.0)
                .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
        }

        proptest! {
            #[test]
            fn first_and_second_order_conditions(n in normal(), yaw in -3.2f64..3.2) {
                let a = n.x * yaw.cos() + n.y * yaw.sin();
                let t = optimal_pitch(&n, yaw).unwrap();
                prop_assert!((t.cos() * a - t.sin() * n.z).abs() < 1e-9);
                prop_assert!(-t.sin() * a - t.cos() * n.z < 0.0);
            }

            #[test]
            fn zero_residual_iff_normal_in_heading_plane(n in normal(), yaw in -3.2f64..3.2) {
                let a = n.x * yaw.cos() + n.y * yaw.sin();
                let r = residual_alignment(&n, yaw).unwrap();
                let in_plane = (a * a + n.z * n.z - 1.0).abs() < 1e-12;
                if in_plane {
                    prop_assert!(r < 1e-5);
                }
                // Residual equals asin of the out-of-plane component.
                let perp = -n.x * yaw.sin() + n.y * yaw.cos();
                prop_assert!((r.sin() - perp.abs()).abs() < 1e-9);
            }

            #[test]
            fn invariant_under_world_z_rotation(n in normal(), yaw in -3.2f64..3.2,
                                                pitch in -1.5f64..1.5, spin in -3.2f64..3.2) {
                let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), spin);
                let a = alignment_error(&n, &AttitudeYP { yaw, pitch });
                let b = alignment_error(&(rot * n), &AttitudeYP { yaw: yaw + spin, pitch });
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
