use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Rigid-body transform `p ↦ R p + t`.
///
/// Tangent vectors are ordered `[translation, rotation]`. Perturbations act
/// additively on the translation and on the right of the rotation:
/// `T ⊞ δ = (R Exp(δ_r), t + δ_t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Renormalizes `[w, x, y, z]`; rejects quaternions whose norm is off by
    /// more than 1e-6.
    pub fn from_parts(q: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let raw = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = raw.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 || !translation.iter().all(|v| v.is_finite()) {
            return invalid(format!("not a rigid transform: |q| = {n}"));
        }
        // Already unit to rounding: keep the bits so files round-trip exactly.
        let rotation = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(raw)
        } else {
            UnitQuaternion::from_quaternion(raw)
        };
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    /// Rotation about z by `yaw`, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        RigidTransform {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Heading of the rotated x axis.
    pub fn yaw(&self) -> f64 {
        let m = self.rotation_matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    pub fn plus(&self, delta: &Vector6<f64>) -> Self {
        let dt = delta.fixed_rows::<3>(0).into_owned();
        let dr = delta.fixed_rows::<3>(3).into_owned();
        RigidTransform {
            rotation: self.rotation * UnitQuaternion::from_scaled_axis(dr),
            translation: self.translation + dt,
        }
    }

    /// `self ⊟ base`, the inverse of [`plus`](Self::plus).
    pub fn minus(&self, base: &RigidTransform) -> Vector6<f64> {
        let dt = self.translation - base.translation;
        let dr = log_so3(&(base.rotation.inverse() * self.rotation));
        Vector6::new(dt.x, dt.y, dt.z, dr.x, dr.y, dr.z)
    }

    pub fn is_normalized(&self) -> bool {
        (self.rotation.as_ref().norm() - 1.0).abs() <= 1e-9
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

/// Rotation vector of `q`, angle in [0, π].
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Pick the hemisphere with w >= 0 so the angle never exceeds π.
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    q.scaled_axis()
}

pub fn rotation_from_ypr(yaw: f64, pitch: f64, roll: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(roll, pitch, yaw))
}

/// Relative motion `T_prev⁻¹ T_curr`, expressed in the previous body frame.
pub fn odometry_delta(prev: &RigidTransform, curr: &RigidTransform) -> RigidTransform {
    prev.inverse() * *curr
}
