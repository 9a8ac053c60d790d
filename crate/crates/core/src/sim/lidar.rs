//! Ray-cast LiDAR against the truth heightfield.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::terrain::Heightfield;
use super::VehicleState;
use crate::alignment::AttitudeYP;
use crate::angles::{abs_diff, rad};
use crate::exec::Exec;

/// Sensor geometry. Angles in degrees; elevation is measured up from the
/// vehicle's horizontal plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub vertical_fov_deg: f64,
    pub fov_center_deg: f64,
    pub range: f64,
    /// Azimuth sector centered on the tail that returns nothing.
    pub rear_occlusion_deg: f64,
    pub angular_resolution_deg: f64,
    /// Sensor origin above the platform position, m.
    pub mount_height: f64,
    /// Ray-march step, m.
    pub march_step: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            vertical_fov_deg: 90.0,
            fov_center_deg: -45.0,
            range: 3.0,
            rear_occlusion_deg: 120.0,
            angular_resolution_deg: 2.0,
            mount_height: 0.5,
            march_step: 0.075,
        }
    }
}

impl SensorSpec {
    /// Unit ray directions in the vehicle frame.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let res = self.angular_resolution_deg;
        let n_az = (360.0 / res).round() as usize;
        let n_el = (self.vertical_fov_deg / res + 1e-9).floor() as usize + 1;
        let el0 = self.fov_center_deg - self.vertical_fov_deg / 2.0;
        let mut out = Vec::with_capacity(n_az * n_el);
        for i in 0..n_az {
            let az = -180.0 + i as f64 * res;
            if abs_diff(rad(az), rad(180.0)) < rad(self.rear_occlusion_deg) / 2.0 {
                continue;
            }
            let (sa, ca) = rad(az).sin_cos();
            for j in 0..n_el {
                let (se, ce) = rad(el0 + j as f64 * res).sin_cos();
                out.push(Vector3::new(ce * ca, ce * sa, se));
            }
        }
        out
    }
}

/// First intersection of a ray with the heightfield within `range`, refined by
/// bisection to about 5 µm along the ray.
pub fn cast_ray(
    truth: &Heightfield,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    range: f64,
    step: f64,
) -> Option<Vector3<f64>> {
    let above =
        |t: f64| origin.z + dir.z * t - truth.height(origin.x + dir.x * t, origin.y + dir.y * t);
    if range <= 0.0 || above(0.0) <= 0.0 {
        return None;
    }
    let mut prev = 0.0;
    loop {
        let t = (prev + step).min(range);
        if above(t) <= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..14 {
                let mid = 0.5 * (lo + hi);
                if above(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let p = origin + dir * hi;
            return Some(Vector3::new(p.x, p.y, truth.height(p.x, p.y)));
        }
        if t >= range {
            return None;
        }
        prev = t;
    }
}

/// Scan from the vehicle pose: rays rotate with yaw and pitch, origin sits
/// `mount_height` above the platform. Returns first-hit points in ray order.
pub fn lidar_scan(
    truth: &Heightfield,
    state: &VehicleState,
    spec: &SensorSpec,
    exec: Exec,
) -> Vec<Vector3<f64>> {
    if spec.range <= 0.0 {
        return Vec::new();
    }
    let rot = AttitudeYP {
        yaw: state.yaw,
        pitch: state.pitch,
    }
    .rotation();
    let origin = state.position + Vector3::new(0.0, 0.0, spec.mount_height);
    let dirs = spec.ray_directions();
    exec.map_slice(&dirs, |d| {
        cast_ray(truth, &origin, &(rot * d), spec.range, spec.march_step)
    })
    .into_iter()
    .flatten()
    .collect()
}
