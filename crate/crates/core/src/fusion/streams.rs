use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Matrix3, Matrix6, UnitQuaternion, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::covariance::{
    from_upper_triangle, pose_covariance, registration_covariance, upper_triangle,
};
use super::transform::{odometry_delta, RigidTransform};
use crate::angles::{rad, wrap};
use crate::error::{invalid, Error, Result};

/// Waypoint path flown at constant speed, turning in place to each leg's
/// heading. Angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub waypoints: Vec<[f64; 3]>,
    pub speed: f64,
    #[serde(default = "default_yaw_rate")]
    pub yaw_rate_deg: f64,
    #[serde(default)]
    pub hover_start_s: f64,
    #[serde(default)]
    pub hover_end_s: f64,
}

fn default_yaw_rate() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    t0: f64,
    t1: f64,
    from: RigidTransform,
    to: RigidTransform,
}

/// Continuous truth trajectory `T_OB(t)`. The odometry frame is the body
/// frame at `t = 0`, so the trajectory starts at the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    segments: Vec<Segment>,
}

impl Trajectory {
    pub fn from_path(spec: &PathSpec) -> Result<Self> {
        if spec.waypoints.len() < 2 {
            return invalid("a path needs at least two waypoints");
        }
        if !(spec.speed > 0.0)
            || !(spec.yaw_rate_deg > 0.0)
            || spec.hover_start_s < 0.0
            || spec.hover_end_s < 0.0
        {
            return invalid("path speed and yaw rate must be positive, hovers non-negative");
        }
        let wp: Vec<Vector3<f64>> = spec
            .waypoints
            .iter()
            .map(|w| Vector3::new(w[0], w[1], w[2]))
            .collect();
        let heading = |a: &Vector3<f64>, b: &Vector3<f64>| (b.y - a.y).atan2(b.x - a.x);
        let omega = rad(spec.yaw_rate_deg);

        let mut world = Vec::new();
        let mut t = 0.0;
        let mut pose = RigidTransform::from_yaw(heading(&wp[0], &wp[1]), wp[0]);
        let push = |world: &mut Vec<Segment>,
                    t: &mut f64,
                    dur: f64,
                    to: RigidTransform,
                    from: &mut RigidTransform| {
            if dur > 0.0 {
                world.push(Segment {
                    t0: *t,
                    t1: *t + dur,
                    from: *from,
                    to,
                });
                *t += dur;
            }
            *from = to;
        };
        push(&mut world, &mut t, spec.hover_start_s, pose, &mut pose);
        for leg in wp.windows(2) {
            let (a, b) = (leg[0], leg[1]);
            if (b - a).xy().norm() < 1e-9 {
                return invalid("consecutive waypoints must differ horizontally");
            }
            let yaw = heading(&a, &b);
            let turn = wrap(yaw - pose.yaw()).abs() / omega;
            push(
                &mut world,
                &mut t,
                turn,
                RigidTransform::from_yaw(yaw, a),
                &mut pose,
            );
            push(
                &mut world,
                &mut t,
                (b - a).norm() / spec.speed,
                RigidTransform::from_yaw(yaw, b),
                &mut pose,
            );
        }
        push(&mut world, &mut t, spec.hover_end_s, pose, &mut pose);

        let origin = world[0].from.inverse();
        let segments = world
            .into_iter()
            .map(|s| Segment {
                t0: s.t0,
                t1: s.t1,
                from: origin * s.from,
                to: origin * s.to,
            })
            .collect();
        Ok(Trajectory { segments })
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    /// Pose at `t`, clamped to the trajectory span.
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        let i = self
            .segments
            .partition_point(|s| s.t1 < t)
            .min(self.segments.len() - 1);
        let s = &self.segments[i];
        let u = ((t - s.t0) / (s.t1 - s.t0)).clamp(0.0, 1.0);
        RigidTransform::new(
            s.from.rotation.slerp(&s.to.rotation, u),
            s.from.translation + (s.to.translation - s.from.translation) * u,
        )
    }

    /// Sample times `k / rate` covering the trajectory.
    pub fn times(&self, rate: f64) -> Vec<f64> {
        let n = (self.duration() * rate + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 / rate).collect()
    }
}

/// World-fixed (odometry-frame) axis along which registration is degenerate
/// on `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegenerateSegment {
    pub start: f64,
    pub end: f64,
    pub axis: [f64; 3],
}

/// Per-step odometry noise. Inside degenerate segments every delta also
/// drifts by `drift_fraction` of its length along the segment axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryNoise {
    pub rate_hz: f64,
    pub sigma_trans: f64,
    pub sigma_rot_deg: f64,
    pub drift_fraction: f64,
    /// σ assigned to unconstrained registration directions, m or rad.
    pub sigma_max: f64,
    pub degenerate: Vec<DegenerateSegment>,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        OdometryNoise {
            rate_hz: 20.0,
            sigma_trans: 5e-4,
            sigma_rot_deg: 1e-3,
            drift_fraction: 0.01,
            sigma_max: 0.1,
            degenerate: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnssNoise {
    pub rate_hz: f64,
    pub sigma: f64,
    pub dropouts: Vec<[f64; 2]>,
    /// Antenna position in the body frame, m.
    pub lever_arm: [f64; 3],
    /// True yaw of T_OI.
    pub extrinsic_yaw_deg: f64,
}

impl Default for GnssNoise {
    fn default() -> Self {
        GnssNoise {
            rate_hz: 5.0,
            sigma: 0.02,
            dropouts: Vec::new(),
            lever_arm: [0.0, 0.0, 0.1],
            extrinsic_yaw_deg: 0.0,
        }
    }
}

impl GnssNoise {
    pub fn lever(&self) -> Vector3<f64> {
        Vector3::from(self.lever_arm)
    }

    pub fn in_dropout(&self, t: f64) -> bool {
        self.dropouts.iter().any(|d| t >= d[0] && t <= d[1])
    }
}

/// Reported standard deviations never go below this, so noise-free streams
/// still carry invertible covariances.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct OdomRecord {
    pub timestamp: f64,
    pub delta: RigidTransform,
    pub covariance: Matrix6<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnssRecord {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// Measurement streams. The first odometry record is the initial pose in
/// the odometry frame rather than a delta.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Streams {
    pub odometry: Vec<OdomRecord>,
    pub gnss: Vec<GnssRecord>,
}

/// True T_OI: yaw as configured, inertial origin at the antenna at `t = 0`.
pub fn true_extrinsic(truth: &Trajectory, gnss: &GnssNoise) -> RigidTransform {
    let antenna = truth.pose_at(0.0).transform_point(&gnss.lever());
    RigidTransform::from_yaw(rad(gnss.extrinsic_yaw_deg), antenna)
}

pub fn simulate_streams(
    truth: &Trajectory,
    odom: &OdometryNoise,
    gnss: &GnssNoise,
    seed: u64,
) -> Result<Streams> {
    if !(odom.rate_hz > 0.0) || !(gnss.rate_hz > 0.0) {
        return invalid("stream rates must be positive");
    }
    if odom.sigma_trans < 0.0
        || odom.sigma_rot_deg < 0.0
        || gnss.sigma < 0.0
        || !(odom.sigma_max > 0.0)
    {
        return invalid("noise levels must be non-negative and sigma_max positive");
    }
    let axis = |a: &[f64; 3]| -> Result<Vector3<f64>> {
        let v = Vector3::from(*a);
        if !(v.norm() > 0.0) {
            return invalid("degenerate axis must be non-zero");
        }
        Ok(v.normalize())
    };
    let segments: Vec<(f64, f64, Vector3<f64>)> = odom
        .degenerate
        .iter()
        .map(|d| Ok((d.start, d.end, axis(&d.axis)?)))
        .collect::<Result<_>>()?;

    let mut rng = crate::seed::rng(seed, "fusion-odometry");
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let s_t = odom.sigma_trans.max(SIGMA_FLOOR);
    let s_r = rad(odom.sigma_rot_deg).max(SIGMA_FLOOR);

    let times = truth.times(odom.rate_hz);
    let mut odometry = Vec::with_capacity(times.len());
    let first = truth.pose_at(times[0]);
    let anchor = DMatrix::from_diagonal_element(3, 3, 1.0 / s_t);
    let (cp, cr) = registration_covariance(
        &anchor,
        &(anchor.clone() * (s_t / s_r)),
        1.0,
        odom.sigma_max,
    )?;
    odometry.push(OdomRecord {
        timestamp: times[0],
        delta: first,
        covariance: pose_covariance(&cp, &cr),
    });
    for w in times.windows(2) {
        let (prev, curr) = (truth.pose_at(w[0]), truth.pose_at(w[1]));
        let exact = odometry_delta(&prev, &curr);
        let degenerate = segments
            .iter()
            .find(|(a, b, _)| w[1] >= *a && w[1] <= *b)
            .map(|s| s.2);

        let mut j_pos = DMatrix::<f64>::identity(3, 3) / s_t;
        let mut translation = exact.translation;
        if let Some(a) = degenerate {
            let a_body = prev.rotation.inverse() * a;
            j_pos = (DMatrix::identity(3, 3)
                - DMatrix::from_column_slice(3, 1, a_body.as_slice())
                    * DMatrix::from_row_slice(1, 3, a_body.as_slice()))
                / s_t;
            translation += a_body * (odom.drift_fraction * exact.translation.norm());
        }
        let j_rot = DMatrix::<f64>::identity(3, 3) / s_r;
        let (cp, cr) = registration_covariance(&j_pos, &j_rot, 1.0, odom.sigma_max)?;

        let nt = Vector3::from_fn(|_, _| unit.sample(&mut rng)) * odom.sigma_trans;
        let nr = Vector3::from_fn(|_, _| unit.sample(&mut rng)) * rad(odom.sigma_rot_deg);
        let delta = RigidTransform::new(
            exact.rotation * UnitQuaternion::from_scaled_axis(nr),
            translation + nt,
        );
        odometry.push(OdomRecord {
            timestamp: w[1],
            delta,
            covariance: pose_covariance(&cp, &cr),
        });
    }

    let mut rng = crate::seed::rng(seed, "fusion-gnss");
    let t_oi_inv = true_extrinsic(truth, gnss).inverse();
    let var = gnss.sigma.max(SIGMA_FLOOR).powi(2);
    let gnss_records = truth
        .times(gnss.rate_hz)
        .into_iter()
        .filter(|t| !gnss.in_dropout(*t))
        .map(|t| {
            let antenna = truth.pose_at(t).transform_point(&gnss.lever());
            let noise = Vector3::from_fn(|_, _| unit.sample(&mut rng)) * gnss.sigma;
            GnssRecord {
                timestamp: t,
                position: t_oi_inv.transform_point(&antenna) + noise,
                covariance: Matrix3::from_diagonal_element(var),
            }
        })
        .collect();
    Ok(Streams {
        odometry,
        gnss: gnss_records,
    })
}

pub const STREAM_CSV_HEADER: &str = "type,timestamp,values";

/// Rows in timestamp order, odometry before GNSS at equal times. Values use
/// the shortest round-trip float format.
pub fn write_streams_csv<W: Write>(streams: &Streams, out: &mut W) -> Result<()> {
    writeln!(out, "{STREAM_CSV_HEADER}")?;
    let (mut i, mut j) = (0, 0);
    while i < streams.odometry.len() || j < streams.gnss.len() {
        let take_odom = match (streams.odometry.get(i), streams.gnss.get(j)) {
            (Some(o), Some(g)) => o.timestamp <= g.timestamp,
            (Some(_), None) => true,
            _ => false,
        };
        let mut row: Vec<String>;
        if take_odom {
            let o = &streams.odometry[i];
            let q = o.delta.rotation.quaternion();
            let t = o.delta.translation;
            row = vec!["odom".into(), o.timestamp.to_string()];
            row.extend(
                [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
                    .iter()
                    .map(f64::to_string),
            );
            let cov = DMatrix::from_column_slice(6, 6, o.covariance.as_slice());
            row.extend(upper_triangle(&cov).iter().map(f64::to_string));
            i += 1;
        } else {
            let g = &streams.gnss[j];
            row = vec!["gnss".into(), g.timestamp.to_string()];
            row.extend(g.position.iter().map(f64::to_string));
            let cov = DMatrix::from_column_slice(3, 3, g.covariance.as_slice());
            row.extend(upper_triangle(&cov).iter().map(f64::to_string));
            j += 1;
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_streams_csv<R: BufRead>(input: R) -> Result<Streams> {
    let mut streams = Streams::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("type")) {
            continue;
        }
        let parse_err = |msg: String| Error::Parse(format!("line {}: {msg}", n + 1));
        let fields: Vec<&str> = line.split(',').collect();
        let nums = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("{f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match fields[0] {
            "odom" => {
                if nums.len() != 1 + 7 + 21 {
                    return Err(parse_err(format!(
                        "odom rows need 29 numbers (got {})",
                        nums.len()
                    )));
                }
                let delta = RigidTransform::from_parts(
                    [nums[4], nums[5], nums[6], nums[7]],
                    Vector3::new(nums[1], nums[2], nums[3]),
                )
                .map_err(|e| parse_err(e.to_string()))?;
                let cov = from_upper_triangle(6, &nums[8..])?;
                streams.odometry.push(OdomRecord {
                    timestamp: nums[0],
                    delta,
                    covariance: Matrix6::from_column_slice(cov.as_slice()),
                });
            }
            "gnss" => {
                if nums.len() != 1 + 3 + 6 {
                    return Err(parse_err(format!(
                        "gnss rows need 10 numbers (got {})",
                        nums.len()
                    )));
                }
                let cov = from_upper_triangle(3, &nums[4..])?;
                streams.gnss.push(GnssRecord {
                    timestamp: nums[0],
                    position: Vector3::new(nums[1], nums[2], nums[3]),
                    covariance: Matrix3::from_column_slice(cov.as_slice()),
                });
            }
            other => return Err(parse_err(format!("unknown row type {other:?}"))),
        }
    }
    for (name, ts) in [
        (
            "odom",
            streams
                .odometry
                .iter()
                .map(|o| o.timestamp)
                .collect::<Vec<_>>(),
        ),
        ("gnss", streams.gnss.iter().map(|g| g.timestamp).collect()),
    ] {
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse(format!(
                "{name} timestamps must be strictly increasing"
            )));
        }
    }
    Ok(streams)
}
