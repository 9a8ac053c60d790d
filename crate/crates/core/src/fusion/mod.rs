//! Fixed-lag GNSS/odometry smoother with an online odometry-to-inertial
//! extrinsic.
//!
//! Frames: `O` is the odometry frame (body frame at start), `I` the local
//! inertial frame with its origin at the first fix, `B` the body. State
//! nodes hold `T_OB` at odometry timestamps; extrinsic nodes hold `T_OI`,
//! one per extrinsic period, chained by random-walk identity factors. A GNSS
//! fix constrains `I p_P = T_OI⁻¹ T_OB B p_P`.
//!
//! Until the extrinsic yaw is observable, fixes enter with their covariance
//! inflated by κ and barely move the states. Observability is judged on the
//! yaw variance computed as if every fix had its nominal covariance; the
//! inflated variance would otherwise stay above the threshold for good.

mod covariance;
mod experiment;
mod graph;
mod pipeline;
mod streams;
mod transform;

pub use covariance::{
    from_upper_triangle, gate_gnss, is_spd, pose_covariance, registration_covariance,
    upper_triangle,
};
pub use experiment::{
    evaluate, fix_influence_until, run_experiment, Experiment, FusionEvaluation, FusionScenario,
    RECOVERY_WINDOW_S,
};
pub use graph::{
    Estimate, ExtrinsicNode, Factor, FactorKind, FixedLagSmoother, NodeId, SmootherConfig,
    SolveReport, StateNode, WindowEstimate,
};
pub use pipeline::{
    dead_reckoning, positions, run_fusion, run_fusion_with, write_estimates_csv, FusionConfig,
    FusionRun, TraceRow, ESTIMATE_CSV_HEADER,
};
pub use streams::{
    read_streams_csv, simulate_streams, true_extrinsic, write_streams_csv, DegenerateSegment,
    GnssNoise, GnssRecord, OdomRecord, OdometryNoise, PathSpec, Streams, Trajectory, SIGMA_FLOOR,
    STREAM_CSV_HEADER,
};
pub use transform::{log_so3, odometry_delta, rotation_from_ypr, RigidTransform};
