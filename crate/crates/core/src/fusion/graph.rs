use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use super::covariance::{gate_gnss, is_spd, sqrt_information};
use super::transform::RigidTransform;
use crate::angles::rad;
use crate::error::{invalid, Error, Result};

/// Smoother tuning. Angles are degrees, as in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    pub window_s: f64,
    pub extrinsic_period_s: f64,
    /// Identity-factor random walk, m/√s and deg/√s.
    pub rw_sigma_trans: f64,
    pub rw_sigma_rot_deg: f64,
    /// GNSS factors are inflated while the extrinsic yaw σ exceeds this.
    pub yaw_sigma_threshold_deg: f64,
    pub kappa: f64,
    pub init_yaw_sigma_deg: f64,
    pub init_roll_pitch_sigma_deg: f64,
    pub attach_tolerance_s: f64,
    pub max_iterations: usize,
    pub cost_tolerance: f64,
    /// Gauge prior on the first state, m and rad.
    pub first_pose_sigma: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            window_s: 5.0,
            extrinsic_period_s: 1.0,
            rw_sigma_trans: 0.01,
            rw_sigma_rot_deg: 0.1,
            yaw_sigma_threshold_deg: 5.0,
            kappa: 1e4,
            init_yaw_sigma_deg: 180.0,
            init_roll_pitch_sigma_deg: 1.0,
            attach_tolerance_s: 0.025,
            max_iterations: 50,
            cost_tolerance: 1e-9,
            first_pose_sigma: 1e-4,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_s", self.window_s),
            ("extrinsic_period_s", self.extrinsic_period_s),
            ("rw_sigma_trans", self.rw_sigma_trans),
            ("rw_sigma_rot_deg", self.rw_sigma_rot_deg),
            ("yaw_sigma_threshold_deg", self.yaw_sigma_threshold_deg),
            ("kappa", self.kappa),
            ("init_yaw_sigma_deg", self.init_yaw_sigma_deg),
            ("init_roll_pitch_sigma_deg", self.init_roll_pitch_sigma_deg),
            ("attach_tolerance_s", self.attach_tolerance_s),
            ("cost_tolerance", self.cost_tolerance),
            ("first_pose_sigma", self.first_pose_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("smoother.{name} must be positive (got {v})"));
            }
        }
        if self.kappa < 1.0 {
            return invalid(format!("smoother.kappa must be >= 1 (got {})", self.kappa));
        }
        if self.max_iterations == 0 {
            return invalid("smoother.max_iterations must be positive");
        }
        Ok(())
    }

    pub fn yaw_variance_threshold(&self) -> f64 {
        rad(self.yaw_sigma_threshold_deg).powi(2)
    }

    /// Identity-factor covariance for an extrinsic step of `dt` seconds.
    pub fn random_walk_covariance(&self, dt: f64) -> Matrix6<f64> {
        let t = self.rw_sigma_trans.powi(2) * dt;
        let r = rad(self.rw_sigma_rot_deg).powi(2) * dt;
        Matrix6::from_diagonal(&Vector6::new(t, t, t, r, r, r))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NodeId {
    State(usize),
    Extrinsic(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateNode {
    pub id: usize,
    pub timestamp: f64,
    /// Body pose in the odometry frame, T_OB.
    pub pose: RigidTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtrinsicNode {
    pub id: usize,
    pub timestamp: f64,
    /// T_OI: maps inertial-frame points into the odometry frame.
    pub transform: RigidTransform,
    /// Marginal covariance in the tangent `[translation, rotation]`.
    pub covariance: Matrix6<f64>,
    /// World-z yaw variance of the marginal, rad².
    pub yaw_variance: f64,
    /// Same, computed with every GNSS factor at its nominal covariance.
    pub yaw_variance_nominal: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FactorKind {
    Odometry,
    Position,
    Identity,
    Prior,
}

#[derive(Clone, Debug)]
enum Model {
    Odometry {
        delta: RigidTransform,
    },
    Position {
        fix: Vector3<f64>,
        lever: Vector3<f64>,
    },
    Identity,
    Prior {
        mean: RigidTransform,
    },
    /// Marginalization prior `A (x ⊟ x̄) + e` over its nodes.
    Linear {
        lin: Vec<RigidTransform>,
        offset: DVector<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct Factor {
    kind: FactorKind,
    nodes: Vec<NodeId>,
    model: Model,
    sqrt_info: DMatrix<f64>,
    /// Whitening with GNSS inflation undone; equals `sqrt_info` otherwise.
    nominal_sqrt_info: DMatrix<f64>,
    gated: bool,
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn gated(&self) -> bool {
        self.gated
    }

    /// Unwhitened residual at the given node values.
    fn raw(&self, v: &[&RigidTransform]) -> DVector<f64> {
        match &self.model {
            Model::Odometry { delta } => {
                let pred = v[0].inverse() * *v[1];
                DVector::from_column_slice(pred.minus(delta).as_slice())
            }
            Model::Position { fix, lever } => {
                let antenna = v[0].transform_point(lever);
                let p = v[1].inverse().transform_point(&antenna);
                DVector::from_column_slice((p - fix).as_slice())
            }
            Model::Identity => DVector::from_column_slice(v[1].minus(v[0]).as_slice()),
            Model::Prior { mean } => DVector::from_column_slice(v[0].minus(mean).as_slice()),
            Model::Linear { lin, .. } => {
                let mut r = DVector::zeros(6 * lin.len());
                for (k, (x, x0)) in v.iter().zip(lin).enumerate() {
                    r.fixed_rows_mut::<6>(6 * k).copy_from(&x.minus(x0));
                }
                r
            }
        }
    }

    fn offset(&self) -> Option<&DVector<f64>> {
        match &self.model {
            Model::Linear { offset, .. } => Some(offset),
            _ => None,
        }
    }

    fn whitened(&self, v: &[&RigidTransform]) -> DVector<f64> {
        let mut r = &self.sqrt_info * self.raw(v);
        if let Some(e) = self.offset() {
            r += e;
        }
        r
    }

    fn cost(&self, v: &[&RigidTransform]) -> f64 {
        0.5 * self.whitened(v).norm_squared()
    }

    /// Central-difference Jacobian of the raw residual, one block per node.
    fn raw_jacobian(&self, v: &[&RigidTransform]) -> Vec<DMatrix<f64>> {
        const H: f64 = 1e-6;
        let dim = self.sqrt_info.ncols();
        let mut owned: Vec<RigidTransform> = v.iter().map(|t| **t).collect();
        let mut blocks = Vec::with_capacity(v.len());
        for k in 0..v.len() {
            let mut j = DMatrix::zeros(dim, 6);
            let base = owned[k];
            for d in 0..6 {
                let mut step = Vector6::zeros();
                step[d] = H;
                owned[k] = base.plus(&step);
                let plus = self.raw(&owned.iter().collect::<Vec<_>>());
                owned[k] = base.plus(&-step);
                let minus = self.raw(&owned.iter().collect::<Vec<_>>());
                j.set_column(d, &((plus - minus) / (2.0 * H)));
            }
            owned[k] = base;
            blocks.push(j);
        }
        blocks
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Cost before the first step and after every accepted step.
    pub costs: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().unwrap_or(&f64::NAN)
    }
}

/// A state estimate as published: smoothed over the full window before the
/// node was marginalized.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub timestamp: f64,
    pub pose: RigidTransform,
    pub yaw_var_extrinsic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowEstimate {
    pub states: Vec<StateNode>,
    pub extrinsics: Vec<ExtrinsicNode>,
    pub report: SolveReport,
}

/// Fixed-lag smoother over odometry states and time-varying T_OI extrinsics.
///
/// Variables are ordered states first, then extrinsics, so the normal
/// equations are a banded block plus a dense border and factor with little
/// fill. Nodes that leave the window are folded into a dense prior on their
/// Markov blanket by a Schur complement.
#[derive(Clone, Debug)]
pub struct FixedLagSmoother {
    config: SmootherConfig,
    states: VecDeque<StateNode>,
    extrinsics: VecDeque<ExtrinsicNode>,
    factors: Vec<Factor>,
    next_state: usize,
    next_extrinsic: usize,
    exported: Vec<Estimate>,
    diagnostics: Vec<String>,
    traveled: f64,
}

struct Layout {
    first_state: usize,
    n_states: usize,
    first_extrinsic: usize,
}

impl Layout {
    fn slot(&self, id: NodeId) -> usize {
        match id {
            NodeId::State(i) => i - self.first_state,
            NodeId::Extrinsic(i) => self.n_states + i - self.first_extrinsic,
        }
    }
}

struct Normal {
    triplets: Vec<(usize, usize, f64)>,
    diag: DVector<f64>,
    gradient: DVector<f64>,
}

impl FixedLagSmoother {
    /// Starts the graph at `pose` with a tight gauge prior.
    pub fn new(config: SmootherConfig, timestamp: f64, pose: RigidTransform) -> Result<Self> {
        config.validate()?;
        if !timestamp.is_finite() || !pose.is_normalized() {
            return invalid("initial state must have a finite timestamp and normalized rotation");
        }
        let s = config.first_pose_sigma.powi(2);
        let cov = DMatrix::from_diagonal_element(6, 6, s);
        let mut g = FixedLagSmoother {
            config,
            states: VecDeque::new(),
            extrinsics: VecDeque::new(),
            factors: Vec::new(),
            next_state: 1,
            next_extrinsic: 0,
            exported: Vec::new(),
            diagnostics: Vec::new(),
            traveled: 0.0,
        };
        g.states.push_back(StateNode {
            id: 0,
            timestamp,
            pose,
        });
        g.push_factor(
            FactorKind::Prior,
            vec![NodeId::State(0)],
            Model::Prior { mean: pose },
            &cov,
            None,
        )?;
        Ok(g)
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn states(&self) -> impl Iterator<Item = &StateNode> {
        self.states.iter()
    }

    pub fn extrinsics(&self) -> impl Iterator<Item = &ExtrinsicNode> {
        self.extrinsics.iter()
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn latest_state(&self) -> &StateNode {
        self.states.back().expect("graph always holds a state")
    }

    pub fn latest_extrinsic(&self) -> Option<&ExtrinsicNode> {
        self.extrinsics.back()
    }

    /// Odometry path length ingested so far, m.
    pub fn traveled(&self) -> f64 {
        self.traveled
    }

    /// Yaw variance the gate compares against the threshold: the nominal
    /// marginal of the newest extrinsic, or the initial prior before any fix.
    pub fn gate_variance(&self) -> f64 {
        self.extrinsics
            .back()
            .map_or(rad(self.config.init_yaw_sigma_deg).powi(2), |e| {
                e.yaw_variance_nominal
            })
    }

    pub fn gated(&self) -> bool {
        self.gate_variance() > self.config.yaw_variance_threshold()
    }

    fn push_factor(
        &mut self,
        kind: FactorKind,
        nodes: Vec<NodeId>,
        model: Model,
        cov: &DMatrix<f64>,
        nominal: Option<&DMatrix<f64>>,
    ) -> Result<usize> {
        let sqrt_info = sqrt_information(cov)?;
        let nominal_sqrt_info = match nominal {
            Some(n) => sqrt_information(n)?,
            None => sqrt_info.clone(),
        };
        let gated = nominal.is_some() && nominal != Some(cov);
        self.factors.push(Factor {
            kind,
            nodes,
            model,
            sqrt_info,
            nominal_sqrt_info,
            gated,
        });
        Ok(self.factors.len() - 1)
    }

    /// Appends a state predicted by composing the newest estimate with
    /// `delta`, linked by an odometry factor with covariance `cov`
    /// (`[translation, rotation]`, previous body frame).
    pub fn add_odometry(
        &mut self,
        timestamp: f64,
        delta: RigidTransform,
        cov: &Matrix6<f64>,
    ) -> Result<NodeId> {
        let last = self.latest_state();
        if !(timestamp > last.timestamp) {
            return invalid(format!(
                "odometry timestamp {timestamp} is not after {}",
                last.timestamp
            ));
        }
        if !delta.is_normalized() || !delta.translation.iter().all(|v| v.is_finite()) {
            return invalid("odometry delta is not a rigid transform");
        }
        let cov = DMatrix::from_column_slice(6, 6, cov.as_slice());
        if !is_spd(&cov) {
            return invalid("odometry covariance is not symmetric positive definite");
        }
        let (prev, pose) = (last.id, last.pose * delta);
        let id = self.next_state;
        self.push_factor(
            FactorKind::Odometry,
            vec![NodeId::State(prev), NodeId::State(id)],
            Model::Odometry { delta },
            &cov,
            None,
        )?;
        self.next_state += 1;
        self.states.push_back(StateNode {
            id,
            timestamp,
            pose,
        });
        self.traveled += delta.translation.norm();
        Ok(NodeId::State(id))
    }

    /// Appends an extrinsic node initialized at its predecessor and linked to
    /// it by an identity factor with covariance `cov`.
    pub fn advance_extrinsic(&mut self, timestamp: f64, rw: &Matrix6<f64>) -> Result<NodeId> {
        let Some(prev) = self.extrinsics.back().cloned() else {
            return invalid("no extrinsic node to advance from");
        };
        if !(timestamp > prev.timestamp) {
            return invalid(format!(
                "extrinsic timestamp {timestamp} is not after {}",
                prev.timestamp
            ));
        }
        let cov = DMatrix::from_column_slice(6, 6, rw.as_slice());
        if !is_spd(&cov) {
            return invalid("random-walk covariance is not symmetric positive definite");
        }
        let id = self.next_extrinsic;
        self.push_factor(
            FactorKind::Identity,
            vec![NodeId::Extrinsic(prev.id), NodeId::Extrinsic(id)],
            Model::Identity,
            &cov,
            None,
        )?;
        self.next_extrinsic += 1;
        let yaw_growth = rw[(5, 5)];
        self.extrinsics.push_back(ExtrinsicNode {
            id,
            timestamp,
            transform: prev.transform,
            covariance: prev.covariance + rw,
            yaw_variance: prev.yaw_variance + yaw_growth,
            yaw_variance_nominal: prev.yaw_variance_nominal + yaw_growth,
        });
        Ok(NodeId::Extrinsic(id))
    }

    /// Attaches a GNSS fix `I p_P` (antenna at `lever` in the body frame) to
    /// the state nearest in time and the newest extrinsic. Returns `None`
    /// and records a diagnostic when no state lies within the attachment
    /// tolerance.
    ///
    /// The first fix creates the extrinsic chain: T_OI starts at zero yaw,
    /// placed so the fix maps onto the antenna, with the configured initial
    /// σ. Later fixes open a new extrinsic node once the extrinsic period has
    /// elapsed.
    pub fn add_position_fix(
        &mut self,
        timestamp: f64,
        fix: Vector3<f64>,
        cov: &Matrix3<f64>,
        lever: Vector3<f64>,
    ) -> Result<Option<usize>> {
        let cov_d = DMatrix::from_column_slice(3, 3, cov.as_slice());
        if !is_spd(&cov_d)
            || !fix.iter().all(|v| v.is_finite())
            || !lever.iter().all(|v| v.is_finite())
        {
            return invalid("position fix needs finite values and an SPD covariance");
        }
        let nearest = self
            .states
            .iter()
            .min_by(|a, b| {
                (a.timestamp - timestamp)
                    .abs()
                    .total_cmp(&(b.timestamp - timestamp).abs())
            })
            .cloned()
            .expect("graph always holds a state");
        let gap = (nearest.timestamp - timestamp).abs();
        if gap > self.config.attach_tolerance_s {
            self.diagnostics.push(format!(
                "dropped fix at t={timestamp}: nearest state is {gap:.3} s away"
            ));
            return Ok(None);
        }
        let state = nearest.id;
        let antenna = nearest.pose.transform_point(&lever);

        match self.extrinsics.back() {
            None => {
                let transform =
                    RigidTransform::new(nalgebra::UnitQuaternion::identity(), antenna - fix);
                let s_t = cov.symmetric_eigenvalues().max();
                let s_rp = rad(self.config.init_roll_pitch_sigma_deg).powi(2);
                let s_y = rad(self.config.init_yaw_sigma_deg).powi(2);
                let prior = Matrix6::from_diagonal(&Vector6::new(s_t, s_t, s_t, s_rp, s_rp, s_y));
                let id = self.next_extrinsic;
                self.next_extrinsic += 1;
                self.extrinsics.push_back(ExtrinsicNode {
                    id,
                    timestamp,
                    transform,
                    covariance: prior,
                    yaw_variance: s_y,
                    yaw_variance_nominal: s_y,
                });
                let prior = DMatrix::from_column_slice(6, 6, prior.as_slice());
                self.push_factor(
                    FactorKind::Prior,
                    vec![NodeId::Extrinsic(id)],
                    Model::Prior { mean: transform },
                    &prior,
                    None,
                )?;
            }
            Some(e) if timestamp - e.timestamp >= self.config.extrinsic_period_s => {
                let rw = self.config.random_walk_covariance(timestamp - e.timestamp);
                self.advance_extrinsic(timestamp, &rw)?;
            }
            Some(_) => {}
        }

        let extrinsic = self.extrinsics.back().expect("created above").id;
        let effective = gate_gnss(
            self.gate_variance(),
            cov,
            self.config.yaw_variance_threshold(),
            self.config.kappa,
        );
        let eff_d = DMatrix::from_column_slice(3, 3, effective.as_slice());
        let f = self.push_factor(
            FactorKind::Position,
            vec![NodeId::State(state), NodeId::Extrinsic(extrinsic)],
            Model::Position { fix, lever },
            &eff_d,
            Some(&cov_d),
        )?;
        Ok(Some(f))
    }

    fn layout(&self) -> Layout {
        Layout {
            first_state: self.states.front().map_or(0, |s| s.id),
            n_states: self.states.len(),
            first_extrinsic: self.extrinsics.front().map_or(0, |e| e.id),
        }
    }

    fn values(&self) -> Vec<RigidTransform> {
        self.states
            .iter()
            .map(|s| s.pose)
            .chain(self.extrinsics.iter().map(|e| e.transform))
            .collect()
    }

    fn node_values<'a>(
        &self,
        layout: &Layout,
        f: &Factor,
        values: &'a [RigidTransform],
    ) -> Vec<&'a RigidTransform> {
        f.nodes.iter().map(|n| &values[layout.slot(*n)]).collect()
    }

    fn total_cost(&self, layout: &Layout, values: &[RigidTransform]) -> f64 {
        self.factors
            .iter()
            .map(|f| f.cost(&self.node_values(layout, f, values)))
            .sum()
    }

    /// Gauss-Newton normal equations `H δ = -g` at `values`.
    fn normal_equations(
        &self,
        layout: &Layout,
        values: &[RigidTransform],
        nominal: bool,
    ) -> Normal {
        let n = 6 * values.len();
        let mut triplets = Vec::new();
        let mut diag = DVector::zeros(n);
        let mut gradient = DVector::zeros(n);
        for f in &self.factors {
            let v = self.node_values(layout, f, values);
            let w = if nominal {
                &f.nominal_sqrt_info
            } else {
                &f.sqrt_info
            };
            let mut r = w * f.raw(&v);
            // The nominal system is only factored for covariances; its
            // gradient is never used.
            if let (Some(e), false) = (f.offset(), nominal) {
                r += e;
            }
            let jac: Vec<DMatrix<f64>> = f.raw_jacobian(&v).iter().map(|j| w * j).collect();
            let slots: Vec<usize> = f.nodes.iter().map(|id| layout.slot(*id)).collect();
            for (a, ja) in jac.iter().enumerate() {
                let oa = 6 * slots[a];
                let mut rows = gradient.rows_mut(oa, 6);
                rows += ja.transpose() * &r;
                for (b, jb) in jac.iter().enumerate() {
                    let ob = 6 * slots[b];
                    let block = ja.transpose() * jb;
                    for i in 0..6 {
                        for j in 0..6 {
                            triplets.push((oa + i, ob + j, block[(i, j)]));
                            if oa + i == ob + j {
                                diag[oa + i] += block[(i, j)];
                            }
                        }
                    }
                }
            }
        }
        Normal {
            triplets,
            diag,
            gradient,
        }
    }

    fn factorize(n: usize, normal: &Normal, lambda: f64) -> Option<CscCholesky<f64>> {
        let mut coo = CooMatrix::new(n, n);
        for &(i, j, v) in &normal.triplets {
            coo.push(i, j, v);
        }
        if lambda > 0.0 {
            for i in 0..n {
                coo.push(i, i, lambda * normal.diag[i].max(1e-12));
            }
        }
        CscCholesky::factor(&CscMatrix::from(&coo)).ok()
    }

    /// Levenberg-Marquardt over every node in the window.
    fn solve(&mut self) -> Result<SolveReport> {
        let layout = self.layout();
        let mut values = self.values();
        let n = 6 * values.len();
        let mut cost = self.total_cost(&layout, &values);
        if !cost.is_finite() {
            return Err(Error::SolverFailure {
                iterations: 0,
                reason: format!("initial cost is {cost}"),
            });
        }
        let mut report = SolveReport {
            iterations: 0,
            costs: vec![cost],
            converged: false,
        };
        let mut lambda = 1e-8;
        for it in 1..=self.config.max_iterations {
            report.iterations = it;
            let normal = self.normal_equations(&layout, &values, false);
            let rhs = DMatrix::from_column_slice(n, 1, (-&normal.gradient).as_slice());
            let mut predicted = None;
            let accepted = loop {
                if lambda > 1e12 {
                    break None;
                }
                let Some(chol) = Self::factorize(n, &normal, lambda) else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&rhs);
                if predicted.is_none() {
                    predicted = Some(-0.5 * normal.gradient.dot(&step.column(0)));
                }
                let trial: Vec<RigidTransform> = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        v.plus(&Vector6::from_column_slice(
                            &step.as_slice()[6 * k..6 * k + 6],
                        ))
                    })
                    .collect();
                let trial_cost = self.total_cost(&layout, &trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    lambda = (lambda / 10.0).max(1e-12);
                    break Some((trial, trial_cost));
                }
                lambda *= 10.0;
            };
            let Some((trial, trial_cost)) = accepted else {
                // No damped step lowers the cost: either we sit at the
                // minimum or the model is broken.
                let predicted = predicted.unwrap_or(f64::INFINITY);
                if predicted.abs() <= self.config.cost_tolerance.max(1e-9 * cost) {
                    report.converged = true;
                    break;
                }
                self.write_back(&values);
                return Err(Error::SolverFailure {
                    iterations: it,
                    reason: format!("step damping exhausted at cost {cost:.6e}, predicted decrease {predicted:.3e}"),
                });
            };
            let decrease = cost - trial_cost;
            values = trial;
            cost = trial_cost;
            report.costs.push(cost);
            if decrease < self.config.cost_tolerance {
                report.converged = true;
                break;
            }
        }
        self.write_back(&values);
        Ok(report)
    }

    fn write_back(&mut self, values: &[RigidTransform]) {
        let n = self.states.len();
        for (s, v) in self.states.iter_mut().zip(values) {
            s.pose = *v;
        }
        for (e, v) in self.extrinsics.iter_mut().zip(&values[n..]) {
            e.transform = *v;
        }
    }

    /// Marginal covariances of every extrinsic node, effective and nominal.
    fn update_extrinsic_covariances(&mut self) -> Result<()> {
        if self.extrinsics.is_empty() {
            return Ok(());
        }
        let layout = self.layout();
        let values = self.values();
        let n = 6 * values.len();
        let k = 6 * self.extrinsics.len();
        let first = 6 * self.states.len();
        let mut rhs = DMatrix::zeros(n, k);
        for i in 0..k {
            rhs[(first + i, i)] = 1.0;
        }
        let mut blocks = [Vec::new(), Vec::new()];
        for (slot, nominal) in [false, true].into_iter().enumerate() {
            let normal = self.normal_equations(&layout, &values, nominal);
            let chol = Self::factorize(n, &normal, 0.0).ok_or_else(|| Error::SolverFailure {
                iterations: 0,
                reason: "information matrix is not positive definite".into(),
            })?;
            let x = chol.solve(&rhs);
            blocks[slot] = (0..self.extrinsics.len())
                .map(|e| {
                    let c: Matrix6<f64> = x.fixed_view::<6, 6>(first + 6 * e, 6 * e).into_owned();
                    (c + c.transpose()) * 0.5
                })
                .collect();
        }
        for (e, (eff, nom)) in self
            .extrinsics
            .iter_mut()
            .zip(blocks[0].iter().zip(&blocks[1]))
        {
            let r = e.transform.rotation_matrix();
            let yaw = |c: &Matrix6<f64>| (r * c.fixed_view::<3, 3>(3, 3) * r.transpose())[(2, 2)];
            e.covariance = *eff;
            e.yaw_variance = yaw(eff);
            e.yaw_variance_nominal = yaw(nom);
        }
        Ok(())
    }

    /// Solves the window, refreshes extrinsic marginals and marginalizes
    /// nodes older than the window, publishing their estimates.
    pub fn optimize_window(&mut self) -> Result<WindowEstimate> {
        let report = self.solve()?;
        self.update_extrinsic_covariances()?;
        self.marginalize_old()?;
        Ok(WindowEstimate {
            states: self.states.iter().cloned().collect(),
            extrinsics: self.extrinsics.iter().cloned().collect(),
            report,
        })
    }

    fn yaw_var_at(&self, t: f64) -> f64 {
        self.extrinsics
            .iter()
            .rev()
            .find(|e| e.timestamp <= t)
            .or(self.extrinsics.front())
            .map_or(f64::NAN, |e| e.yaw_variance)
    }

    fn marginalize_old(&mut self) -> Result<()> {
        let cutoff = self.latest_state().timestamp - self.config.window_s;
        let mut drop: Vec<NodeId> = self
            .states
            .iter()
            .take(self.states.len() - 1)
            .take_while(|s| s.timestamp < cutoff)
            .map(|s| NodeId::State(s.id))
            .collect();
        if drop.is_empty() {
            return Ok(());
        }
        let oldest_kept = self.states[drop.len()].timestamp;
        let n_ext = self.extrinsics.len();
        for k in 0..n_ext.saturating_sub(1) {
            if self.extrinsics[k + 1].timestamp <= oldest_kept {
                drop.push(NodeId::Extrinsic(self.extrinsics[k].id));
            } else {
                break;
            }
        }
        for id in &drop {
            if let NodeId::State(i) = id {
                let s = &self.states[i - self.states.front().map_or(0, |f| f.id)];
                let yaw_var_extrinsic = self.yaw_var_at(s.timestamp);
                self.exported.push(Estimate {
                    timestamp: s.timestamp,
                    pose: s.pose,
                    yaw_var_extrinsic,
                });
            }
        }
        self.schur(&drop)?;
        let n_states = drop
            .iter()
            .filter(|d| matches!(d, NodeId::State(_)))
            .count();
        self.states.drain(..n_states);
        self.extrinsics.drain(..drop.len() - n_states);
        Ok(())
    }

    /// Replaces every factor touching `drop` by one linear prior on the
    /// remaining nodes of those factors.
    fn schur(&mut self, drop: &[NodeId]) -> Result<()> {
        let layout = self.layout();
        let values = self.values();
        let (fold, keep): (Vec<Factor>, Vec<Factor>) = std::mem::take(&mut self.factors)
            .into_iter()
            .partition(|f| f.nodes.iter().any(|n| drop.contains(n)));
        self.factors = keep;
        let mut blanket: Vec<NodeId> = fold
            .iter()
            .flat_map(|f| f.nodes.iter().copied())
            .filter(|n| !drop.contains(n))
            .collect();
        blanket.sort();
        blanket.dedup();
        if blanket.is_empty() {
            return Ok(());
        }
        let local: Vec<NodeId> = drop.iter().chain(&blanket).copied().collect();
        let pos = |id: &NodeId| {
            local
                .iter()
                .position(|n| n == id)
                .expect("node in local set")
        };
        let n = 6 * local.len();
        let m = 6 * drop.len();

        let mut h = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        let mut g = DVector::zeros(n);
        for f in &fold {
            let v = self.node_values(&layout, f, &values);
            let raw = f.raw(&v);
            let jac = f.raw_jacobian(&v);
            for (slot, w) in [&f.sqrt_info, &f.nominal_sqrt_info].into_iter().enumerate() {
                let js: Vec<DMatrix<f64>> = jac.iter().map(|j| w * j).collect();
                let mut r = w * &raw;
                if let (Some(e), 0) = (f.offset(), slot) {
                    r += e;
                }
                for (a, ja) in js.iter().enumerate() {
                    let oa = 6 * pos(&f.nodes[a]);
                    if slot == 0 {
                        let mut rows = g.rows_mut(oa, 6);
                        rows += ja.transpose() * &r;
                    }
                    for (b, jb) in js.iter().enumerate() {
                        let ob = 6 * pos(&f.nodes[b]);
                        let mut view = h[slot].view_mut((oa, ob), (6, 6));
                        view += &(ja.transpose() * jb);
                    }
                }
            }
        }

        let mut priors = Vec::with_capacity(2);
        for hs in &h {
            let hmm = hs.view((0, 0), (m, m)).into_owned();
            let hbm = hs.view((m, 0), (n - m, m)).into_owned();
            let hbb = hs.view((m, m), (n - m, n - m)).into_owned();
            let inv = spd_inverse(&hmm)?;
            let k = &hbm * &inv;
            let lambda = &hbb - &k * hbm.transpose();
            let gb = g.rows(m, n - m) - &k * g.rows(0, m);
            priors.push(sqrt_form(&lambda, &gb));
        }
        let (nom_a, _) = priors.pop().expect("two priors");
        let (a, offset) = priors.pop().expect("two priors");
        let lin = blanket.iter().map(|id| values[layout.slot(*id)]).collect();
        self.factors.push(Factor {
            kind: FactorKind::Prior,
            nodes: blanket,
            model: Model::Linear { lin, offset },
            sqrt_info: a,
            nominal_sqrt_info: nom_a,
            gated: false,
        });
        Ok(())
    }

    /// Marginalizes and publishes every remaining state.
    pub fn finish(mut self) -> Vec<Estimate> {
        let states: Vec<StateNode> = self.states.iter().cloned().collect();
        for s in states {
            let yaw_var_extrinsic = self.yaw_var_at(s.timestamp);
            self.exported.push(Estimate {
                timestamp: s.timestamp,
                pose: s.pose,
                yaw_var_extrinsic,
            });
        }
        self.exported
    }

    /// Estimates published since the last call.
    pub fn take_exported(&mut self) -> Vec<Estimate> {
        std::mem::take(&mut self.exported)
    }

    /// Marginal covariance of one active node at the current estimate.
    pub fn marginal_covariance(&self, node: NodeId) -> Result<Matrix6<f64>> {
        let layout = self.layout();
        let values = self.values();
        let slot = layout.slot(node);
        if slot >= values.len() {
            return invalid(format!("{node:?} is not in the window"));
        }
        let n = 6 * values.len();
        let normal = self.normal_equations(&layout, &values, false);
        let chol = Self::factorize(n, &normal, 0.0).ok_or_else(|| Error::SolverFailure {
            iterations: 0,
            reason: "information matrix is not positive definite".into(),
        })?;
        let mut rhs = DMatrix::zeros(n, 6);
        for i in 0..6 {
            rhs[(6 * slot + i, i)] = 1.0;
        }
        let c: Matrix6<f64> = chol
            .solve(&rhs)
            .fixed_view::<6, 6>(6 * slot, 0)
            .into_owned();
        Ok((c + c.transpose()) * 0.5)
    }

    /// Information matrix of the newest linear prior, if any (tests).
    pub fn marginal_prior_information(&self) -> Option<DMatrix<f64>> {
        self.factors
            .iter()
            .rev()
            .find(|f| matches!(f.model, Model::Linear { .. }))
            .map(|f| f.sqrt_info.transpose() * &f.sqrt_info)
    }
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c.inverse());
    }
    // Semidefinite: pseudo-inverse over the supported eigen-directions.
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top > 0.0) {
        return Err(Error::SolverFailure {
            iterations: 0,
            reason: "marginalized block has no information".into(),
        });
    }
    let inv = eig
        .eigenvalues
        .map(|l| if l > 1e-12 * top { 1.0 / l } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// `(A, e)` with `½|A δ + e|² = ½ δᵀΛδ + gᵀδ + const` over the supported
/// eigen-directions of Λ.
fn sqrt_form(lambda: &DMatrix<f64>, g: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let sym = (lambda + lambda.transpose()) * 0.5;
    let n = sym.ncols();
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-15 * top)
        .collect();
    let mut a = DMatrix::zeros(keep.len(), n);
    let mut e = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        a.row_mut(row).copy_from(&(v.transpose() * s));
        e[row] = v.dot(g) / s;
    }
    (a, e)
}
