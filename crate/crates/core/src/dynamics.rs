//! Serial-chain kinematics and rigid-body dynamics for single-axis revolute arms.
//!
//! Every link owns a frame whose origin is its joint. At `q = 0` the link
//! frame is aligned with its parent; the link extends along its local `+x`
//! axis by `length`, so joint `i + 1` sits at `(length_i, 0, 0)` in link `i`
//! and the end-effector sits at the tip of the last link.
//!
//! The joint-space model is `M(q) q̈ + C(q, q̇) q̇ + G(q) = τ`, where `G` is the
//! gradient of the potential energy (the torque the actuators must deliver to
//! hold the arm still).

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Rotation3, Unit, Vector3};
use thiserror::Error;

/// Errors raised by the model and the dynamics routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("state has {got} joints, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("link {link}: {reason}")]
    InvalidLink { link: usize, reason: &'static str },
    #[error("gravity magnitude {0} m/s^2 outside [0, 20]")]
    InvalidGravity(f64),
    #[error("model has no links")]
    EmptyModel,
    #[error("task-space inertia is singular at this configuration")]
    SingularTaskInertia,
    #[error("joint-space mass matrix is not invertible")]
    SingularMassMatrix,
}

/// Which center-of-mass locations to evaluate a model with.
///
/// The controller only ever knows the nominal (possibly corrected) locations;
/// the simulator evaluates the true ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComSource {
    Nominal,
    True,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    /// Distance from this joint to the next one along local `+x`, meters.
    pub length: f64,
    pub mass: f64,
    /// Modelled COM in the link frame.
    pub com_offset: Vector3<f64>,
    /// Ground-truth COM in the link frame (simulator only).
    pub com_offset_true: Vector3<f64>,
    /// Joint rotation axis, unit length, expressed in the parent frame.
    pub joint_axis: Vector3<f64>,
    /// Principal moments of inertia about the COM, link frame axes, kg·m².
    pub inertia: Vector3<f64>,
    /// Reflected rotor inertia added on the joint diagonal, kg·m².
    pub armature: f64,
}

impl LinkModel {
    /// A point-mass link whose true COM equals the nominal one.
    pub fn new(length: f64, mass: f64, com_offset: Vector3<f64>, joint_axis: Vector3<f64>) -> Self {
        Self {
            length,
            mass,
            com_offset,
            com_offset_true: com_offset,
            joint_axis,
            inertia: Vector3::zeros(),
            armature: 0.0,
        }
    }

    pub fn with_true_com(mut self, com: Vector3<f64>) -> Self {
        self.com_offset_true = com;
        self
    }

    pub fn with_inertia(mut self, principal: Vector3<f64>) -> Self {
        self.inertia = principal;
        self
    }

    pub fn with_armature(mut self, armature: f64) -> Self {
        self.armature = armature;
        self
    }

    pub fn com(&self, source: ComSource) -> &Vector3<f64> {
        match source {
            ComSource::Nominal => &self.com_offset,
            ComSource::True => &self.com_offset_true,
        }
    }

    fn validate(&self, link: usize) -> Result<(), DynamicsError> {
        let bad = |reason| Err(DynamicsError::InvalidLink { link, reason });
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return bad("mass must be positive");
        }
        if !(self.length >= 0.0) || !self.length.is_finite() {
            return bad("length must be non-negative");
        }
        if (self.joint_axis.norm() - 1.0).abs() > 1e-9 {
            return bad("joint axis must have unit norm");
        }
        if self.inertia.iter().any(|&v| !(v >= 0.0)) || !(self.armature >= 0.0) {
            return bad("inertia and armature must be non-negative");
        }
        if !self.com_offset.iter().chain(self.com_offset_true.iter()).all(|v| v.is_finite()) {
            return bad("COM offsets must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    links: Vec<LinkModel>,
    gravity: Vector3<f64>,
}

impl RobotModel {
    pub fn new(links: Vec<LinkModel>, gravity: Vector3<f64>) -> Result<Self, DynamicsError> {
        if links.is_empty() {
            return Err(DynamicsError::EmptyModel);
        }
        for (i, link) in links.iter().enumerate() {
            link.validate(i)?;
        }
        let g = gravity.norm();
        if !(0.0..=20.0).contains(&g) {
            return Err(DynamicsError::InvalidGravity(g));
        }
        Ok(Self { links, gravity })
    }

    /// Standard gravity, 9.81 m/s² along `-z`.
    pub fn standard_gravity() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -9.81)
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkModel] {
        &self.links
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn set_gravity(&mut self, gravity: Vector3<f64>) -> Result<(), DynamicsError> {
        let g = gravity.norm();
        if !(0.0..=20.0).contains(&g) {
            return Err(DynamicsError::InvalidGravity(g));
        }
        self.gravity = gravity;
        Ok(())
    }

    /// Overwrite the nominal COM of one link.
    pub fn set_com_offset(&mut self, link: usize, com: Vector3<f64>) {
        self.links[link].com_offset = com;
    }

    /// Overwrite the ground-truth COM of one link.
    pub fn set_true_com_offset(&mut self, link: usize, com: Vector3<f64>) {
        self.links[link].com_offset_true = com;
    }

    /// A copy whose nominal COMs are replaced by the true ones.
    pub fn with_true_as_nominal(&self) -> Self {
        let mut out = self.clone();
        for link in &mut out.links {
            link.com_offset = link.com_offset_true;
        }
        out
    }

    pub fn check_dim(&self, len: usize) -> Result<(), DynamicsError> {
        if len != self.n_joints() {
            return Err(DynamicsError::DimensionMismatch { expected: self.n_joints(), got: len });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub dq: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, dq: DVector<f64>) -> Result<Self, DynamicsError> {
        if q.len() != dq.len() {
            return Err(DynamicsError::DimensionMismatch { expected: q.len(), got: dq.len() });
        }
        Ok(Self { q, dq })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, dq: DVector::zeros(n) }
    }

    pub fn from_slices(q: &[f64], dq: &[f64]) -> Result<Self, DynamicsError> {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(dq))
    }

    pub fn n_joints(&self) -> usize {
        self.q.len()
    }

    fn check(&self, model: &RobotModel) -> Result<(), DynamicsError> {
        model.check_dim(self.q.len())?;
        model.check_dim(self.dq.len())
    }
}

/// End-effector pose in the arm base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub position: Vector3<f64>,
    pub orientation: Rotation3<f64>,
}

/// Per-link frames of the chain at one configuration, arm base frame.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub rotations: Vec<Rotation3<f64>>,
    /// Joint `i` position.
    pub origins: Vec<Vector3<f64>>,
    /// Joint `i` axis.
    pub axes: Vec<Vector3<f64>>,
    pub tip: Vector3<f64>,
}

impl ChainFrames {
    pub fn compute(model: &RobotModel, q: &[f64]) -> Self {
        let n = model.n_joints();
        let mut rotations = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut rot = Rotation3::identity();
        let mut origin = Vector3::zeros();
        for (i, link) in model.links.iter().enumerate() {
            if i > 0 {
                origin += rot * Vector3::new(model.links[i - 1].length, 0.0, 0.0);
            }
            let axis = rot * link.joint_axis;
            rot *= Rotation3::from_axis_angle(&Unit::new_unchecked(link.joint_axis), q[i]);
            rotations.push(rot);
            origins.push(origin);
            axes.push(axis);
        }
        let last = &model.links[n - 1];
        let tip = origin + rot * Vector3::new(last.length, 0.0, 0.0);
        Self { rotations, origins, axes, tip }
    }

    /// COM of link `i` in the arm frame.
    pub fn com(&self, model: &RobotModel, i: usize, source: ComSource) -> Vector3<f64> {
        self.origins[i] + self.rotations[i] * model.links[i].com(source)
    }
}

pub fn forward_kinematics(model: &RobotModel, state: &JointState) -> Result<EePose, DynamicsError> {
    model.check_dim(state.q.len())?;
    let frames = ChainFrames::compute(model, state.q.as_slice());
    let orientation = *frames.rotations.last().expect("non-empty model");
    Ok(EePose { position: frames.tip, orientation })
}

/// End-effector position only.
pub fn ee_position(model: &RobotModel, q: &[f64]) -> Vector3<f64> {
    ChainFrames::compute(model, q).tip
}

fn jacobian_from_frames(frames: &ChainFrames) -> Matrix3xX<f64> {
    let n = frames.axes.len();
    let mut jac = Matrix3xX::zeros(n);
    for i in 0..n {
        jac.set_column(i, &frames.axes[i].cross(&(frames.tip - frames.origins[i])));
    }
    jac
}

/// Translational Jacobian of the end-effector, `ẋ = J q̇`.
pub fn jacobian(model: &RobotModel, state: &JointState) -> Result<Matrix3xX<f64>, DynamicsError> {
    model.check_dim(state.q.len())?;
    Ok(jacobian_from_frames(&ChainFrames::compute(model, state.q.as_slice())))
}

/// Joint angular velocities `ω_i` (link frames) and the velocity of every
/// joint origin, for the current `q̇`.
struct ChainVelocities {
    omega: Vec<Vector3<f64>>,
    origin_vel: Vec<Vector3<f64>>,
}

impl ChainVelocities {
    fn compute(frames: &ChainFrames, dq: &[f64]) -> Self {
        let n = frames.axes.len();
        let mut omega = Vec::with_capacity(n);
        let mut origin_vel = Vec::with_capacity(n);
        let mut w = Vector3::zeros();
        for i in 0..n {
            let v = Self::point_velocity_upto(frames, dq, &frames.origins[i], i);
            origin_vel.push(v);
            w += frames.axes[i] * dq[i];
            omega.push(w);
        }
        Self { omega, origin_vel }
    }

    /// Velocity of a point rigidly attached to link `body`.
    fn point_velocity(frames: &ChainFrames, dq: &[f64], p: &Vector3<f64>, body: usize) -> Vector3<f64> {
        Self::point_velocity_upto(frames, dq, p, body + 1)
    }

    fn point_velocity_upto(frames: &ChainFrames, dq: &[f64], p: &Vector3<f64>, upto: usize) -> Vector3<f64> {
        (0..upto).fold(Vector3::zeros(), |acc, k| {
            acc + frames.axes[k].cross(&(p - frames.origins[k])) * dq[k]
        })
    }
}

/// Time derivative of the end-effector Jacobian along the current velocity.
pub fn jacobian_dot(model: &RobotModel, state: &JointState) -> Result<Matrix3xX<f64>, DynamicsError> {
    state.check(model)?;
    let n = model.n_joints();
    let frames = ChainFrames::compute(model, state.q.as_slice());
    let dq = state.dq.as_slice();
    let vel = ChainVelocities::compute(&frames, dq);
    let tip_vel = ChainVelocities::point_velocity(&frames, dq, &frames.tip, n - 1);
    let mut jd = Matrix3xX::zeros(n);
    for k in 0..n {
        let axis_dot = vel.omega[k].cross(&frames.axes[k]);
        let col = axis_dot.cross(&(frames.tip - frames.origins[k]))
            + frames.axes[k].cross(&(tip_vel - vel.origin_vel[k]));
        jd.set_column(k, &col);
    }
    Ok(jd)
}

/// Total mass and COM (arm frame) of links `first..n`.
pub fn aggregate_com(model: &RobotModel, frames: &ChainFrames, first: usize, source: ComSource) -> (f64, Vector3<f64>) {
    let mut mass = 0.0;
    let mut moment = Vector3::zeros();
    for i in first..model.n_joints() {
        let m = model.links[i].mass;
        mass += m;
        moment += frames.com(model, i, source) * m;
    }
    (mass, moment / mass)
}

fn gravity_from_frames(model: &RobotModel, frames: &ChainFrames, source: ComSource) -> DVector<f64> {
    let n = model.n_joints();
    let g = model.gravity;
    let mut out = DVector::zeros(n);
    let mut mass = 0.0;
    let mut moment = Vector3::zeros();
    for j in (0..n).rev() {
        let m = model.links[j].mass;
        mass += m;
        moment += frames.com(model, j, source) * m;
        // G_j = dV/dq_j = -z_j · Σ (p_i - o_j) × m_i g
        let lever = moment - frames.origins[j] * mass;
        out[j] = -frames.axes[j].dot(&lever.cross(&g));
    }
    out
}

/// Generalized gravity term `G(q) = ∂V/∂q`.
///
/// This is the torque the actuators must deliver to hold the arm static. For
/// a single joint carrying a point mass `m` on an arm `a` it equals
/// `m·g·a·sin(θ)` with `θ` measured from the downward vertical.
pub fn gravity_torque(model: &RobotModel, state: &JointState, source: ComSource) -> Result<DVector<f64>, DynamicsError> {
    model.check_dim(state.q.len())?;
    let frames = ChainFrames::compute(model, state.q.as_slice());
    Ok(gravity_from_frames(model, &frames, source))
}

/// Total potential energy `V = -Σ m_i g · p_i`.
pub fn potential_energy(model: &RobotModel, q: &[f64], source: ComSource) -> f64 {
    let frames = ChainFrames::compute(model, q);
    (0..model.n_joints())
        .map(|i| -model.links[i].mass * model.gravity.dot(&frames.com(model, i, source)))
        .sum()
}

fn world_inertia(model: &RobotModel, frames: &ChainFrames, i: usize) -> Matrix3<f64> {
    let r = frames.rotations[i].matrix();
    r * Matrix3::from_diagonal(&model.links[i].inertia) * r.transpose()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    v.cross_matrix()
}

/// Composite-rigid-body mass matrix.
fn mass_matrix_from_frames(model: &RobotModel, frames: &ChainFrames, source: ComSource) -> DMatrix<f64> {
    let n = model.n_joints();
    // Composite body j = links j..n: mass, COM and rotational inertia about its COM.
    let mut comp_mass = alloc::vec![0.0; n];
    let mut comp_com = alloc::vec![Vector3::zeros(); n];
    let mut comp_inertia = alloc::vec![Matrix3::zeros(); n];
    let mut mass = 0.0;
    let mut moment = Vector3::zeros();
    let mut origin_inertia = Matrix3::zeros();
    for j in (0..n).rev() {
        let m = model.links[j].mass;
        let p = frames.com(model, j, source);
        mass += m;
        moment += p * m;
        origin_inertia += world_inertia(model, frames, j)
            + (Matrix3::identity() * p.norm_squared() - p * p.transpose()) * m;
        let c = moment / mass;
        comp_mass[j] = mass;
        comp_com[j] = c;
        comp_inertia[j] = origin_inertia - (Matrix3::identity() * c.norm_squared() - c * c.transpose()) * mass;
    }

    let mut mm = DMatrix::zeros(n, n);
    for j in 0..n {
        let zj = frames.axes[j];
        let c = comp_com[j];
        let spin = comp_inertia[j] * zj;
        let momentum = zj.cross(&(c - frames.origins[j])) * comp_mass[j];
        for i in 0..=j {
            let zi = frames.axes[i];
            let v = zi.dot(&(spin + (c - frames.origins[i]).cross(&momentum)));
            mm[(i, j)] = v;
            mm[(j, i)] = v;
        }
        mm[(j, j)] += model.links[j].armature;
    }
    mm
}

/// Coriolis/centrifugal matrix built so that `Ṁ - 2C` is skew-symmetric.
///
/// Forward pass for link velocities, then per-link accumulation of
/// `m Jvᵀ J̇v + Jωᵀ I J̇ω + Jωᵀ [ω]× I Jω`.
fn coriolis_from_frames(model: &RobotModel, frames: &ChainFrames, dq: &[f64], source: ComSource) -> DMatrix<f64> {
    let n = model.n_joints();
    let vel = ChainVelocities::compute(frames, dq);
    let mut cm = DMatrix::zeros(n, n);
    let mut jv = Matrix3xX::zeros(n);
    let mut jv_dot = Matrix3xX::zeros(n);
    let mut jw = Matrix3xX::zeros(n);
    let mut jw_dot = Matrix3xX::zeros(n);
    for i in 0..n {
        let p = frames.com(model, i, source);
        let p_vel = ChainVelocities::point_velocity(frames, dq, &p, i);
        for k in 0..=i {
            let z = frames.axes[k];
            let z_dot = vel.omega[k].cross(&z);
            let r = p - frames.origins[k];
            jv.set_column(k, &z.cross(&r));
            jv_dot.set_column(k, &(z_dot.cross(&r) + z.cross(&(p_vel - vel.origin_vel[k]))));
            jw.set_column(k, &z);
            jw_dot.set_column(k, &z_dot);
        }
        let m = model.links[i].mass;
        let iw = world_inertia(model, frames, i);
        let jv_i = jv.columns(0, i + 1);
        let jw_i = jw.columns(0, i + 1);
        let block = jv_i.transpose() * jv_dot.columns(0, i + 1) * m
            + jw_i.transpose() * (iw * jw_dot.columns(0, i + 1))
            + jw_i.transpose() * (skew(&vel.omega[i]) * iw * jw_i);
        let mut view = cm.view_mut((0, 0), (i + 1, i + 1));
        view += block;
    }
    cm
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass_matrix: DMatrix<f64>,
    pub coriolis_matrix: DMatrix<f64>,
    pub gravity_torque: DVector<f64>,
}

pub fn dynamics_terms(model: &RobotModel, state: &JointState, source: ComSource) -> Result<DynamicsTerms, DynamicsError> {
    state.check(model)?;
    let frames = ChainFrames::compute(model, state.q.as_slice());
    Ok(DynamicsTerms {
        mass_matrix: mass_matrix_from_frames(model, &frames, source),
        coriolis_matrix: coriolis_from_frames(model, &frames, state.dq.as_slice(), source),
        gravity_torque: gravity_from_frames(model, &frames, source),
    })
}

pub fn coriolis_matrix(model: &RobotModel, q: &[f64], dq: &[f64], source: ComSource) -> DMatrix<f64> {
    coriolis_from_frames(model, &ChainFrames::compute(model, q), dq, source)
}

pub fn mass_matrix(model: &RobotModel, q: &[f64], source: ComSource) -> DMatrix<f64> {
    mass_matrix_from_frames(model, &ChainFrames::compute(model, q), source)
}

/// Kinetic energy `½ q̇ᵀ M q̇`.
pub fn kinetic_energy(model: &RobotModel, state: &JointState, source: ComSource) -> f64 {
    let m = mass_matrix(model, state.q.as_slice(), source);
    0.5 * state.dq.dot(&(m * &state.dq))
}

/// Operational-space counterparts of the joint-space terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpaceTerms {
    /// Cartesian inertia `Λ = (J M⁻¹ Jᵀ)⁻¹`.
    pub lambda: Matrix3<f64>,
    /// Cartesian Coriolis matrix `μ = Λ (J M⁻¹ C - J̇) J̄`.
    pub mu: Matrix3<f64>,
    /// Cartesian gravity force `f_g = J̄ᵀ G`.
    pub gravity_force: Vector3<f64>,
    /// Dynamically consistent generalized inverse `J̄ = M⁻¹ Jᵀ Λ`.
    pub jacobian_inverse: DMatrix<f64>,
}

pub fn task_space_terms(model: &RobotModel, state: &JointState, source: ComSource) -> Result<TaskSpaceTerms, DynamicsError> {
    let terms = dynamics_terms(model, state, source)?;
    let jac = jacobian(model, state)?;
    let jd = jacobian_dot(model, state)?;
    let m_inv = terms.mass_matrix.clone().try_inverse().ok_or(DynamicsError::SingularMassMatrix)?;
    let jac_d = DMatrix::from_column_slice(3, jac.ncols(), jac.as_slice());
    let jd_d = DMatrix::from_column_slice(3, jd.ncols(), jd.as_slice());
    let lambda_inv = &jac_d * &m_inv * jac_d.transpose();
    let lambda_inv3 = Matrix3::from_iterator(lambda_inv.iter().copied());
    // Reject near-singular configurations relative to the matrix scale.
    let scale = lambda_inv3.norm().max(f64::MIN_POSITIVE);
    if lambda_inv3.determinant().abs() < 1e-12 * scale * scale * scale {
        return Err(DynamicsError::SingularTaskInertia);
    }
    let lambda = lambda_inv3.try_inverse().ok_or(DynamicsError::SingularTaskInertia)?;
    let lambda_d = DMatrix::from_column_slice(3, 3, lambda.as_slice());
    let jbar = &m_inv * jac_d.transpose() * &lambda_d;
    let mu_d = &lambda_d * (&jac_d * &m_inv * &terms.coriolis_matrix - jd_d) * &jbar;
    let fg = jbar.transpose() * &terms.gravity_torque;
    Ok(TaskSpaceTerms {
        lambda,
        mu: Matrix3::from_iterator(mu_d.iter().copied()),
        gravity_force: Vector3::new(fg[0], fg[1], fg[2]),
        jacobian_inverse: jbar,
    })
}

/// Damped least-squares inverse kinematics for the end-effector position.
///
/// Returns the final configuration and the remaining position error norm.
pub fn inverse_kinematics(model: &RobotModel, target: &Vector3<f64>, seed: &[f64], iterations: usize) -> (DVector<f64>, f64) {
    let mut q = DVector::from_column_slice(seed);
    let damping = 1e-4;
    for _ in 0..iterations {
        let frames = ChainFrames::compute(model, q.as_slice());
        let err = target - frames.tip;
        if err.norm() < 1e-12 {
            break;
        }
        let jac = jacobian_from_frames(&frames);
        let jjt = &jac * jac.transpose() + Matrix3::identity() * damping;
        let Some(inv) = jjt.try_inverse() else { break };
        let step = jac.transpose() * (inv * err);
        q += DVector::from_column_slice(step.as_slice());
    }
    let residual = (target - ee_position(model, q.as_slice())).norm();
    (q, residual)
}
