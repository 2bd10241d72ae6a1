//! Task-space impedance control emitting joint currents.
//!
//! The pipeline is `impedance_force → joint_torques → torques_to_currents`.
//! Gravity is compensated in joint space by default, which keeps the
//! controller usable at configurations where the task inertia is singular.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::actuator::{sign, ActuatorParams, CurrentCommand};
use crate::dynamics::{
    dynamics_terms, forward_kinematics, jacobian, task_space_terms, ComSource, DynamicsError, JointState,
    RobotModel,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("no actuator parameters for joint {joint}")]
    MissingParams { joint: usize },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Where the "+"-part of the impedance law is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedforward {
    /// `f` is the PD part only; `G(q)` is added to the joint torques.
    #[default]
    JointSpaceGravity,
    /// `f = Λẍ_d + μẋ_d + f_g + PD`; only the nullspace share of gravity is
    /// added in joint space. Needs a non-singular task inertia.
    TaskSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceConfig {
    /// `K_d`, N/m.
    pub stiffness: Matrix3<f64>,
    /// `D_d`, N·s/m.
    pub damping: Matrix3<f64>,
    /// Maximum position error norm, m. `None` disables the clamp.
    pub error_clamp: Option<f64>,
    pub nullspace_posture: DVector<f64>,
    /// N·m/rad.
    pub nullspace_gain: f64,
    /// N·m·s/rad.
    pub nullspace_damping: f64,
    pub feedforward: Feedforward,
}

impl ImpedanceConfig {
    pub const DEFAULT_STIFFNESS: f64 = 40.0;
    pub const DEFAULT_DAMPING: f64 = 3.0;
    pub const DEFAULT_ERROR_CLAMP: f64 = 0.1;

    pub fn new(posture: DVector<f64>) -> Self {
        Self {
            stiffness: Matrix3::from_diagonal_element(Self::DEFAULT_STIFFNESS),
            damping: Matrix3::from_diagonal_element(Self::DEFAULT_DAMPING),
            error_clamp: None,
            nullspace_posture: posture,
            nullspace_gain: 1.0,
            nullspace_damping: 0.1,
            feedforward: Feedforward::JointSpaceGravity,
        }
    }

    pub fn with_gains(mut self, stiffness: f64, damping: f64) -> Self {
        self.stiffness = Matrix3::from_diagonal_element(stiffness);
        self.damping = Matrix3::from_diagonal_element(damping);
        self
    }

    pub fn with_error_clamp(mut self, clamp: Option<f64>) -> Self {
        self.error_clamp = clamp;
        self
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let psd = |m: &Matrix3<f64>| {
            (m - m.transpose()).abs().max() < 1e-9 && m.symmetric_eigenvalues().iter().all(|&v| v >= -1e-12)
        };
        if !psd(&self.stiffness) {
            return Err(ControlError::InvalidConfig("stiffness must be symmetric positive semi-definite"));
        }
        if !psd(&self.damping) {
            return Err(ControlError::InvalidConfig("damping must be symmetric positive semi-definite"));
        }
        if let Some(c) = self.error_clamp {
            if !(c > 0.0) {
                return Err(ControlError::InvalidConfig("error clamp must be positive"));
            }
        }
        if !(self.nullspace_gain >= 0.0 && self.nullspace_damping >= 0.0) {
            return Err(ControlError::InvalidConfig("nullspace gains must be non-negative"));
        }
        Ok(())
    }
}

/// Desired end-effector motion in the arm frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTarget {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl TaskTarget {
    pub fn fixed(position: Vector3<f64>) -> Self {
        Self { position, velocity: Vector3::zeros(), acceleration: Vector3::zeros() }
    }
}

/// Output of the impedance law.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskForce {
    pub force: Vector3<f64>,
    /// Gravity torque still to be added in joint space.
    pub joint_gravity: DVector<f64>,
}

/// Position error `x - x_d`, shortened to `clamp` if it is longer.
pub fn clamp_error(error: Vector3<f64>, clamp: Option<f64>) -> Vector3<f64> {
    match clamp {
        Some(c) if error.norm() > c => error * (c / error.norm()),
        _ => error,
    }
}

/// Impedance force `f = Λẍ_d + μẋ_d + f_g - K_d e - D_d ė`.
///
/// `model` is the controller's (nominal) model.
pub fn impedance_force(
    model: &RobotModel,
    state: &JointState,
    target: &TaskTarget,
    config: &ImpedanceConfig,
) -> Result<TaskForce, ControlError> {
    let x = forward_kinematics(model, state)?.position;
    let jac = jacobian(model, state)?;
    let e = clamp_error(x - target.position, config.error_clamp);
    let e_dot = &jac * &state.dq - target.velocity;
    let pd = -config.stiffness * e - config.damping * e_dot;
    match config.feedforward {
        Feedforward::JointSpaceGravity => {
            let terms = crate::dynamics::gravity_torque(model, state, ComSource::Nominal)?;
            Ok(TaskForce { force: pd, joint_gravity: terms })
        }
        Feedforward::TaskSpace => {
            let ts = task_space_terms(model, state, ComSource::Nominal)?;
            let g = crate::dynamics::gravity_torque(model, state, ComSource::Nominal)?;
            let force = ts.lambda * target.acceleration + ts.mu * target.velocity + ts.gravity_force + pd;
            let remainder = g - jac.transpose() * ts.gravity_force;
            Ok(TaskForce { force, joint_gravity: remainder })
        }
    }
}

/// Damping of the weighted pseudoinverse used by the nullspace projector.
pub const PROJECTOR_DAMPING: f64 = 1e-6;

/// Nullspace projector `N = I - Jᵀ J̄ᵀ` with the inertia-weighted damped
/// pseudoinverse `J̄ = M⁻¹Jᵀ(JM⁻¹Jᵀ + λ²I)⁻¹`.
///
/// Torques passed through `N` produce no end-effector acceleration. Falls
/// back to unit weighting if `M` cannot be inverted.
pub fn nullspace_projector(model: &RobotModel, state: &JointState) -> Result<DMatrix<f64>, ControlError> {
    let n = model.n_joints();
    let m = crate::dynamics::mass_matrix(model, state.q.as_slice(), ComSource::Nominal);
    let jac = jacobian(model, state)?;
    let jac = DMatrix::from_column_slice(3, n, jac.as_slice());
    let weight = m.try_inverse().unwrap_or_else(|| DMatrix::identity(n, n));
    let inner = &jac * &weight * jac.transpose() + DMatrix::identity(3, 3) * (PROJECTOR_DAMPING * PROJECTOR_DAMPING);
    let inner_inv = inner
        .try_inverse()
        .ok_or(ControlError::Dynamics(DynamicsError::SingularTaskInertia))?;
    let jbar = &weight * jac.transpose() * inner_inv;
    Ok(DMatrix::identity(n, n) - jac.transpose() * jbar.transpose())
}

/// Secondary posture task `τ₂ = -k_n (q - q_posture) - d_n q̇`.
pub fn posture_torque(state: &JointState, config: &ImpedanceConfig) -> DVector<f64> {
    -(&state.q - &config.nullspace_posture) * config.nullspace_gain - &state.dq * config.nullspace_damping
}

/// `τ = Jᵀ f + N τ₂` plus whatever gravity is left to compensate in joint space.
pub fn joint_torques(
    model: &RobotModel,
    state: &JointState,
    force: &TaskForce,
    config: &ImpedanceConfig,
) -> Result<DVector<f64>, ControlError> {
    model.check_dim(config.nullspace_posture.len())?;
    let jac = jacobian(model, state)?;
    let projector = nullspace_projector(model, state)?;
    Ok(jac.transpose() * force.force + projector * posture_torque(state, config) + &force.joint_gravity)
}

/// Blended friction compensation for one joint:
/// `c = rτ + l(min(|q̇|/t, 1)(sign q̇ - sign τ) + sign τ)`.
pub fn torque_to_current(params: &ActuatorParams, torque: f64, dq: f64) -> f64 {
    let l = params.friction_loss.abs();
    let blend = (dq.abs() / params.vel_threshold).min(1.0);
    let st = sign(torque);
    params.ratio * torque + l * (blend * (sign(dq) - st) + st)
}

pub fn torques_to_currents(
    torques: &DVector<f64>,
    dq: &DVector<f64>,
    params: &[ActuatorParams],
) -> Result<CurrentCommand, ControlError> {
    let current = (0..torques.len())
        .map(|j| {
            let p = params.get(j).ok_or(ControlError::MissingParams { joint: j })?;
            Ok(torque_to_current(p, torques[j], dq[j]))
        })
        .collect::<Result<Vec<_>, ControlError>>()?;
    Ok(CurrentCommand { current })
}

/// Joint torques of the impedance law, before conversion to currents.
pub fn impedance_torques(
    model: &RobotModel,
    state: &JointState,
    target: &TaskTarget,
    config: &ImpedanceConfig,
) -> Result<DVector<f64>, ControlError> {
    let force = impedance_force(model, state, target, config)?;
    joint_torques(model, state, &force, config)
}

/// One control tick of the current-based impedance controller.
pub fn control_step(
    model: &RobotModel,
    state: &JointState,
    target: &TaskTarget,
    config: &ImpedanceConfig,
    params: &[ActuatorParams],
) -> Result<CurrentCommand, ControlError> {
    let tau = impedance_torques(model, state, target, config)?;
    torques_to_currents(&tau, &state.dq, params)
}

/// A stateful arm controller driven by the simulation loop.
pub trait ArmController {
    fn currents(&mut self, state: &JointState, target: &TaskTarget, dt: f64) -> Result<CurrentCommand, ControlError>;
}

/// The compliant controller: [`control_step`] with fixed model, gains and
/// calibrated actuator parameters.
#[derive(Debug, Clone)]
pub struct ImpedanceController {
    pub model: RobotModel,
    pub config: ImpedanceConfig,
    pub params: Vec<ActuatorParams>,
}

impl ArmController for ImpedanceController {
    fn currents(&mut self, state: &JointState, target: &TaskTarget, _dt: f64) -> Result<CurrentCommand, ControlError> {
        control_step(&self.model, state, target, &self.config, &self.params)
    }
}

/// Gains of the stiff, non-compliant velocity controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffGains {
    /// Task-space position feedback, 1/s.
    pub task_gain: f64,
    /// Joint servo bandwidth, rad/s.
    pub bandwidth: f64,
    /// Posture feedback in the nullspace, 1/s.
    pub posture_gain: f64,
}

impl Default for StiffGains {
    fn default() -> Self {
        Self { task_gain: 20.0, bandwidth: 30.0, posture_gain: 1.0 }
    }
}

/// The position/velocity controller an arm ships with: task velocities are
/// resolved through a damped pseudoinverse and tracked by a computed-torque
/// joint servo with integral action. It makes no attempt to be compliant.
#[derive(Debug, Clone)]
pub struct StiffVelocityController {
    pub model: RobotModel,
    pub params: Vec<ActuatorParams>,
    pub posture: DVector<f64>,
    pub gains: StiffGains,
    reference: Option<DVector<f64>>,
    integral: DVector<f64>,
}

impl StiffVelocityController {
    pub fn new(model: RobotModel, params: Vec<ActuatorParams>, posture: DVector<f64>, gains: StiffGains) -> Self {
        let n = model.n_joints();
        Self { model, params, posture, gains, reference: None, integral: DVector::zeros(n) }
    }
}

impl ArmController for StiffVelocityController {
    fn currents(&mut self, state: &JointState, target: &TaskTarget, dt: f64) -> Result<CurrentCommand, ControlError> {
        let n = self.model.n_joints();
        let x = forward_kinematics(&self.model, state)?.position;
        let jac = jacobian(&self.model, state)?;
        let jac = DMatrix::from_column_slice(3, n, jac.as_slice());
        let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * 1e-6;
        let pinv = jac.transpose() * jjt.try_inverse().ok_or(ControlError::Dynamics(DynamicsError::SingularTaskInertia))?;
        let task_vel = target.velocity + (target.position - x) * self.gains.task_gain;
        let task_vel = DVector::from_column_slice(task_vel.as_slice());
        let null = DMatrix::identity(n, n) - &pinv * &jac;
        let dq_cmd = &pinv * task_vel + null * (&self.posture - &state.q) * self.gains.posture_gain;

        let reference = self.reference.get_or_insert_with(|| state.q.clone());
        *reference += &dq_cmd * dt;
        let err = &*reference - &state.q;
        self.integral += &err * dt;

        let w = self.gains.bandwidth;
        let accel = &err * (3.0 * w * w) + (&dq_cmd - &state.dq) * (3.0 * w) + &self.integral * (w * w * w);
        let terms = dynamics_terms(&self.model, state, ComSource::Nominal)?;
        let tau = terms.mass_matrix * accel + terms.coriolis_matrix * &state.dq + terms.gravity_torque;
        torques_to_currents(&tau, &state.dq, &self.params)
    }
}
