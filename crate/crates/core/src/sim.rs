//! Time stepping of the true robot: arm rigid-body dynamics with Coulomb
//! friction in the actuators, a first-order base velocity plant, a spring
//! tether and scripted external forces.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::actuator::{sign, ActuatorParams, CurrentCommand};
use crate::base::BasePose;
use crate::dynamics::{
    dynamics_terms, ee_position, gravity_torque, jacobian, mass_matrix, ComSource, DynamicsError, JointState,
    RobotModel,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("time step {0} s outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("expected {expected} currents, got {got}")]
    CurrentCount { expected: usize, got: usize },
    #[error("non-finite state at t = {time} s: q = {q:?}, dq = {dq:?}, currents = {currents:?}")]
    NonFinite { time: f64, q: Vec<f64>, dq: Vec<f64>, currents: Vec<f64> },
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub joints: JointState,
    pub base: BasePose,
    /// Base velocity in the world frame, m/s.
    pub base_velocity: Vector2<f64>,
    /// Externally applied end-effector force in the world frame, N.
    pub ext_ee_force: Vector3<f64>,
    pub ext_joint_torques: DVector<f64>,
}

impl SimState {
    pub fn at_rest(q: DVector<f64>, base: BasePose) -> Self {
        let n = q.len();
        Self {
            time: 0.0,
            joints: JointState::at_rest(q),
            base,
            base_velocity: Vector2::zeros(),
            ext_ee_force: Vector3::zeros(),
            ext_joint_torques: DVector::zeros(n),
        }
    }

    /// `joints.dq` is the average velocity over the step of length `dt`
    /// that ended at `joints.q`; this pairs it with the configuration at the
    /// middle of that step, where energy and momentum are second-order
    /// accurate.
    pub fn step_midpoint(&self, dt: f64) -> JointState {
        JointState { q: &self.joints.q - &self.joints.dq * (0.5 * dt), dq: self.joints.dq.clone() }
    }
}

/// A rope with a spring that only pulls once the end-effector is further
/// than `free_length` from the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpringTether {
    pub anchor: Vector3<f64>,
    pub free_length: f64,
    /// N/m.
    pub stiffness: f64,
}

impl SpringTether {
    pub fn new(anchor: Vector3<f64>, free_length: f64, stiffness: f64) -> Result<Self, SimError> {
        if !(free_length > 0.0) {
            return Err(SimError::InvalidConfig("tether free length must be positive"));
        }
        if !(stiffness >= 0.0) {
            return Err(SimError::InvalidConfig("tether stiffness must be non-negative"));
        }
        Ok(Self { anchor, free_length, stiffness })
    }
}

pub fn spring_force(ee_world: &Vector3<f64>, tether: &SpringTether) -> Vector3<f64> {
    let d = tether.anchor - ee_world;
    let dist = d.norm();
    if dist <= tether.free_length {
        return Vector3::zeros();
    }
    d * (tether.stiffness * (dist - tether.free_length) / dist)
}

/// Solve `M q̈ = b + τ_f` where `τ_f` is Coulomb friction bounded by `limit`.
///
/// Joints that are (nearly) at rest, or that would reverse within this step,
/// are first assumed to stick. Sticking joints whose required friction
/// exceeds the limit are released one at a time, worst first, with friction
/// saturated in the direction it was needed.
pub fn coulomb_accelerations(
    mass: &DMatrix<f64>,
    bias: &DVector<f64>,
    dq: &DVector<f64>,
    limit: &[f64],
    band: &[f64],
    dt: f64,
) -> Option<DVector<f64>> {
    let n = bias.len();
    if limit.iter().all(|&l| l == 0.0) {
        return mass.clone().cholesky().map(|c| c.solve(bias));
    }
    let mut friction = DVector::from_fn(n, |j, _| -sign(dq[j]) * limit[j]);
    let mut stuck: Vec<bool> = (0..n).map(|j| limit[j] > 0.0 && dq[j].abs() < band[j]).collect();
    for j in 0..n {
        if stuck[j] {
            friction[j] = 0.0;
        }
    }
    let free_accel = mass.clone().cholesky()?.solve(&(bias + &friction));
    for j in 0..n {
        if !stuck[j] && limit[j] > 0.0 && sign(dq[j] + free_accel[j] * dt) != sign(dq[j]) {
            stuck[j] = true;
        }
    }

    loop {
        let s: Vec<usize> = (0..n).filter(|&j| stuck[j]).collect();
        if s.is_empty() {
            return mass.clone().cholesky().map(|c| c.solve(&(bias + &friction)));
        }
        let f: Vec<usize> = (0..n).filter(|&j| !stuck[j]).collect();
        let mut accel = DVector::zeros(n);
        for &j in &s {
            accel[j] = -dq[j] / dt;
        }
        if !f.is_empty() {
            let mff = DMatrix::from_fn(f.len(), f.len(), |a, b| mass[(f[a], f[b])]);
            let rhs = DVector::from_fn(f.len(), |a, _| {
                let j = f[a];
                bias[j] + friction[j] - s.iter().map(|&k| mass[(j, k)] * accel[k]).sum::<f64>()
            });
            let af = mff.cholesky()?.solve(&rhs);
            for (a, &j) in f.iter().enumerate() {
                accel[j] = af[a];
            }
        }
        let required: Vec<f64> = s
            .iter()
            .map(|&j| (0..n).map(|k| mass[(j, k)] * accel[k]).sum::<f64>() - bias[j])
            .collect();
        let worst = s
            .iter()
            .zip(&required)
            .map(|(&j, &r)| (j, r, r.abs() - limit[j]))
            .filter(|&(_, _, excess)| excess > 0.0)
            .max_by(|a, b| a.2.total_cmp(&b.2));
        match worst {
            None => return Some(accel),
            Some((j, r, _)) => {
                stuck[j] = false;
                friction[j] = sign(r) * limit[j];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulator {
    /// The true robot; dynamics use its true centers of mass.
    pub model: RobotModel,
    pub actuators: Vec<ActuatorParams>,
    /// Arm origin in the base frame, m.
    pub mount: Vector3<f64>,
    /// Base velocity plant time constant, s.
    pub base_time_constant: f64,
    pub tether: Option<SpringTether>,
    pub current_limits: Vec<Option<f64>>,
}

impl Simulator {
    pub const MAX_STEP: f64 = 0.01;
    /// Fixed-point passes for the implicit step velocity.
    pub const VELOCITY_ITERATIONS: usize = 8;

    pub fn new(model: RobotModel, actuators: Vec<ActuatorParams>) -> Result<Self, SimError> {
        model.check_dim(actuators.len())?;
        let n = model.n_joints();
        Ok(Self {
            model,
            actuators,
            mount: Vector3::zeros(),
            base_time_constant: 0.1,
            tether: None,
            current_limits: alloc::vec![None; n],
        })
    }

    pub fn n_joints(&self) -> usize {
        self.model.n_joints()
    }

    pub fn ee_world(&self, state: &SimState) -> Vector3<f64> {
        state.base.point_to_world(&(ee_position(&self.model, state.joints.q.as_slice()) + self.mount))
    }

    /// End-effector velocity in the world frame; base rotation is held fixed.
    pub fn ee_velocity_world(&self, state: &SimState) -> Result<Vector3<f64>, SimError> {
        let v = jacobian(&self.model, &state.joints)? * &state.joints.dq;
        let xy = state.base.vector_to_world(&v.xy()) + state.base_velocity;
        Ok(Vector3::new(xy.x, xy.y, v.z))
    }

    pub fn tether_force(&self, state: &SimState) -> Vector3<f64> {
        match &self.tether {
            Some(t) => spring_force(&self.ee_world(state), t),
            None => Vector3::zeros(),
        }
    }

    /// Total external end-effector force in the world frame.
    pub fn interaction_force(&self, state: &SimState) -> Vector3<f64> {
        state.ext_ee_force + self.tether_force(state)
    }

    /// Advance by `dt`. `base_command` is the commanded base velocity in the
    /// base frame. Accelerations of the base are not fed back into the arm.
    pub fn step(
        &self,
        state: &SimState,
        currents: &CurrentCommand,
        base_command: &Vector2<f64>,
        dt: f64,
    ) -> Result<SimState, SimError> {
        if !(dt > 0.0 && dt <= Self::MAX_STEP) {
            return Err(SimError::InvalidStep(dt));
        }
        let n = self.n_joints();
        if currents.len() != n {
            return Err(SimError::CurrentCount { expected: n, got: currents.len() });
        }
        let mut applied = currents.clone();
        applied.saturate(&self.current_limits);
        let non_finite = |joints: &JointState| SimError::NonFinite {
            time: state.time,
            q: joints.q.iter().copied().collect(),
            dq: joints.dq.iter().copied().collect(),
            currents: currents.current.clone(),
        };
        if !applied.is_finite() {
            return Err(non_finite(&state.joints));
        }

        // Midpoint variational step. `dq` is the velocity of the previous
        // step; the velocity of this one solves
        //   M(m) v = M(m⁻) v⁻ + h/2 (∂L/∂q(m⁻, v⁻) + ∂L/∂q(m, v)) + h τ
        // with midpoints m = q + h v / 2 and ∂L/∂q = Cᵀv - G.
        let joints = &state.joints;
        let force = state.base.force_to_base(&self.interaction_force(state));
        let tau_ext = &state.ext_joint_torques + jacobian(&self.model, joints)?.transpose() * force;
        let applied_torque = DVector::from_fn(n, |j, _| applied.current[j] / self.actuators[j].ratio) + tau_ext;
        let half = 0.5 * dt;
        let previous = JointState { q: &joints.q - &joints.dq * half, dq: joints.dq.clone() };
        let before = dynamics_terms(&self.model, &previous, ComSource::True)?;
        let carried = &before.mass_matrix * &joints.dq + (before.coriolis_matrix.tr_mul(&joints.dq) - &before.gravity_torque) * half;
        let limit: Vec<f64> = self.actuators.iter().map(|a| a.friction_torque_limit()).collect();
        let band: Vec<f64> = self.actuators.iter().map(|a| a.static_band).collect();
        let mut velocity = joints.dq.clone();
        for _ in 0..Self::VELOCITY_ITERATIONS {
            let mid = JointState { q: &joints.q + &velocity * half, dq: velocity.clone() };
            let t = dynamics_terms(&self.model, &mid, ComSource::True)?;
            let bias = (&carried - &t.mass_matrix * &joints.dq) / dt
                + (t.coriolis_matrix.tr_mul(&velocity) - &t.gravity_torque) * 0.5
                + &applied_torque;
            let accel = coulomb_accelerations(&t.mass_matrix, &bias, &joints.dq, &limit, &band, dt)
                .ok_or(SimError::Dynamics(DynamicsError::SingularMassMatrix))?;
            let next = &joints.dq + accel * dt;
            let change = (&next - &velocity).amax();
            velocity = next;
            if change <= 1e-13 * (1.0 + velocity.amax()) {
                break;
            }
        }

        let q = &joints.q + &velocity * dt;
        let dq = velocity;
        let next_joints = JointState { q, dq };
        if next_joints.q.iter().chain(next_joints.dq.iter()).any(|v| !v.is_finite()) {
            return Err(non_finite(&next_joints));
        }

        let command = state.base.vector_to_world(base_command);
        let decay = (-dt / self.base_time_constant).exp();
        let base_velocity = command + (state.base_velocity - command) * decay;
        let mut base = state.base;
        base.position += base_velocity * dt;

        Ok(SimState {
            time: state.time + dt,
            joints: next_joints,
            base,
            base_velocity,
            ext_ee_force: state.ext_ee_force,
            ext_joint_torques: state.ext_joint_torques.clone(),
        })
    }

    /// One joint driven while every other joint is held at `home`.
    pub fn locked_joint_plant(&self, home: &[f64], joint: usize) -> Result<LockedJointPlant, SimError> {
        self.model.check_dim(home.len())?;
        if joint >= self.n_joints() {
            return Err(SimError::InvalidConfig("joint index out of range"));
        }
        let mut q = home.to_vec();
        let eval = |q: &[f64]| -> Result<f64, SimError> {
            let s = JointState::from_slices(q, &alloc::vec![0.0; q.len()])?;
            Ok(gravity_torque(&self.model, &s, ComSource::True)?[joint])
        };
        q[joint] = 0.0;
        let gravity_cos = eval(&q)?;
        q[joint] = core::f64::consts::FRAC_PI_2;
        let gravity_sin = eval(&q)?;
        let inertia = mass_matrix(&self.model, home, ComSource::True)[(joint, joint)];
        Ok(LockedJointPlant {
            joint,
            inertia,
            gravity_sin,
            gravity_cos,
            params: self.actuators[joint],
            current_limit: self.current_limits[joint],
        })
    }
}

/// Single-joint plant `I q̈ = c/r + τ_f - (a sin q + b cos q)`.
///
/// With the other joints locked the inertia about the joint axis is constant
/// and the gravity load is exactly sinusoidal in `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockedJointPlant {
    pub joint: usize,
    pub inertia: f64,
    pub gravity_sin: f64,
    pub gravity_cos: f64,
    pub params: ActuatorParams,
    pub current_limit: Option<f64>,
}

impl LockedJointPlant {
    pub fn gravity(&self, q: f64) -> f64 {
        let (s, c) = q.sin_cos();
        self.gravity_sin * s + self.gravity_cos * c
    }

    /// Returns the new `(q, dq)` and the current actually applied.
    pub fn step(&self, q: f64, dq: f64, current: f64, dt: f64) -> (f64, f64, f64) {
        let current = match self.current_limit {
            Some(l) => current.clamp(-l, l),
            None => current,
        };
        let m = DMatrix::from_element(1, 1, self.inertia);
        let b = DVector::from_element(1, current / self.params.ratio - self.gravity(q));
        let v = DVector::from_element(1, dq);
        let accel = coulomb_accelerations(&m, &b, &v, &[self.params.friction_torque_limit()], &[self.params.static_band], dt)
            .map(|a| a[0])
            .unwrap_or(f64::NAN);
        let dq = dq + accel * dt;
        (q + dq * dt, dq, current)
    }
}

/// A timed external interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioEvent {
    /// Constant world-frame force on the end-effector.
    Push { start: f64, duration: f64, force: Vector3<f64> },
    /// A hand grabbing the end-effector where it is when the hold begins.
    Hold { start: f64, duration: f64, stiffness: f64, damping: f64 },
}

impl ScenarioEvent {
    fn active(&self, t: f64) -> bool {
        let (start, duration) = match *self {
            ScenarioEvent::Push { start, duration, .. } | ScenarioEvent::Hold { start, duration, .. } => {
                (start, duration)
            }
        };
        t >= start && t < start + duration
    }

    pub fn end(&self) -> f64 {
        match *self {
            ScenarioEvent::Push { start, duration, .. } | ScenarioEvent::Hold { start, duration, .. } => {
                start + duration
            }
        }
    }
}

/// Evaluates scenario forces over time, remembering where holds grabbed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    events: Vec<ScenarioEvent>,
    anchors: Vec<Option<Vector3<f64>>>,
}

impl Scenario {
    pub fn new(events: Vec<ScenarioEvent>) -> Self {
        let anchors = alloc::vec![None; events.len()];
        Self { events, anchors }
    }

    pub fn events(&self) -> &[ScenarioEvent] {
        &self.events
    }

    pub fn end(&self) -> f64 {
        self.events.iter().map(ScenarioEvent::end).fold(0.0, f64::max)
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.events.iter().any(|e| e.active(t))
    }

    /// World-frame force on the end-effector at time `t`.
    pub fn force(&mut self, t: f64, ee_world: &Vector3<f64>, ee_velocity: &Vector3<f64>) -> Vector3<f64> {
        let mut total = Vector3::zeros();
        for (event, anchor) in self.events.iter().zip(self.anchors.iter_mut()) {
            if !event.active(t) {
                *anchor = None;
                continue;
            }
            match *event {
                ScenarioEvent::Push { force, .. } => total += force,
                ScenarioEvent::Hold { stiffness, damping, .. } => {
                    let a = *anchor.get_or_insert(*ee_world);
                    total += (a - ee_world) * stiffness - ee_velocity * damping;
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinkModel;
    use approx::assert_relative_eq;

    fn pendulum(gravity: bool) -> Simulator {
        let link = LinkModel::new(0.5, 1.0, Vector3::new(0.5, 0.0, 0.0), -Vector3::y());
        let g = if gravity { RobotModel::standard_gravity() } else { Vector3::zeros() };
        let model = RobotModel::new(alloc::vec![link], g).unwrap();
        Simulator::new(model, alloc::vec![ActuatorParams::new(1.0, 0.0).unwrap()]).unwrap()
    }

    #[test]
    fn tether_examples() {
        let t = SpringTether::new(Vector3::zeros(), 0.26, 40.0).unwrap();
        assert_eq!(spring_force(&Vector3::new(0.26, 0.0, 0.0), &t), Vector3::zeros());
        let f = spring_force(&Vector3::new(0.27, 0.0, 0.0), &t);
        assert_relative_eq!(f, Vector3::new(-0.4, 0.0, 0.0), epsilon = 1e-12);
        let inside = spring_force(&Vector3::new(0.26 - 1e-12, 0.0, 0.0), &t);
        let outside = spring_force(&Vector3::new(0.26 + 1e-12, 0.0, 0.0), &t);
        assert!((inside - outside).norm() < 1e-9);
        assert!(SpringTether::new(Vector3::zeros(), 0.0, 1.0).is_err());
    }

    #[test]
    fn constant_without_inputs() {
        let sim = pendulum(false);
        let mut s = SimState::at_rest(DVector::from_element(1, 0.3), BasePose::origin());
        for _ in 0..100 {
            s = sim.step(&s, &CurrentCommand::zeros(1), &Vector2::zeros(), 1e-3).unwrap();
        }
        assert_eq!(s.joints.q[0], 0.3);
        assert_eq!(s.joints.dq[0], 0.0);
    }

    #[test]
    fn stiction_holds() {
        let mut sim = pendulum(true);
        sim.model.set_gravity(Vector3::new(0.0, 0.0, -0.01)).unwrap();
        sim.actuators[0] = ActuatorParams::new(1.0, 0.5).unwrap();
        let mut s = SimState::at_rest(DVector::from_element(1, 0.0), BasePose::origin());
        for _ in 0..1000 {
            s = sim.step(&s, &CurrentCommand { current: alloc::vec![0.3] }, &Vector2::zeros(), 1e-3).unwrap();
        }
        assert_eq!(s.joints.q[0], 0.0);
    }

    #[test]
    fn friction_stops_free_spin() {
        let mut sim = pendulum(false);
        sim.actuators[0] = ActuatorParams::new(1.0, 0.5).unwrap();
        let mut s = SimState::at_rest(DVector::from_element(1, 0.0), BasePose::origin());
        s.joints.dq[0] = 1.0;
        // I = 0.25 kg·m², friction torque 0.5 N·m, so it stops after 0.5 s.
        for _ in 0..600 {
            s = sim.step(&s, &CurrentCommand::zeros(1), &Vector2::zeros(), 1e-3).unwrap();
        }
        assert_eq!(s.joints.dq[0], 0.0);
        assert_relative_eq!(s.joints.q[0], 0.25, epsilon = 2e-3);
    }

    #[test]
    fn bad_step_rejected() {
        let sim = pendulum(true);
        let s = SimState::at_rest(DVector::zeros(1), BasePose::origin());
        assert!(matches!(sim.step(&s, &CurrentCommand::zeros(1), &Vector2::zeros(), 0.0), Err(SimError::InvalidStep(_))));
        assert!(sim.step(&s, &CurrentCommand::zeros(1), &Vector2::zeros(), 0.02).is_err());
        assert!(sim.step(&s, &CurrentCommand::zeros(2), &Vector2::zeros(), 1e-3).is_err());
        let nan = CurrentCommand { current: alloc::vec![f64::NAN] };
        assert!(matches!(sim.step(&s, &nan, &Vector2::zeros(), 1e-3), Err(SimError::NonFinite { .. })));
    }

    #[test]
    fn base_plant_first_order() {
        let sim = pendulum(false);
        let mut s = SimState::at_rest(DVector::zeros(1), BasePose::origin());
        for _ in 0..100 {
            s = sim.step(&s, &CurrentCommand::zeros(1), &Vector2::new(1.0, 0.0), 1e-3).unwrap();
        }
        assert_relative_eq!(s.base_velocity.x, 1.0 - (-1.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn locked_plant_matches_full_gravity() {
        let sim = pendulum(true);
        let plant = sim.locked_joint_plant(&[0.0], 0).unwrap();
        for q in [-1.0, 0.0, 0.4, 2.0] {
            let s = JointState::from_slices(&[q], &[0.0]).unwrap();
            let g = gravity_torque(&sim.model, &s, ComSource::True).unwrap()[0];
            assert_relative_eq!(plant.gravity(q), g, epsilon = 1e-12);
        }
        assert_relative_eq!(plant.inertia, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn hold_anchors_on_start() {
        let mut sc = Scenario::new(alloc::vec![ScenarioEvent::Hold { start: 1.0, duration: 1.0, stiffness: 100.0, damping: 0.0 }]);
        let v = Vector3::zeros();
        assert_eq!(sc.force(0.5, &Vector3::x(), &v), Vector3::zeros());
        assert_eq!(sc.force(1.0, &Vector3::x(), &v), Vector3::zeros());
        assert_relative_eq!(sc.force(1.5, &(Vector3::x() * 1.01), &v), Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-9);
        assert_eq!(sc.force(2.0, &Vector3::zeros(), &v), Vector3::zeros());
        assert_eq!(sc.end(), 2.0);
    }
}
