//! Omnidirectional base following the end-effector, and the two whole-body
//! operating modes.

use core::f64::consts::PI;

use nalgebra::{Matrix2, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::actuator::{ActuatorParams, CurrentCommand};
use crate::control::{control_step, ControlError, ImpedanceConfig, TaskTarget};
use crate::dynamics::{ee_position, JointState, RobotModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaseError {
    #[error("invalid follower configuration: {0}")]
    InvalidFollower(&'static str),
    #[error("invalid wheel geometry: {0}")]
    InvalidGeometry(&'static str),
}

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Planar pose of the base in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasePose {
    pub position: Vector2<f64>,
    heading: f64,
}

impl BasePose {
    pub fn new(position: Vector2<f64>, heading: f64) -> Self {
        Self { position, heading: wrap_angle(heading) }
    }

    pub fn origin() -> Self {
        Self::new(Vector2::zeros(), 0.0)
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn set_heading(&mut self, heading: f64) {
        self.heading = wrap_angle(heading);
    }

    fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.heading.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Rotate a base-frame planar vector into the world frame.
    pub fn vector_to_world(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.rotation() * v
    }

    pub fn vector_to_base(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.rotation().transpose() * v
    }

    pub fn point_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let xy = self.vector_to_world(&p.xy()) + self.position;
        Vector3::new(xy.x, xy.y, p.z)
    }

    pub fn point_to_base(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let xy = self.vector_to_base(&(p.xy() - self.position));
        Vector3::new(xy.x, xy.y, p.z)
    }

    pub fn force_to_base(&self, f: &Vector3<f64>) -> Vector3<f64> {
        let xy = self.vector_to_base(&f.xy());
        Vector3::new(xy.x, xy.y, f.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerConfig {
    /// `K_b`, 1/s.
    pub gain: Matrix2<f64>,
    /// Desired end-effector position in the base frame, m.
    pub desired_ee: Vector3<f64>,
    /// Horizontal deviation below which the base does not move, m.
    pub deadband: f64,
}

impl FollowerConfig {
    pub const DEFAULT_GAIN: f64 = 2.0;
    pub const DEFAULT_DEADBAND: f64 = 0.005;

    pub fn new(desired_ee: Vector3<f64>) -> Self {
        Self {
            gain: Matrix2::from_diagonal_element(Self::DEFAULT_GAIN),
            desired_ee,
            deadband: Self::DEFAULT_DEADBAND,
        }
    }

    pub fn validate(&self) -> Result<(), BaseError> {
        let g = &self.gain;
        let symmetric = (g[(0, 1)] - g[(1, 0)]).abs() < 1e-12;
        if !symmetric || !(g[(0, 0)] > 0.0) || !(g.determinant() > 0.0) {
            return Err(BaseError::InvalidFollower("gain must be symmetric positive definite"));
        }
        if !(self.deadband >= 0.0) {
            return Err(BaseError::InvalidFollower("deadband must be non-negative"));
        }
        Ok(())
    }
}

/// Base velocity in the base frame from the end-effector position in the
/// base frame. Height is ignored.
pub fn base_velocity(ee_in_base: &Vector3<f64>, config: &FollowerConfig) -> Vector2<f64> {
    let dev = (ee_in_base - config.desired_ee).xy();
    if dev.norm() <= config.deadband {
        return Vector2::zeros();
    }
    config.gain * dev
}

/// Mecanum wheel layout, wheels ordered front-left, front-right, rear-left,
/// rear-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MecanumGeometry {
    pub wheel_radius: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl MecanumGeometry {
    pub fn new(wheel_radius: f64, half_length: f64, half_width: f64) -> Result<Self, BaseError> {
        if !(wheel_radius > 0.0) {
            return Err(BaseError::InvalidGeometry("wheel radius must be positive"));
        }
        if !(half_length >= 0.0 && half_width >= 0.0 && half_length + half_width > 0.0) {
            return Err(BaseError::InvalidGeometry("wheel base must be non-degenerate"));
        }
        Ok(Self { wheel_radius, half_length, half_width })
    }

    /// Wheel rates, rad/s, for body velocity `v` (m/s) and yaw rate `omega`.
    pub fn wheel_velocities(&self, v: &Vector2<f64>, omega: f64) -> [f64; 4] {
        let k = self.half_length + self.half_width;
        let r = self.wheel_radius;
        [
            (v.x - v.y - k * omega) / r,
            (v.x + v.y + k * omega) / r,
            (v.x + v.y - k * omega) / r,
            (v.x - v.y + k * omega) / r,
        ]
    }

    /// Body velocity and yaw rate from wheel rates.
    pub fn body_velocity(&self, w: &[f64; 4]) -> (Vector2<f64>, f64) {
        let k = self.half_length + self.half_width;
        let r = self.wheel_radius / 4.0;
        let vx = r * (w[0] + w[1] + w[2] + w[3]);
        let vy = r * (-w[0] + w[1] + w[2] - w[3]);
        let omega = r / k * (-w[0] + w[1] - w[2] + w[3]);
        (Vector2::new(vx, vy), omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperationalMode {
    Guidance,
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeTarget {
    /// Target fixed in the base frame; pushing the arm leads the robot.
    Guidance { base_frame_target: Vector3<f64> },
    /// Target fixed in the world frame; the base extends the workspace.
    Tracking { world_target: Vector3<f64> },
}

impl ModeTarget {
    pub fn mode(&self) -> OperationalMode {
        match self {
            ModeTarget::Guidance { .. } => OperationalMode::Guidance,
            ModeTarget::Tracking { .. } => OperationalMode::Tracking,
        }
    }

    pub fn in_base_frame(&self, base: &BasePose) -> Vector3<f64> {
        match self {
            ModeTarget::Guidance { base_frame_target } => *base_frame_target,
            ModeTarget::Tracking { world_target } => base.point_to_base(world_target),
        }
    }

    pub fn in_world_frame(&self, base: &BasePose) -> Vector3<f64> {
        match self {
            ModeTarget::Guidance { base_frame_target } => base.point_to_world(base_frame_target),
            ModeTarget::Tracking { world_target } => *world_target,
        }
    }
}

/// The arm as mounted on the base, with the controller's view of it.
#[derive(Debug, Clone)]
pub struct WholeBody {
    /// Controller (corrected nominal) model of the arm.
    pub model: RobotModel,
    /// Arm origin in the base frame, m.
    pub mount: Vector3<f64>,
    pub follower: FollowerConfig,
    pub impedance: ImpedanceConfig,
    pub params: alloc::vec::Vec<ActuatorParams>,
}

impl WholeBody {
    pub fn ee_in_base(&self, joints: &JointState) -> Vector3<f64> {
        ee_position(&self.model, joints.q.as_slice()) + self.mount
    }
}

/// One tick of the whole-body controller: arm currents from the impedance
/// law and the base velocity (base frame) from the follower.
pub fn mode_step(
    joints: &JointState,
    base: &BasePose,
    target: &ModeTarget,
    body: &WholeBody,
) -> Result<(CurrentCommand, Vector2<f64>), ControlError> {
    let arm_target = target.in_base_frame(base) - body.mount;
    let currents = control_step(&body.model, joints, &TaskTarget::fixed(arm_target), &body.impedance, &body.params)?;
    let v_b = base_velocity(&body.ee_in_base(joints), &body.follower);
    Ok((currents, v_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn follower_examples() {
        let mut cfg = FollowerConfig::new(Vector3::new(0.5, 0.0, 0.3));
        assert_eq!(base_velocity(&cfg.desired_ee, &cfg), Vector2::zeros());
        cfg.gain = Matrix2::identity();
        let v = base_velocity(&(cfg.desired_ee + Vector3::new(0.1, 0.0, 0.3)), &cfg);
        assert_relative_eq!(v, Vector2::new(0.1, 0.0), epsilon = 1e-15);
        let v = base_velocity(&(cfg.desired_ee + Vector3::new(0.0, 0.0, 0.5)), &cfg);
        assert_eq!(v, Vector2::zeros());
        let v = base_velocity(&(cfg.desired_ee + Vector3::new(0.004, 0.0, 0.0)), &cfg);
        assert_eq!(v, Vector2::zeros());
    }

    #[test]
    fn wheels_forward() {
        let g = MecanumGeometry::new(0.05, 0.2, 0.15).unwrap();
        assert_eq!(g.wheel_velocities(&Vector2::zeros(), 0.0), [0.0; 4]);
        for w in g.wheel_velocities(&Vector2::new(0.3, 0.0), 0.0) {
            assert_relative_eq!(w, 0.3 / 0.05, epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_wraps() {
        assert_relative_eq!(BasePose::new(Vector2::zeros(), 3.0 * PI).heading(), PI, epsilon = 1e-12);
        assert_relative_eq!(BasePose::new(Vector2::zeros(), -PI).heading(), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.5), -0.5);
    }

    #[test]
    fn invalid_follower() {
        let mut cfg = FollowerConfig::new(Vector3::zeros());
        assert!(cfg.validate().is_ok());
        cfg.gain = Matrix2::new(1.0, 0.0, 0.0, -1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = FollowerConfig::new(Vector3::zeros());
        cfg.deadband = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn frames_round_trip() {
        let base = BasePose::new(Vector2::new(1.0, -2.0), 0.7);
        let p = Vector3::new(0.3, 0.4, 0.5);
        assert_relative_eq!(base.point_to_base(&base.point_to_world(&p)), p, epsilon = 1e-12);
        let tracking = ModeTarget::Tracking { world_target: base.point_to_world(&p) };
        assert_relative_eq!(tracking.in_base_frame(&base), p, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn wheel_map_round_trip(vx in -2.0f64..2.0, vy in -2.0f64..2.0, w in -3.0f64..3.0) {
            let g = MecanumGeometry::new(0.076, 0.235, 0.2).unwrap();
            let (v, omega) = g.body_velocity(&g.wheel_velocities(&Vector2::new(vx, vy), w));
            prop_assert!((v.x - vx).abs() < 1e-12 && (v.y - vy).abs() < 1e-12 && (omega - w).abs() < 1e-12);
        }

        #[test]
        fn follower_rotation_equivariant(dx in -0.5f64..0.5, dy in -0.5f64..0.5, a in -3.0f64..3.0) {
            let cfg = FollowerConfig::new(Vector3::new(0.5, 0.0, 0.3));
            let rot = BasePose::new(Vector2::zeros(), a);
            let dev = Vector2::new(dx, dy);
            let rdev = rot.vector_to_world(&dev);
            let v = base_velocity(&(cfg.desired_ee + Vector3::new(dev.x, dev.y, 0.0)), &cfg);
            let rv = base_velocity(&(cfg.desired_ee + Vector3::new(rdev.x, rdev.y, 0.0)), &cfg);
            prop_assert!((rot.vector_to_world(&v) - rv).norm() < 1e-12);
        }
    }
}
