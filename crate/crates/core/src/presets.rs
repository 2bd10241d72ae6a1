//! A desk-scale default robot: base yaw, four pitch joints and a wrist roll.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DVector, Vector3};

use crate::actuator::ActuatorParams;
use crate::dynamics::{LinkModel, RobotModel};

/// Actuator sizes of the default robot, one per joint.
pub const ACTUATOR_TYPES: [&str; 6] = ["large", "large", "medium", "medium", "small", "small"];

/// True (ratio A/(N·m), friction loss A) for an actuator type.
pub fn true_actuator(kind: &str) -> Option<(f64, f64)> {
    match kind {
        "large" => Some((1.6, 0.12)),
        "medium" => Some((2.1, 0.08)),
        "small" => Some((2.8, 0.05)),
        _ => None,
    }
}

fn rod(length: f64, mass: f64, com: Vector3<f64>, axis: Vector3<f64>, armature: f64) -> LinkModel {
    let transverse = mass * length * length / 12.0 + 1e-4;
    LinkModel::new(length, mass, com, axis)
        .with_inertia(Vector3::new(1e-4 + 1e-3 * mass, transverse, transverse))
        .with_armature(armature)
}

/// The nominal robot: its true centers of mass equal the nominal ones.
pub fn default_robot() -> RobotModel {
    let pitch = -Vector3::y();
    let links = alloc::vec![
        rod(0.0, 0.6, Vector3::zeros(), Vector3::z(), 0.02),
        rod(0.28, 1.0, Vector3::new(0.14, 0.0, 0.0), pitch, 0.02),
        rod(0.24, 0.7, Vector3::new(0.12, 0.0, 0.0), pitch, 0.01),
        rod(0.08, 0.35, Vector3::new(0.04, 0.0, 0.0), pitch, 0.005),
        rod(0.06, 0.3, Vector3::new(0.03, 0.0, 0.0), pitch, 0.005),
        rod(0.08, 0.3, Vector3::new(0.05, 0.0, 0.0), Vector3::x(), 0.005),
    ];
    RobotModel::new(links, RobotModel::standard_gravity()).expect("default robot is valid")
}

pub fn actuator_types() -> Vec<String> {
    ACTUATOR_TYPES.iter().map(|s| s.to_string()).collect()
}

/// True actuator parameters of the default robot.
pub fn default_actuators() -> Vec<ActuatorParams> {
    ACTUATOR_TYPES
        .iter()
        .map(|k| {
            let (r, l) = true_actuator(k).expect("known type");
            ActuatorParams::new(r, l).expect("valid preset")
        })
        .collect()
}

/// Calibration home: arm stretched horizontally along +x.
pub fn home_pose() -> DVector<f64> {
    DVector::zeros(6)
}

/// A comfortable working posture, also used as the nullspace posture.
pub fn ready_pose() -> DVector<f64> {
    DVector::from_vec(alloc::vec![0.0, 0.9, -1.6, -0.6, 0.3, 0.0])
}

/// Arm origin in the base frame.
pub fn default_mount() -> Vector3<f64> {
    Vector3::new(0.15, 0.0, 0.35)
}

/// Phase error of the default robot's true model at joint 3, rad.
pub const DEFAULT_PHASE_ERROR: f64 = -10.0 * core::f64::consts::PI / 180.0;
pub const DEFAULT_PHASE_JOINT: usize = 3;

/// The default robot as it really is: joint 3's downstream center of mass
/// sits [`DEFAULT_PHASE_ERROR`] away from where the nominal model puts it.
pub fn true_robot() -> RobotModel {
    crate::calibration::inject_phase_error(&default_robot(), home_pose().as_slice(), DEFAULT_PHASE_JOINT, DEFAULT_PHASE_ERROR)
        .expect("default robot is valid")
}
