//! Sensorless current-based impedance control for mobile manipulators.
//!
//! The crate identifies actuator current/torque ratios, Coulomb friction
//! losses and center-of-mass phase errors from constant-velocity gravity
//! sweeps, and uses the estimates to drive a compliant task-space controller
//! on a simulated arm mounted on an omnidirectional base.
//!
//! Everything here is `no_std` (with `alloc`); file formats, the CLI and the
//! state-streaming server live in the companion `compliant-sim` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dynamics;
pub mod actuator;
pub mod control;
pub mod base;
pub mod sim;
pub mod presets;
pub mod calibration;
pub mod experiments;
