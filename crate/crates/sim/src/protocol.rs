//! Serve-mode messages.
//!
//! Server to client, one JSON object per frame:
//!
//! ```json
//! {"time": 1.23, "joints": [..], "ee": [x, y, z],
//!  "base": {"x": 0.0, "y": 0.0, "heading": 0.0},
//!  "target": [x, y, z], "mode": "guidance", "force": [fx, fy, fz]}
//! ```
//!
//! Client to server, one command per message:
//!
//! ```json
//! {"apply_force": [fx, fy, fz]}
//! {"set_mode": "tracking"}
//! {"set_target": [x, y, z]}
//! "release"
//! ```
//!
//! Positions are world-frame meters, forces world-frame newtons at the
//! end-effector. `apply_force` replaces any previous force; `release` sets it
//! to zero. A malformed command is answered with `{"error": "..."}` and
//! otherwise ignored.

use compliant_core::base::OperationalMode;
use compliant_core::experiments::WholeBodySession;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::records::mode_name;

/// Largest accepted `apply_force` magnitude, N.
pub const MAX_FORCE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseFrame {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub time: f64,
    pub joints: Vec<f64>,
    pub ee: [f64; 3],
    pub base: BaseFrame,
    pub target: [f64; 3],
    pub mode: String,
    /// Total external force on the end-effector, world frame.
    pub force: [f64; 3],
}

impl StateFrame {
    pub fn capture(session: &WholeBodySession) -> Self {
        let s = &session.state;
        let v = |p: Vector3<f64>| [p.x, p.y, p.z];
        Self {
            time: s.time,
            joints: s.joints.q.iter().copied().collect(),
            ee: v(session.ee_world()),
            base: BaseFrame { x: s.base.position.x, y: s.base.position.y, heading: s.base.heading() },
            target: v(session.target_world()),
            mode: mode_name(session.mode()).into(),
            force: v(s.ext_ee_force + session.sim.tether_force(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Guidance,
    Tracking,
}

impl From<ModeName> for OperationalMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Guidance => OperationalMode::Guidance,
            ModeName::Tracking => OperationalMode::Tracking,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    ApplyForce([f64; 3]),
    SetMode(ModeName),
    SetTarget([f64; 3]),
    Release,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("malformed command: {0}")]
    Malformed(String),
    #[error("values must be finite")]
    NonFinite,
    #[error("force magnitude {0:.1} N exceeds {MAX_FORCE} N")]
    TooLarge(f64),
}

impl Command {
    pub fn parse(text: &str) -> Result<Self, CommandError> {
        let cmd: Command = serde_json::from_str(text).map_err(|e| CommandError::Malformed(e.to_string()))?;
        match cmd {
            Command::ApplyForce(v) | Command::SetTarget(v) if !v.iter().all(|x| x.is_finite()) => Err(CommandError::NonFinite),
            Command::ApplyForce(f) if Vector3::from(f).norm() > MAX_FORCE => Err(CommandError::TooLarge(Vector3::from(f).norm())),
            _ => Ok(cmd),
        }
    }

    pub fn apply(self, session: &mut WholeBodySession) {
        match self {
            Command::ApplyForce(f) => session.user_force = f.into(),
            Command::Release => session.user_force = Vector3::zeros(),
            Command::SetMode(m) => session.set_mode(m.into()),
            Command::SetTarget(p) => session.set_target(p.into()),
        }
    }
}
