//! On-disk formats: the calibration document the controller reads, sweep
//! recordings and simulation traces with their JSON sidecars.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use compliant_core::actuator::ActuatorParams;
use compliant_core::base::OperationalMode;
use compliant_core::calibration::{Calibration, CalibrationSweep, SweepDirection};
use compliant_core::dynamics::RobotModel;
use compliant_core::experiments::{Experiment1Report, TraceRow};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub joint: usize,
    pub actuator: String,
    /// A/(N·m).
    pub ratio: f64,
    /// Signed friction estimate, A; the controller uses its magnitude.
    pub friction: f64,
    pub phase_deg: f64,
    pub residual_rms: f64,
    pub n_samples: usize,
    /// False when borrowed from swept joints of the same actuator type.
    pub swept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub joints: Vec<JointRecord>,
    /// Corrected nominal COM of every link in its own frame, m.
    pub com_offsets: Vec<[f64; 3]>,
}

impl CalibrationRecord {
    pub fn new(cal: &Calibration, actuator_types: &[String]) -> Self {
        let joints = cal
            .joints
            .iter()
            .map(|j| JointRecord {
                joint: j.joint,
                actuator: actuator_types.get(j.joint).cloned().unwrap_or_default(),
                ratio: j.fit.ratio_hat,
                friction: j.fit.friction_hat,
                phase_deg: j.fit.phase_hat.to_degrees(),
                residual_rms: j.fit.residual_rms,
                n_samples: j.fit.n_samples,
                swept: j.swept,
            })
            .collect();
        let com_offsets = cal.model.links().iter().map(|l| [l.com_offset.x, l.com_offset.y, l.com_offset.z]).collect();
        Self { joints, com_offsets }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
    }

    /// Controller model: `nominal` with the recorded centers of mass.
    pub fn model(&self, nominal: &RobotModel) -> Result<RobotModel> {
        if self.com_offsets.len() != nominal.n_joints() {
            bail!("calibration has {} links, model has {}", self.com_offsets.len(), nominal.n_joints());
        }
        let mut model = nominal.clone();
        for (i, c) in self.com_offsets.iter().enumerate() {
            model.set_com_offset(i, (*c).into());
        }
        Ok(model)
    }

    pub fn params(&self, vel_threshold: f64) -> Result<Vec<ActuatorParams>> {
        let mut joints = self.joints.clone();
        joints.sort_by_key(|j| j.joint);
        joints
            .iter()
            .map(|j| {
                let p = ActuatorParams::new(j.ratio, j.friction.abs())?;
                Ok(p.with_thresholds(vel_threshold, p.static_band.min(vel_threshold / 2.0))?)
            })
            .collect()
    }
}

fn direction_name(d: SweepDirection) -> &'static str {
    match d {
        SweepDirection::Up => "up",
        SweepDirection::Down => "down",
    }
}

pub fn write_sweeps(path: &Path, sweeps: &[CalibrationSweep]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["joint", "direction", "t", "theta_rad", "dq", "current_A", "model_torque_Nm"])?;
    for sweep in sweeps {
        for s in &sweep.samples {
            w.write_record(&[
                sweep.joint.to_string(),
                direction_name(sweep.direction).to_string(),
                s.t.to_string(),
                s.theta.to_string(),
                s.dq.to_string(),
                s.current.to_string(),
                s.model_torque.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn mode_name(mode: OperationalMode) -> &'static str {
    match mode {
        OperationalMode::Guidance => "guidance",
        OperationalMode::Tracking => "tracking",
    }
}

/// One CSV row per trace sample: time, joint angles, end-effector, target,
/// base pose and velocity, interaction force, mode.
pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let n = trace.first().map_or(0, |r| r.q.len());
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = vec!["time".into()];
    header.extend((0..n).map(|j| format!("q{j}")));
    for name in ["ee_x", "ee_y", "ee_z", "target_x", "target_y", "target_z", "base_x", "base_y", "base_heading"] {
        header.push(name.into());
    }
    for name in ["base_vx", "base_vy", "force_x", "force_y", "force_z", "mode"] {
        header.push(name.into());
    }
    w.write_record(&header)?;
    for r in trace {
        let mut row: Vec<String> = vec![r.time.to_string()];
        row.extend(r.q.iter().map(f64::to_string));
        row.extend(r.ee.iter().chain(r.target.iter()).map(f64::to_string));
        row.extend([r.base.position.x, r.base.position.y, r.base.heading()].iter().map(f64::to_string));
        row.extend(r.base_velocity.iter().chain(r.force.iter()).map(f64::to_string));
        row.push(r.mode.map_or("", mode_name).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write `value` next to a trace as pretty JSON.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Per-round estimates as CSV: round, joint, ratio, friction, phase_deg.
pub fn write_rounds(path: &Path, report: &Experiment1Report) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["round", "joint", "ratio", "friction", "phase_deg"])?;
    for (k, round) in report.rounds.iter().enumerate() {
        for (j, f) in round.iter().enumerate() {
            w.write_record(&[k.to_string(), j.to_string(), f.ratio_hat.to_string(), f.friction_hat.to_string(), f.phase_hat.to_degrees().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
