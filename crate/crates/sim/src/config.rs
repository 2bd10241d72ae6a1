//! TOML configuration. Every section is optional; missing keys fall back to
//! the default desk-scale robot and the experiment defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use compliant_core::actuator::ActuatorParams;
use compliant_core::base::OperationalMode;
use compliant_core::calibration::{inject_phase_error, SweepConfig};
use compliant_core::control::ImpedanceConfig;
use compliant_core::dynamics::{LinkModel, RobotModel};
use compliant_core::experiments::{
    ControllerKind, Experiment2Config, Experiment3Config, Rig, WHOLE_BODY_DAMPING, WHOLE_BODY_STIFFNESS,
};
use compliant_core::presets;
use compliant_core::sim::{ScenarioEvent, Simulator};
use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub robot: RobotSection,
    pub actuators: Vec<ActuatorTruth>,
    pub sweep: SweepSection,
    pub controller: ControllerSection,
    pub tether: TetherSection,
    pub base: BaseSection,
    pub whole_body: WholeBodySection,
    pub scenario: Vec<EventSpec>,
    pub serve: ServeSection,
}

impl Default for Config {
    fn default() -> Self {
        let actuators = ["large", "medium", "small"]
            .iter()
            .map(|k| {
                let (ratio, friction) = presets::true_actuator(k).expect("preset type");
                ActuatorTruth { name: (*k).into(), ratio, friction }
            })
            .collect();
        Self {
            seed: 0,
            robot: RobotSection::default(),
            actuators,
            sweep: SweepSection::default(),
            controller: ControllerSection::default(),
            tether: TetherSection::default(),
            base: BaseSection::default(),
            whole_body: WholeBodySection::default(),
            scenario: vec![EventSpec::Push { start: 2.0, duration: 5.0, force: [3.0, 0.0, 0.0] }],
            serve: ServeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub length: f64,
    pub mass: f64,
    pub com: [f64; 3],
    pub axis: [f64; 3],
    #[serde(default)]
    pub inertia: Option<[f64; 3]>,
    #[serde(default)]
    pub armature: f64,
    /// Actuator type name, matched against `[[actuators]]`.
    pub actuator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    /// Overrides the default robot when non-empty.
    pub links: Vec<LinkSpec>,
    pub mount: [f64; 3],
    /// Calibration home pose, rad.
    pub home: Option<Vec<f64>>,
    /// Working posture and nullspace target, rad.
    pub posture: Option<Vec<f64>>,
    /// True downstream COM rotation injected at `phase_joint`, degrees.
    pub phase_error_deg: f64,
    pub phase_joint: usize,
}

impl Default for RobotSection {
    fn default() -> Self {
        let m = presets::default_mount();
        Self {
            links: Vec::new(),
            mount: [m.x, m.y, m.z],
            home: None,
            posture: None,
            phase_error_deg: -10.0,
            phase_joint: presets::DEFAULT_PHASE_JOINT,
        }
    }
}

/// Ground truth of one actuator type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorTruth {
    pub name: String,
    /// A/(N·m).
    pub ratio: f64,
    /// A.
    pub friction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub velocity_deg_s: f64,
    pub sample_rate_hz: f64,
    pub half_span_deg: f64,
    pub trim_fraction: f64,
    /// Current measurement noise, A.
    pub noise_std: f64,
    pub drive_bandwidth: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            velocity_deg_s: 10.0,
            sample_rate_hz: d.sample_rate,
            half_span_deg: 90.0,
            trim_fraction: d.trim_fraction,
            noise_std: 0.01,
            drive_bandwidth: d.drive_bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// `K_d`, N/m, arm-only experiments.
    pub stiffness: f64,
    /// `D_d`, N·s/m.
    pub damping: f64,
    /// `t`, rad/s.
    pub velocity_threshold: f64,
    pub nullspace_gain: f64,
    pub nullspace_damping: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            stiffness: ImpedanceConfig::DEFAULT_STIFFNESS,
            damping: ImpedanceConfig::DEFAULT_DAMPING,
            velocity_threshold: ActuatorParams::DEFAULT_VEL_THRESHOLD,
            nullspace_gain: 1.0,
            nullspace_damping: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TetherSection {
    pub controller: String,
    /// N/m.
    pub stiffness: f64,
    pub free_length: f64,
    pub target_radius: f64,
    pub anchor_offset: f64,
    pub height: f64,
    pub speed: f64,
    pub passes: usize,
    pub arc_deg: [f64; 2],
    pub dwell: f64,
    pub settle: f64,
}

impl Default for TetherSection {
    fn default() -> Self {
        let d = Experiment2Config::default();
        Self {
            controller: "impedance".into(),
            stiffness: d.spring_stiffness,
            free_length: d.free_length,
            target_radius: d.target_radius,
            anchor_offset: d.anchor_offset,
            height: d.height,
            speed: d.speed,
            passes: d.passes,
            arc_deg: [-90.0, 90.0],
            dwell: d.dwell,
            settle: d.settle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSection {
    /// `K_b`, 1/s.
    pub gain: f64,
    pub deadband: f64,
    pub time_constant: f64,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self { gain: 2.0, deadband: 0.005, time_constant: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WholeBodySection {
    pub mode: String,
    pub stiffness: f64,
    pub damping: f64,
    pub duration: f64,
    /// Static tracking target, world frame, m.
    pub target: Option<[f64; 3]>,
    pub circle_radius: Option<f64>,
    pub speed: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for WholeBodySection {
    fn default() -> Self {
        Self {
            mode: "guidance".into(),
            stiffness: WHOLE_BODY_STIFFNESS,
            damping: WHOLE_BODY_DAMPING,
            duration: 15.0,
            target: None,
            circle_radius: None,
            speed: 0.05,
            dt: 1e-3,
            record_every: 10,
        }
    }
}

/// A scripted interaction in `[[scenario]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    Push { start: f64, duration: f64, force: [f64; 3] },
    Hold { start: f64, duration: f64, stiffness: f64, damping: f64 },
}

impl EventSpec {
    pub fn to_event(&self) -> ScenarioEvent {
        match *self {
            EventSpec::Push { start, duration, force } => ScenarioEvent::Push { start, duration, force: force.into() },
            EventSpec::Hold { start, duration, stiffness, damping } => ScenarioEvent::Hold { start, duration, stiffness, damping },
        }
    }
}

/// A standalone scenario file: a list of `[[event]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub event: Vec<EventSpec>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: u16,
    pub frame_rate: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { port: 8765, frame_rate: 30.0 }
    }
}

pub fn parse_mode(s: &str) -> Result<OperationalMode> {
    match s {
        "guidance" => Ok(OperationalMode::Guidance),
        "tracking" => Ok(OperationalMode::Tracking),
        _ => bail!("unknown mode {s:?}, expected \"guidance\" or \"tracking\""),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Actuator type name of every joint.
    pub fn actuator_types(&self) -> Vec<String> {
        if self.robot.links.is_empty() {
            presets::actuator_types()
        } else {
            self.robot.links.iter().map(|l| l.actuator.clone()).collect()
        }
    }

    /// The model the controller starts from, before calibration.
    pub fn nominal_model(&self) -> Result<RobotModel> {
        if self.robot.links.is_empty() {
            return Ok(presets::default_robot());
        }
        let links = self
            .robot
            .links
            .iter()
            .map(|l| {
                let mut link = LinkModel::new(l.length, l.mass, l.com.into(), Vector3::from(l.axis).normalize());
                if let Some(i) = l.inertia {
                    link = link.with_inertia(i.into());
                }
                link.with_armature(l.armature)
            })
            .collect();
        Ok(RobotModel::new(links, RobotModel::standard_gravity())?)
    }

    fn pose(&self, pose: &Option<Vec<f64>>, fallback: DVector<f64>, n: usize, what: &str) -> Result<DVector<f64>> {
        let q = match pose {
            Some(v) => DVector::from_vec(v.clone()),
            None if self.robot.links.is_empty() => fallback,
            None => DVector::zeros(n),
        };
        if q.len() != n {
            bail!("robot.{what} has {} entries for {n} joints", q.len());
        }
        Ok(q)
    }

    pub fn home(&self) -> Result<DVector<f64>> {
        let n = self.nominal_model()?.n_joints();
        self.pose(&self.robot.home, presets::home_pose(), n, "home")
    }

    pub fn posture(&self) -> Result<DVector<f64>> {
        let n = self.nominal_model()?.n_joints();
        self.pose(&self.robot.posture, presets::ready_pose(), n, "posture")
    }

    /// The robot as it really is: the nominal model with the configured
    /// center-of-mass error.
    pub fn true_model(&self) -> Result<RobotModel> {
        let nominal = self.nominal_model()?;
        if self.robot.phase_error_deg == 0.0 {
            return Ok(nominal);
        }
        let home = self.home()?;
        Ok(inject_phase_error(&nominal, home.as_slice(), self.robot.phase_joint, self.robot.phase_error_deg.to_radians())?)
    }

    pub fn true_actuators(&self) -> Result<Vec<ActuatorParams>> {
        let table = &self.actuators;
        self.actuator_types()
            .iter()
            .map(|kind| {
                let t = table.iter().find(|t| &t.name == kind).with_context(|| format!("no [[actuators]] entry named {kind:?}"))?;
                Ok(ActuatorParams::new(t.ratio, t.friction)?)
            })
            .collect()
    }

    pub fn simulator(&self) -> Result<Simulator> {
        let mut sim = Simulator::new(self.true_model()?, self.true_actuators()?)?;
        sim.mount = self.robot.mount.into();
        sim.base_time_constant = self.base.time_constant;
        if !(sim.base_time_constant > 0.0) {
            bail!("base.time_constant must be positive");
        }
        Ok(sim)
    }

    pub fn sweep(&self) -> Result<SweepConfig> {
        let s = &self.sweep;
        let config = SweepConfig {
            velocity: s.velocity_deg_s.to_radians(),
            sample_rate: s.sample_rate_hz,
            half_span: s.half_span_deg.to_radians(),
            min_coverage: SweepConfig::default().min_coverage.min(s.half_span_deg.to_radians()),
            trim_fraction: s.trim_fraction,
            noise_std: s.noise_std,
            drive_bandwidth: s.drive_bandwidth,
            ..SweepConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn impedance(&self) -> Result<ImpedanceConfig> {
        let c = &self.controller;
        let mut config = ImpedanceConfig::new(self.posture()?).with_gains(c.stiffness, c.damping);
        config.nullspace_gain = c.nullspace_gain;
        config.nullspace_damping = c.nullspace_damping;
        config.validate()?;
        Ok(config)
    }

    pub fn experiment_2(&self) -> Result<Experiment2Config> {
        let t = &self.tether;
        let controller = match t.controller.as_str() {
            "impedance" => ControllerKind::Impedance,
            "stiff" => ControllerKind::StiffVelocity,
            other => bail!("unknown tether.controller {other:?}, expected \"impedance\" or \"stiff\""),
        };
        Ok(Experiment2Config {
            controller,
            spring_stiffness: t.stiffness,
            free_length: t.free_length,
            target_radius: t.target_radius,
            anchor_offset: t.anchor_offset,
            height: t.height,
            speed: t.speed,
            passes: t.passes,
            arc: (t.arc_deg[0].to_radians(), t.arc_deg[1].to_radians()),
            dwell: t.dwell,
            settle: t.settle,
            ..Experiment2Config::default()
        })
    }

    pub fn experiment_3(&self) -> Result<Experiment3Config> {
        let w = &self.whole_body;
        Ok(Experiment3Config {
            mode: parse_mode(&w.mode)?,
            duration: w.duration,
            events: self.scenario.iter().map(EventSpec::to_event).collect(),
            world_target: w.target.map(Vector3::from),
            circle: w.circle_radius.map(|r| (r, w.speed)),
            stiffness: w.stiffness,
            damping: w.damping,
            dt: w.dt,
            record_every: w.record_every,
        })
    }

    /// Apply the base follower settings to a rig.
    pub fn configure_rig(&self, rig: &mut Rig) -> Result<()> {
        rig.follower_gain = self.base.gain;
        rig.deadband = self.base.deadband;
        rig.set_velocity_threshold(self.controller.velocity_threshold)?;
        Ok(())
    }
}
