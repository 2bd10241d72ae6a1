//! The three evaluation scenarios: calibration consistency, tethered
//! half-circle tracking with the arm alone, and whole-body guidance and
//! tracking on the mobile base.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use nalgebra::{DVector, Matrix2, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actuator::{ActuatorParams, CurrentCommand};
use crate::base::{base_velocity, BaseError, BasePose, FollowerConfig, ModeTarget, OperationalMode, WholeBody, mode_step};
use crate::calibration::{calibrate_all, Calibration, CalibrationError, FitResult, SweepConfig};
use crate::control::{
    ArmController, ControlError, ImpedanceConfig, ImpedanceController, StiffGains, StiffVelocityController, TaskTarget,
};
use crate::dynamics::{ee_position, inverse_kinematics, DynamicsError, RobotModel};
use crate::presets;
use crate::sim::{Scenario, ScenarioEvent, SimError, SimState, Simulator, SpringTether};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Base(#[from] BaseError),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("target {0:?} is out of reach")]
    Unreachable([f64; 3]),
}

/// Median and interquartile range (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub iqr: f64,
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn spread(values: &[f64]) -> Spread {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Spread { median: quantile(&v, 0.5), iqr: quantile(&v, 0.75) - quantile(&v, 0.25) }
}

/// Everything needed to run the robot: the true plant and the controller's
/// calibrated view of it.
#[derive(Debug, Clone)]
pub struct Rig {
    pub sim: Simulator,
    /// Controller model with corrected centers of mass.
    pub model: RobotModel,
    /// Calibrated actuator parameters.
    pub params: Vec<ActuatorParams>,
    pub impedance: ImpedanceConfig,
    pub home: DVector<f64>,
    /// Base follower `K_b`, 1/s.
    pub follower_gain: f64,
    /// Base follower deadband, m.
    pub deadband: f64,
}

impl Rig {
    /// Calibrate `sim` starting from the nominal `model` and assemble a rig.
    pub fn calibrated(
        sim: Simulator,
        model: &RobotModel,
        home: DVector<f64>,
        actuator_types: &[impl PartialEq],
        sweep: &SweepConfig,
        impedance: ImpedanceConfig,
        seed: u64,
    ) -> Result<(Self, Calibration), ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cal = calibrate_all(&sim, model, home.as_slice(), actuator_types, sweep, &mut rng)?;
        let params = cal.params(ActuatorParams::DEFAULT_VEL_THRESHOLD, ActuatorParams::DEFAULT_STATIC_BAND);
        let rig = Self {
            sim,
            model: cal.model.clone(),
            params,
            impedance,
            home,
            follower_gain: FollowerConfig::DEFAULT_GAIN,
            deadband: FollowerConfig::DEFAULT_DEADBAND,
        };
        Ok((rig, cal))
    }

    /// The default robot, calibrated with the default sweep and 0.01 A noise.
    pub fn default_calibrated(seed: u64) -> Result<Self, ExperimentError> {
        let mut sim = Simulator::new(presets::true_robot(), presets::default_actuators())?;
        sim.mount = presets::default_mount();
        let sweep = SweepConfig { noise_std: 0.01, ..SweepConfig::default() };
        let impedance = ImpedanceConfig::new(presets::ready_pose());
        let (rig, _) = Self::calibrated(
            sim,
            &presets::default_robot(),
            presets::home_pose(),
            &presets::actuator_types(),
            &sweep,
            impedance,
            seed,
        )?;
        Ok(rig)
    }

    /// Replace the velocity threshold `t` of every calibrated actuator.
    pub fn set_velocity_threshold(&mut self, t: f64) -> Result<(), ExperimentError> {
        for p in &mut self.params {
            *p = p.with_thresholds(t, p.static_band.min(t / 2.0)).map_err(|_| ExperimentError::InvalidConfig("velocity threshold"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment1Config {
    pub repeats: usize,
    pub seed: u64,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpread {
    pub joint: usize,
    pub ratio: Spread,
    pub friction: Spread,
    pub phase: Spread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment1Report {
    /// `rounds[k][j]`: estimate for joint `j` in repetition `k`.
    pub rounds: Vec<Vec<FitResult>>,
    pub summary: Vec<JointSpread>,
}

/// Repeat the full calibration with independent noise.
pub fn run_experiment_1(
    sim: &Simulator,
    model: &RobotModel,
    home: &[f64],
    actuator_types: &[impl PartialEq],
    config: &Experiment1Config,
) -> Result<Experiment1Report, ExperimentError> {
    if config.repeats == 0 {
        return Err(ExperimentError::InvalidConfig("at least one repetition"));
    }
    let mut rounds = Vec::with_capacity(config.repeats);
    for k in 0..config.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(k as u64));
        let cal = calibrate_all(sim, model, home, actuator_types, &config.sweep, &mut rng)?;
        rounds.push(cal.joints.iter().map(|j| j.fit).collect::<Vec<_>>());
    }
    let summary = (0..model.n_joints())
        .map(|j| {
            let col = |f: fn(&FitResult) -> f64| rounds.iter().map(|r| f(&r[j])).collect::<Vec<_>>();
            JointSpread {
                joint: j,
                ratio: spread(&col(|f| f.ratio_hat)),
                friction: spread(&col(|f| f.friction_hat)),
                phase: spread(&col(|f| f.phase_hat)),
            }
        })
        .collect();
    Ok(Experiment1Report { rounds, summary })
}

/// One recorded simulation instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub q: Vec<f64>,
    /// World frame.
    pub ee: Vector3<f64>,
    /// World frame.
    pub target: Vector3<f64>,
    pub base: BasePose,
    pub base_velocity: Vector2<f64>,
    /// External end-effector force, world frame.
    pub force: Vector3<f64>,
    pub mode: Option<OperationalMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Impedance,
    StiffVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment2Config {
    pub controller: ControllerKind,
    /// Tether spring, N/m.
    pub spring_stiffness: f64,
    /// `d_f`, m.
    pub free_length: f64,
    /// `d_t`, m.
    pub target_radius: f64,
    /// `d_o`, anchor distance from the arm origin along +x, m.
    pub anchor_offset: f64,
    /// Height of circle and anchor above the shoulder, m.
    pub height: f64,
    /// Target speed along the circle, m/s.
    pub speed: f64,
    /// Half-circle traversals, alternating direction.
    pub passes: usize,
    /// Start and end azimuth of the half circle, rad.
    pub arc: (f64, f64),
    /// Pause at each end of a pass, s.
    pub dwell: f64,
    /// Time holding the start point before the first pass, s.
    pub settle: f64,
    pub dt: f64,
    /// Record every this many steps.
    pub record_every: usize,
}

impl Default for Experiment2Config {
    fn default() -> Self {
        Self {
            controller: ControllerKind::Impedance,
            spring_stiffness: 40.0,
            free_length: 0.260,
            target_radius: 0.315,
            anchor_offset: 0.145,
            height: 0.10,
            speed: 0.101,
            passes: 4,
            arc: (-FRAC_PI_2, FRAC_PI_2),
            dwell: 1.0,
            settle: 2.0,
            dt: 1e-3,
            record_every: 10,
        }
    }
}

impl Experiment2Config {
    pub fn anchor(&self) -> Vector3<f64> {
        Vector3::new(self.anchor_offset, 0.0, self.height)
    }

    fn pass_time(&self) -> f64 {
        (self.arc.1 - self.arc.0).abs() * self.target_radius / self.speed
    }

    pub fn duration(&self) -> f64 {
        self.settle + self.passes as f64 * (self.pass_time() + self.dwell)
    }

    /// Target azimuth and azimuth rate at time `t`.
    pub fn azimuth(&self, t: f64) -> (f64, f64) {
        let (a0, a1) = self.arc;
        let t = t - self.settle;
        if t <= 0.0 {
            return (a0, 0.0);
        }
        let period = self.pass_time() + self.dwell;
        let k = ((t / period).floor() as usize).min(self.passes.saturating_sub(1));
        let local = t - k as f64 * period;
        let (from, to) = if k % 2 == 0 { (a0, a1) } else { (a1, a0) };
        if local >= self.pass_time() {
            return (to, 0.0);
        }
        let rate = (to - from) / self.pass_time();
        (from + rate * local, rate)
    }

    pub fn target(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (a, rate) = self.azimuth(t);
        let r = self.target_radius;
        let (s, c) = a.sin_cos();
        (Vector3::new(r * c, r * s, self.height), Vector3::new(-r * s * rate, r * c * rate, 0.0))
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.free_length > 0.0 && self.target_radius > 0.0 && self.speed > 0.0 && self.passes > 0) {
            return Err(ExperimentError::InvalidConfig("geometry, speed and passes must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= Simulator::MAX_STEP && self.record_every > 0) {
            return Err(ExperimentError::InvalidConfig("time step"));
        }
        if !(self.spring_stiffness >= 0.0 && self.dwell >= 0.0 && self.settle >= 0.0) {
            return Err(ExperimentError::InvalidConfig("stiffness and pauses must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment2Metrics {
    /// RMS distance of the end-effector from the target path (circle radius
    /// and height) while target and end-effector are both inside the free circle, m.
    pub in_circle_rms: f64,
    pub in_circle_max: f64,
    /// RMS distance to the moving target itself over the same samples, m.
    pub in_circle_lag_rms: f64,
    /// Mean over excursions beyond the free circle of peak end-effector gap
    /// over peak target gap.
    pub gap_ratio: f64,
    /// Mean peak end-effector distance from the anchor during excursions, m.
    pub equilibrium_radius: f64,
    pub excursions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment2Report {
    pub trace: Vec<TraceRow>,
    pub metrics: Experiment2Metrics,
}

/// Inverse kinematics from a posture seed turned toward the target.
fn solve_start(model: &RobotModel, target: &Vector3<f64>, posture: &DVector<f64>) -> Result<DVector<f64>, ExperimentError> {
    let mut seed = posture.clone();
    seed[0] = target.y.atan2(target.x);
    let (q, residual) = inverse_kinematics(model, target, seed.as_slice(), 500);
    if residual > 1e-6 {
        return Err(ExperimentError::Unreachable([target.x, target.y, target.z]));
    }
    Ok(q)
}

enum ArmLoop {
    Impedance(ImpedanceController),
    Stiff(StiffVelocityController),
}

impl ArmLoop {
    fn posture_mut(&mut self) -> &mut DVector<f64> {
        match self {
            ArmLoop::Impedance(c) => &mut c.config.nullspace_posture,
            ArmLoop::Stiff(c) => &mut c.posture,
        }
    }

    fn currents(&mut self, state: &crate::dynamics::JointState, target: &TaskTarget, dt: f64) -> Result<CurrentCommand, ControlError> {
        match self {
            ArmLoop::Impedance(c) => c.currents(state, target, dt),
            ArmLoop::Stiff(c) => c.currents(state, target, dt),
        }
    }
}

/// Arm-only tracking of a half circle with a spring tether limiting the reach.
pub fn run_experiment_2(rig: &Rig, config: &Experiment2Config) -> Result<Experiment2Report, ExperimentError> {
    config.validate()?;
    let mut sim = rig.sim.clone();
    sim.mount = Vector3::zeros();
    sim.tether = Some(SpringTether::new(config.anchor(), config.free_length, config.spring_stiffness)?);

    let mut impedance = rig.impedance.clone().with_error_clamp(None);
    let start = config.target(0.0).0;
    let q0 = solve_start(&rig.model, &start, &impedance.nullspace_posture)?;
    impedance.nullspace_posture = q0.clone();
    let mut controller = match config.controller {
        ControllerKind::Impedance => ArmLoop::Impedance(ImpedanceController {
            model: rig.model.clone(),
            config: impedance,
            params: rig.params.clone(),
        }),
        ControllerKind::StiffVelocity => ArmLoop::Stiff(StiffVelocityController::new(
            rig.model.clone(),
            rig.params.clone(),
            q0.clone(),
            StiffGains::default(),
        )),
    };

    let mut state = SimState::at_rest(q0, BasePose::origin());
    let steps = (config.duration() / config.dt).round() as usize;
    let mut trace = Vec::with_capacity(steps / config.record_every + 2);
    for k in 0..=steps {
        let (target, velocity) = config.target(state.time);
        let task = match config.controller {
            ControllerKind::Impedance => TaskTarget::fixed(target),
            ControllerKind::StiffVelocity => TaskTarget { position: target, velocity, acceleration: Vector3::zeros() },
        };
        // The preferred posture turns with the arm; only its shape matters.
        controller.posture_mut()[0] = state.joints.q[0];
        if k % config.record_every == 0 {
            trace.push(TraceRow {
                time: state.time,
                q: state.joints.q.iter().copied().collect(),
                ee: sim.ee_world(&state),
                target,
                base: state.base,
                base_velocity: state.base_velocity,
                force: sim.interaction_force(&state),
                mode: None,
            });
        }
        if k == steps {
            break;
        }
        let currents = controller.currents(&state.joints, &task, config.dt)?;
        state = sim.step(&state, &currents, &Vector2::zeros(), config.dt)?;
    }
    let metrics = experiment_2_metrics(&trace, config);
    Ok(Experiment2Report { trace, metrics })
}

/// Metrics over the moving part of an experiment-2 trace.
pub fn experiment_2_metrics(trace: &[TraceRow], config: &Experiment2Config) -> Experiment2Metrics {
    let anchor = config.anchor();
    let gap = |p: &Vector3<f64>| (p - anchor).norm() - config.free_length;
    let (mut sq, mut worst, mut lag_sq, mut count) = (0.0, 0.0f64, 0.0, 0usize);
    let mut excursions: Vec<(f64, f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64, f64)> = None;
    for row in trace.iter().filter(|r| r.time >= config.settle) {
        let target_gap = gap(&row.target);
        if target_gap <= 0.0 && gap(&row.ee) <= 0.0 {
            let rho = row.ee.xy().norm();
            let dev = ((rho - config.target_radius).powi(2) + (row.ee.z - config.height).powi(2)).sqrt();
            sq += dev * dev;
            worst = worst.max(dev);
            lag_sq += (row.ee - row.target).norm_squared();
            count += 1;
        }
        if target_gap > 0.0 {
            let e = open.get_or_insert((0.0, f64::NEG_INFINITY, 0.0));
            e.0 = e.0.max(target_gap);
            e.1 = e.1.max(gap(&row.ee));
            e.2 = e.2.max((row.ee - anchor).norm());
        } else if let Some(e) = open.take() {
            excursions.push(e);
        }
    }
    excursions.extend(open);
    let n = excursions.len().max(1) as f64;
    let rms = |s: f64| if count == 0 { f64::NAN } else { (s / count as f64).sqrt() };
    Experiment2Metrics {
        in_circle_rms: rms(sq),
        in_circle_max: worst,
        in_circle_lag_rms: rms(lag_sq),
        gap_ratio: if excursions.is_empty() { f64::NAN } else { excursions.iter().map(|e| e.1.max(0.0) / e.0).sum::<f64>() / n },
        equilibrium_radius: if excursions.is_empty() { f64::NAN } else { excursions.iter().map(|e| e.2).sum::<f64>() / n },
        excursions: excursions.len(),
    }
}

/// The whole robot under the guidance/tracking controller, advanced one
/// tick at a time. Used by the batch experiment and by live sessions.
#[derive(Debug, Clone)]
pub struct WholeBodySession {
    pub sim: Simulator,
    pub body: WholeBody,
    pub state: SimState,
    pub target: ModeTarget,
    pub scenario: Scenario,
    /// Live force on the end-effector, world frame.
    pub user_force: Vector3<f64>,
    last_base_command: Vector2<f64>,
}

impl WholeBodySession {
    /// Start at rest in the rig's posture with the follower's desired
    /// end-effector position where the arm currently holds it.
    pub fn new(rig: &Rig, mode: OperationalMode) -> Result<Self, ExperimentError> {
        let posture = rig.impedance.nullspace_posture.clone();
        rig.model.check_dim(posture.len())?;
        let mut follower = FollowerConfig::new(ee_position(&rig.model, posture.as_slice()) + rig.sim.mount);
        follower.gain = Matrix2::from_diagonal_element(rig.follower_gain);
        follower.deadband = rig.deadband;
        follower.validate()?;
        let body = WholeBody {
            model: rig.model.clone(),
            mount: rig.sim.mount,
            follower,
            impedance: rig.impedance.clone().with_error_clamp(Some(ImpedanceConfig::DEFAULT_ERROR_CLAMP)),
            params: rig.params.clone(),
        };
        let state = SimState::at_rest(posture, BasePose::origin());
        let target = ModeTarget::Guidance { base_frame_target: body.follower.desired_ee };
        let mut session = Self {
            sim: rig.sim.clone(),
            body,
            state,
            target,
            scenario: Scenario::new(Vec::new()),
            user_force: Vector3::zeros(),
            last_base_command: Vector2::zeros(),
        };
        session.set_mode(mode);
        Ok(session)
    }

    pub fn mode(&self) -> OperationalMode {
        self.target.mode()
    }

    /// Switching to tracking pins the target where the end-effector is now;
    /// switching to guidance puts it back at the follower's desired point.
    pub fn set_mode(&mut self, mode: OperationalMode) {
        self.target = match mode {
            OperationalMode::Guidance => ModeTarget::Guidance { base_frame_target: self.body.follower.desired_ee },
            OperationalMode::Tracking => ModeTarget::Tracking { world_target: self.ee_world() },
        };
    }

    /// Place the target at a world point, keeping the current mode.
    pub fn set_target(&mut self, world: Vector3<f64>) {
        self.target = match self.target {
            ModeTarget::Guidance { .. } => ModeTarget::Guidance { base_frame_target: self.state.base.point_to_base(&world) },
            ModeTarget::Tracking { .. } => ModeTarget::Tracking { world_target: world },
        };
    }

    pub fn ee_world(&self) -> Vector3<f64> {
        self.sim.ee_world(&self.state)
    }

    pub fn target_world(&self) -> Vector3<f64> {
        self.target.in_world_frame(&self.state.base)
    }

    /// Commanded base velocity of the last tick, base frame.
    pub fn base_command(&self) -> Vector2<f64> {
        self.last_base_command
    }

    pub fn step(&mut self, dt: f64) -> Result<(), ExperimentError> {
        let ee = self.ee_world();
        let ee_vel = self.sim.ee_velocity_world(&self.state)?;
        self.state.ext_ee_force = self.user_force + self.scenario.force(self.state.time, &ee, &ee_vel);
        let (currents, v_b) = mode_step(&self.state.joints, &self.state.base, &self.target, &self.body)?;
        self.state = self.sim.step(&self.state, &currents, &v_b, dt)?;
        self.last_base_command = v_b;
        Ok(())
    }

    pub fn row(&self) -> TraceRow {
        TraceRow {
            time: self.state.time,
            q: self.state.joints.q.iter().copied().collect(),
            ee: self.ee_world(),
            target: self.target_world(),
            base: self.state.base,
            base_velocity: self.state.base_velocity,
            force: self.sim.interaction_force(&self.state),
            mode: Some(self.mode()),
        }
    }

    /// End-effector error against the target, m.
    pub fn ee_error(&self) -> f64 {
        (self.ee_world() - self.target_world()).norm()
    }

    /// Follower deviation, m: horizontal distance of the end-effector from
    /// its desired position in the base frame.
    pub fn follower_deviation(&self) -> f64 {
        let p = self.body.ee_in_base(&self.state.joints);
        (p - self.body.follower.desired_ee).xy().norm()
    }

    pub fn follower_command(&self) -> Vector2<f64> {
        base_velocity(&self.body.ee_in_base(&self.state.joints), &self.body.follower)
    }
}

/// A target moving on a horizontal circle in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleTarget {
    pub center: Vector3<f64>,
    pub radius: f64,
    /// m/s along the circle.
    pub speed: f64,
}

impl CircleTarget {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        let a = self.speed / self.radius * t;
        let (s, c) = a.sin_cos();
        self.center + Vector3::new(self.radius * (c - 1.0), self.radius * s, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment3Config {
    pub mode: OperationalMode,
    pub duration: f64,
    pub events: Vec<ScenarioEvent>,
    /// Static tracking target, world frame. Ignored in guidance mode.
    pub world_target: Option<Vector3<f64>>,
    /// Moving tracking target; starts at the current end-effector position.
    pub circle: Option<(f64, f64)>,
    /// Impedance gains of the arm during whole-body operation.
    pub stiffness: f64,
    pub damping: f64,
    pub dt: f64,
    pub record_every: usize,
}

/// Whole-body arm stiffness, N/m.
pub const WHOLE_BODY_STIFFNESS: f64 = 100.0;
/// Whole-body arm damping, N·s/m.
pub const WHOLE_BODY_DAMPING: f64 = 5.0;

impl Default for Experiment3Config {
    fn default() -> Self {
        Self {
            mode: OperationalMode::Guidance,
            duration: 15.0,
            events: alloc::vec![ScenarioEvent::Push { start: 2.0, duration: 5.0, force: Vector3::new(3.0, 0.0, 0.0) }],
            world_target: None,
            circle: None,
            stiffness: WHOLE_BODY_STIFFNESS,
            damping: WHOLE_BODY_DAMPING,
            dt: 1e-3,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment3Metrics {
    pub final_base_speed: f64,
    pub final_ee_error: f64,
    pub final_follower_deviation: f64,
    pub max_base_speed: f64,
    pub base_travel: f64,
    /// Time after the last scripted event until the base speed stays below 1 mm/s.
    pub base_settle_time: Option<f64>,
    /// Time after the last scripted event until the end-effector error stays
    /// below the follower deadband.
    pub ee_settle_time: Option<f64>,
    pub max_ee_error_after_events: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment3Report {
    pub trace: Vec<TraceRow>,
    pub metrics: Experiment3Metrics,
}

pub const SETTLED_BASE_SPEED: f64 = 1e-3;

pub fn run_experiment_3(rig: &Rig, config: &Experiment3Config) -> Result<Experiment3Report, ExperimentError> {
    if !(config.dt > 0.0 && config.dt <= Simulator::MAX_STEP && config.duration > 0.0 && config.record_every > 0) {
        return Err(ExperimentError::InvalidConfig("time step and duration"));
    }
    let mut rig = rig.clone();
    rig.impedance = rig.impedance.with_gains(config.stiffness, config.damping);
    rig.impedance.validate()?;
    let mut session = WholeBodySession::new(&rig, config.mode)?;
    session.scenario = Scenario::new(config.events.clone());
    let circle = config.circle.map(|(radius, speed)| CircleTarget { center: session.ee_world(), radius, speed });
    if let (OperationalMode::Tracking, Some(p)) = (config.mode, config.world_target) {
        session.set_target(p);
    }
    let events_end = session.scenario.end();
    let deadband = session.body.follower.deadband;
    let steps = (config.duration / config.dt).round() as usize;
    let mut trace = Vec::with_capacity(steps / config.record_every + 2);
    let mut max_speed = 0.0f64;
    let mut travel = 0.0;
    let mut base_unsettled_at: Option<f64> = None;
    let mut ee_unsettled_at: Option<f64> = None;
    let mut max_err_after = 0.0f64;
    for k in 0..=steps {
        if config.mode == OperationalMode::Tracking {
            if let Some(c) = &circle {
                session.set_target(c.at(session.state.time));
            }
        }
        let t = session.state.time;
        let speed = session.state.base_velocity.norm();
        max_speed = max_speed.max(speed);
        if t >= events_end {
            let err = session.ee_error();
            max_err_after = max_err_after.max(err);
            if speed >= SETTLED_BASE_SPEED {
                base_unsettled_at = Some(t);
            }
            if err >= deadband {
                ee_unsettled_at = Some(t);
            }
        }
        if k % config.record_every == 0 {
            trace.push(session.row());
        }
        if k == steps {
            break;
        }
        let before = session.state.base.position;
        session.step(config.dt)?;
        travel += (session.state.base.position - before).norm();
    }
    let settle = |last: Option<f64>| match last {
        None => Some(0.0),
        Some(t) if t + 2.0 * config.dt >= config.duration => None,
        Some(t) => Some(t + config.dt - events_end),
    };
    let metrics = Experiment3Metrics {
        final_base_speed: session.state.base_velocity.norm(),
        final_ee_error: session.ee_error(),
        final_follower_deviation: session.follower_deviation(),
        max_base_speed: max_speed,
        base_travel: travel,
        base_settle_time: settle(base_unsettled_at),
        ee_settle_time: settle(ee_unsettled_at),
        max_ee_error_after_events: max_err_after,
    };
    Ok(Experiment3Report { trace, metrics })
}
