//! Actuator identification from constant-velocity gravity sweeps.
//!
//! Each gravity-affected joint is swept through `θ ∈ [-90°, 90°]` in both
//! directions while the rest of the arm is locked at home. Averaging the two
//! directions cancels friction and exposes any phase error of the modeled
//! center of mass; once that is corrected, a line fit of current against
//! model torque gives the current/torque ratio and the friction loss.
//!
//! Angles: `θ = q - φ` where `φ` places `θ = 0` at the configuration in which
//! the nominal downstream center of mass points straight up, so the nominal
//! holding torque is `-K sin θ` with `K ≥ 0`.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Rotation3, Unit, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::actuator::ActuatorParams;
use crate::dynamics::{aggregate_com, gravity_torque, ChainFrames, ComSource, DynamicsError, JointState, RobotModel};
use crate::sim::{SimError, Simulator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("degenerate data: {0}")]
    Degenerate(&'static str),
    #[error("sweeps belong to joints {0} and {1}")]
    MismatchedSweeps(usize, usize),
    #[error("up and down sweeps must move in opposite directions")]
    SameDirection,
    #[error("sweeps share no angle range")]
    EmptyOverlap,
    #[error("phase {0} rad is too large to be a model error")]
    PhaseOutOfRange(f64),
    #[error("joint is not loaded by gravity at the calibration pose")]
    GravityUnaffected,
    #[error("no constant-velocity sweep: {reason} ({fraction:.3})")]
    SweepFailed { reason: &'static str, fraction: f64 },
    #[error("no calibrated joint shares this joint's actuator type")]
    NoReferenceActuator,
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("joint {joint}: {source}")]
    Joint { joint: usize, source: Box<CalibrationError> },
}

impl CalibrationError {
    fn at(self, joint: usize) -> Self {
        match self {
            e @ CalibrationError::Joint { .. } => e,
            e => CalibrationError::Joint { joint, source: Box::new(e) },
        }
    }
}

/// Nominal gravity load of a joint when it alone moves: `G(q) = -K sin(q - φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityProfile {
    /// N·m, non-negative.
    pub amplitude: f64,
    /// Joint angle at which the downstream COM points up, rad.
    pub origin: f64,
}

impl GravityProfile {
    pub fn torque(&self, q: f64) -> f64 {
        -self.amplitude * (q - self.origin).sin()
    }
}

/// Amplitudes below this are treated as no gravity load, N·m.
pub const GRAVITY_EPS: f64 = 1e-6;

pub fn gravity_profile(model: &RobotModel, home: &[f64], joint: usize, source: ComSource) -> Result<GravityProfile, DynamicsError> {
    model.check_dim(home.len())?;
    let mut q = home.to_vec();
    let zeros = alloc::vec![0.0; home.len()];
    let mut eval = |angle: f64| -> Result<f64, DynamicsError> {
        q[joint] = angle;
        Ok(gravity_torque(model, &JointState::from_slices(&q, &zeros)?, source)?[joint])
    };
    let b = eval(0.0)?;
    let a = eval(FRAC_PI_2)?;
    // a sin q + b cos q = -K sin(q - φ)  ⇒  a = -K cos φ, b = K sin φ
    Ok(GravityProfile { amplitude: a.hypot(b), origin: b.atan2(-a) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    /// From θ = -90° to +90°.
    Up,
    Down,
}

impl SweepDirection {
    pub fn sign(self) -> f64 {
        match self {
            SweepDirection::Up => 1.0,
            SweepDirection::Down => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub t: f64,
    /// Joint angle, rad.
    pub q: f64,
    pub theta: f64,
    pub dq: f64,
    pub current: f64,
    pub model_torque: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSweep {
    pub joint: usize,
    pub direction: SweepDirection,
    /// rad/s, positive.
    pub velocity: f64,
    /// `φ` such that `q = θ + φ`.
    pub theta_origin: f64,
    pub samples: Vec<SweepSample>,
}

impl CalibrationSweep {
    /// Recompute angles and model torques against a different nominal model.
    pub fn retarget(&mut self, profile: &GravityProfile) {
        self.theta_origin = profile.origin;
        for s in &mut self.samples {
            s.theta = s.q - profile.origin;
            s.model_torque = profile.torque(s.q);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    /// rad/s.
    pub velocity: f64,
    /// Hz.
    pub sample_rate: f64,
    /// Drive and plant step, s.
    pub dt: f64,
    /// rad.
    pub half_span: f64,
    /// Fraction of samples dropped at each end.
    pub trim_fraction: f64,
    /// Allowed relative deviation from the sweep velocity.
    pub velocity_tolerance: f64,
    /// Largest fraction of trimmed samples allowed to break the tolerance.
    pub max_violation_fraction: f64,
    /// Retained angles must cover `±min_coverage`, rad.
    pub min_coverage: f64,
    /// Standard deviation of the additive current measurement noise, A.
    pub noise_std: f64,
    /// Closed-loop bandwidth of the drive's position servo, rad/s.
    pub drive_bandwidth: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            velocity: 10f64.to_radians(),
            sample_rate: 100.0,
            dt: 1e-3,
            half_span: FRAC_PI_2,
            trim_fraction: 0.05,
            velocity_tolerance: 0.05,
            max_violation_fraction: 0.1,
            min_coverage: 80f64.to_radians(),
            noise_std: 0.0,
            drive_bandwidth: 30.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.velocity > 0.0 && self.sample_rate > 0.0 && self.dt > 0.0 && self.dt <= Simulator::MAX_STEP) {
            return Err(CalibrationError::InvalidConfig("velocity, sample rate and step must be positive"));
        }
        if 1.0 / self.sample_rate < self.dt {
            return Err(CalibrationError::InvalidConfig("sample period shorter than step"));
        }
        if !(self.half_span > 0.0 && self.half_span <= PI) || !(self.min_coverage <= self.half_span) {
            return Err(CalibrationError::InvalidConfig("span must lie in (0, π] and cover min_coverage"));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(CalibrationError::InvalidConfig("trim fraction must lie in [0, 0.5)"));
        }
        if !(self.noise_std >= 0.0 && self.drive_bandwidth > 0.0) {
            return Err(CalibrationError::InvalidConfig("noise and bandwidth must be non-negative"));
        }
        Ok(())
    }
}

/// Drive one joint through a constant-velocity sweep with the arm's stock
/// position servo and record current and angle.
///
/// `model` is the nominal model that defines `θ` and the model torques.
pub fn run_sweep<R: Rng + ?Sized>(
    sim: &Simulator,
    model: &RobotModel,
    home: &[f64],
    joint: usize,
    direction: SweepDirection,
    config: &SweepConfig,
    rng: &mut R,
) -> Result<CalibrationSweep, CalibrationError> {
    config.validate()?;
    let profile = gravity_profile(model, home, joint, ComSource::Nominal)?;
    if profile.amplitude < GRAVITY_EPS {
        return Err(CalibrationError::GravityUnaffected);
    }
    let plant = sim.locked_joint_plant(home, joint)?;
    let noise = Normal::new(0.0, config.noise_std).map_err(|_| CalibrationError::InvalidConfig("noise"))?;

    let dir = direction.sign();
    let v = config.velocity;
    let q0 = profile.origin - dir * config.half_span;
    let duration = 2.0 * config.half_span / v;
    let steps = (duration / config.dt).round() as usize;
    let every = ((1.0 / config.sample_rate) / config.dt).round().max(1.0) as usize;

    // Computed-torque style PID tuned on the drive's own knowledge of the
    // joint: triple pole at -w, integrator preloaded with the holding current.
    let w = config.drive_bandwidth;
    let gain = plant.params.ratio * plant.inertia;
    let (kp, kd, ki) = (3.0 * w * w, 3.0 * w, w * w * w);
    let mut integral = plant.params.ratio * plant.gravity(q0);
    let (mut q, mut dq) = (q0, 0.0);
    let mut raw = Vec::with_capacity(steps / every + 1);
    for k in 1..=steps {
        let t = k as f64 * config.dt;
        let e = q0 + dir * v * (t - config.dt) - q;
        let de = dir * v - dq;
        integral += gain * ki * e * config.dt;
        let command = gain * (kp * e + kd * de) + integral;
        let (nq, ndq, applied) = plant.step(q, dq, command, config.dt);
        if !nq.is_finite() || !ndq.is_finite() {
            return Err(SimError::NonFinite { time: t, q: alloc::vec![nq], dq: alloc::vec![ndq], currents: alloc::vec![command] }.into());
        }
        // Log the state the current acted on, as a drive sampling both at once would.
        if k % every == 0 {
            raw.push(SweepSample {
                t: t - config.dt,
                q,
                theta: q - profile.origin,
                dq: ndq,
                current: applied,
                model_torque: profile.torque(q),
            });
        }
        q = nq;
        dq = ndq;
    }

    let trim = (raw.len() as f64 * config.trim_fraction).round() as usize;
    let trimmed = &raw[trim..raw.len() - trim];
    let tolerance = config.velocity_tolerance * v;
    let samples: Vec<SweepSample> = trimmed
        .iter()
        .filter(|s| (s.dq - dir * v).abs() <= tolerance)
        .copied()
        .map(|mut s| {
            s.current += noise.sample(rng);
            s
        })
        .collect();
    let violated = 1.0 - samples.len() as f64 / trimmed.len().max(1) as f64;
    if violated > config.max_violation_fraction {
        return Err(CalibrationError::SweepFailed { reason: "velocity not held", fraction: violated });
    }
    let lo = samples.iter().map(|s| s.theta).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.theta).fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-9;
    if !(lo <= -config.min_coverage + slack && hi >= config.min_coverage - slack) {
        return Err(CalibrationError::SweepFailed { reason: "angle coverage too small", fraction: hi.min(-lo) });
    }
    Ok(CalibrationSweep { joint, direction, velocity: v, theta_origin: profile.origin, samples })
}

/// `argmin_r Σ (c - r τ)²`.
pub fn fit_ratio_points(torque: &[f64], current: &[f64]) -> Result<f64, CalibrationError> {
    let tt: f64 = torque.iter().map(|t| t * t).sum();
    if torque.len() < 2 || tt < 1e-12 {
        return Err(CalibrationError::Degenerate("model torque vanishes"));
    }
    Ok(torque.iter().zip(current).map(|(t, c)| t * c).sum::<f64>() / tt)
}

/// `argmin_{r,l} Σ (c - (r τ + l))²`.
pub fn fit_ratio_friction_points(torque: &[f64], current: &[f64]) -> Result<(f64, f64), CalibrationError> {
    let n = torque.len();
    if n < 3 {
        return Err(CalibrationError::Degenerate("fewer than three samples"));
    }
    let nf = n as f64;
    let mt = torque.iter().sum::<f64>() / nf;
    let mc = current.iter().sum::<f64>() / nf;
    let stt: f64 = torque.iter().map(|t| (t - mt) * (t - mt)).sum();
    if stt < 1e-12 * nf {
        return Err(CalibrationError::Degenerate("model torque is constant"));
    }
    let stc: f64 = torque.iter().zip(current).map(|(t, c)| (t - mt) * (c - mc)).sum();
    let r = stc / stt;
    Ok((r, mc - r * mt))
}

fn columns(sweep: &CalibrationSweep) -> (Vec<f64>, Vec<f64>) {
    sweep.samples.iter().map(|s| (s.model_torque, s.current)).unzip()
}

pub fn fit_ratio(sweep: &CalibrationSweep) -> Result<f64, CalibrationError> {
    let (t, c) = columns(sweep);
    fit_ratio_points(&t, &c)
}

/// Ratio and signed friction loss of a single-direction sweep.
pub fn fit_ratio_friction(sweep: &CalibrationSweep) -> Result<(f64, f64), CalibrationError> {
    let (t, c) = columns(sweep);
    fit_ratio_friction_points(&t, &c)
}

/// Fit `c ≈ -s sin(θ + δ)` by linear least squares on `A sin θ + B cos θ`.
/// Returns `(s, δ)`.
pub fn fit_sinusoid(theta: &[f64], current: &[f64]) -> Result<(f64, f64), CalibrationError> {
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&th, &c) in theta.iter().zip(current) {
        let (s, co) = th.sin_cos();
        ss += s * s;
        sc += s * co;
        cc += co * co;
        ys += c * s;
        yc += c * co;
    }
    let det = ss * cc - sc * sc;
    if theta.len() < 3 || det.abs() < 1e-12 {
        return Err(CalibrationError::Degenerate("angles do not span a sinusoid"));
    }
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    // -s sin(θ + δ) = -s cos δ sin θ - s sin δ cos θ
    Ok((a.hypot(b), (-b).atan2(-a)))
}

/// Linear interpolation in samples sorted by ascending angle.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let i = points.partition_point(|p| p.0 < x).clamp(1, points.len() - 1);
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Direction-averaged current on a common 1° grid.
pub fn averaged_on_grid(up: &CalibrationSweep, down: &CalibrationSweep) -> Result<(Vec<f64>, Vec<f64>), CalibrationError> {
    if up.joint != down.joint {
        return Err(CalibrationError::MismatchedSweeps(up.joint, down.joint));
    }
    if up.direction == down.direction {
        return Err(CalibrationError::SameDirection);
    }
    let sorted = |s: &CalibrationSweep| {
        let mut p: Vec<(f64, f64)> = s.samples.iter().map(|x| (x.theta, x.current)).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        p
    };
    let (pu, pd) = (sorted(up), sorted(down));
    if pu.len() < 2 || pd.len() < 2 {
        return Err(CalibrationError::EmptyOverlap);
    }
    let lo = pu[0].0.max(pd[0].0).to_degrees().ceil() as i64;
    let hi = pu[pu.len() - 1].0.min(pd[pd.len() - 1].0).to_degrees().floor() as i64;
    if hi - lo < 2 {
        return Err(CalibrationError::EmptyOverlap);
    }
    Ok((lo..=hi)
        .map(|deg| {
            let th = (deg as f64).to_radians();
            (th, 0.5 * (interpolate(&pu, th) + interpolate(&pd, th)))
        })
        .unzip())
}

/// Scale `s = K r` and phase error `δ` from an up/down pair of sweeps.
pub fn fit_phase(up: &CalibrationSweep, down: &CalibrationSweep) -> Result<(f64, f64), CalibrationError> {
    let (theta, current) = averaged_on_grid(up, down)?;
    fit_sinusoid(&theta, &current)
}

/// New link-`joint` COM (link frame) that rotates the aggregate COM of
/// links `joint..n`, at `home`, by `angle` about the joint axis.
pub fn rotated_link_com(model: &RobotModel, home: &[f64], joint: usize, angle: f64, source: ComSource) -> Result<Vector3<f64>, DynamicsError> {
    model.check_dim(home.len())?;
    let frames = ChainFrames::compute(model, home);
    let (mass, agg) = aggregate_com(model, &frames, joint, source);
    let to_link = |p: Vector3<f64>| frames.rotations[joint].inverse() * (p - frames.origins[joint]);
    let agg_local = to_link(agg);
    let axis = Unit::new_normalize(model.links()[joint].joint_axis);
    let rotated = Rotation3::from_axis_angle(&axis, angle) * agg_local;
    let others: Vector3<f64> = (joint + 1..model.n_joints())
        .map(|k| to_link(frames.com(model, k, source)) * model.links()[k].mass)
        .sum();
    Ok((rotated * mass - others) / model.links()[joint].mass)
}

/// Largest phase error accepted as a model error.
pub const MAX_PHASE: f64 = PI / 4.0;

/// Move the nominal COM of link `joint` so the nominal gravity profile of
/// that joint shifts by `phase`.
pub fn correct_model(model: &RobotModel, home: &[f64], joint: usize, phase: f64) -> Result<RobotModel, CalibrationError> {
    if !(phase.abs() < MAX_PHASE) {
        return Err(CalibrationError::PhaseOutOfRange(phase));
    }
    let mut out = model.clone();
    if phase != 0.0 {
        let com = rotated_link_com(model, home, joint, phase, ComSource::Nominal)?;
        out.set_com_offset(joint, com);
    }
    Ok(out)
}

/// Give the true model of `joint` a phase error `phase` relative to the
/// nominal one, by rotating the true aggregate COM.
pub fn inject_phase_error(model: &RobotModel, home: &[f64], joint: usize, phase: f64) -> Result<RobotModel, DynamicsError> {
    let com = rotated_link_com(model, home, joint, phase, ComSource::True)?;
    let mut out = model.clone();
    out.set_true_com_offset(joint, com);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub ratio_hat: f64,
    /// Mean of the up and negated down offsets, A. Non-negative for real friction.
    pub friction_hat: f64,
    pub phase_hat: f64,
    pub scale_hat: f64,
    pub residual_rms: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCalibration {
    pub joint: usize,
    pub fit: FitResult,
    /// False when the estimate was borrowed from same-type actuators.
    pub swept: bool,
}

impl JointCalibration {
    /// Controller-side actuator parameters.
    pub fn params(&self, vel_threshold: f64, static_band: f64) -> ActuatorParams {
        ActuatorParams {
            ratio: self.fit.ratio_hat,
            friction_loss: self.fit.friction_hat.abs(),
            vel_threshold,
            static_band,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub joints: Vec<JointCalibration>,
    /// Nominal model with corrected centers of mass.
    pub model: RobotModel,
    /// Sweeps in the order they were run, angles against the corrected model.
    pub sweeps: Vec<CalibrationSweep>,
}

impl Calibration {
    pub fn params(&self, vel_threshold: f64, static_band: f64) -> Vec<ActuatorParams> {
        self.joints.iter().map(|j| j.params(vel_threshold, static_band)).collect()
    }
}

fn calibrate_joint<R: Rng + ?Sized>(
    sim: &Simulator,
    model: &RobotModel,
    home: &[f64],
    joint: usize,
    config: &SweepConfig,
    rng: &mut R,
) -> Result<(FitResult, RobotModel, [CalibrationSweep; 2]), CalibrationError> {
    let mut up = run_sweep(sim, model, home, joint, SweepDirection::Up, config, rng)?;
    let mut down = run_sweep(sim, model, home, joint, SweepDirection::Down, config, rng)?;
    let (scale, phase) = fit_phase(&up, &down)?;
    let corrected = correct_model(model, home, joint, phase)?;
    let profile = gravity_profile(&corrected, home, joint, ComSource::Nominal)?;
    up.retarget(&profile);
    down.retarget(&profile);
    let (r_up, l_up) = fit_ratio_friction(&up)?;
    let (r_down, l_down) = fit_ratio_friction(&down)?;
    let mut sq = 0.0;
    for (sweep, r, l) in [(&up, r_up, l_up), (&down, r_down, l_down)] {
        sq += sweep.samples.iter().map(|s| (s.current - r * s.model_torque - l).powi(2)).sum::<f64>();
    }
    let n = up.samples.len() + down.samples.len();
    let fit = FitResult {
        ratio_hat: 0.5 * (r_up + r_down),
        friction_hat: 0.5 * (l_up - l_down),
        phase_hat: phase,
        scale_hat: scale,
        residual_rms: (sq / n as f64).sqrt(),
        n_samples: n,
    };
    Ok((fit, corrected, [up, down]))
}

/// Calibrate every joint, last to first. Joints without gravity load at
/// `home` take the mean estimate of swept joints with equal actuator type.
pub fn calibrate_all<T: PartialEq, R: Rng + ?Sized>(
    sim: &Simulator,
    model: &RobotModel,
    home: &[f64],
    actuator_types: &[T],
    config: &SweepConfig,
    rng: &mut R,
) -> Result<Calibration, CalibrationError> {
    let n = model.n_joints();
    model.check_dim(actuator_types.len())?;
    model.check_dim(home.len())?;
    let mut model = model.clone();
    let mut fits: Vec<Option<FitResult>> = alloc::vec![None; n];
    let mut sweeps = Vec::new();
    for j in (0..n).rev() {
        let profile = gravity_profile(&model, home, j, ComSource::Nominal).map_err(|e| CalibrationError::from(e).at(j))?;
        if profile.amplitude < GRAVITY_EPS {
            continue;
        }
        let (fit, corrected, pair) = calibrate_joint(sim, &model, home, j, config, rng).map_err(|e| e.at(j))?;
        model = corrected;
        fits[j] = Some(fit);
        sweeps.extend(pair);
    }
    let mut joints = Vec::with_capacity(n);
    for j in 0..n {
        if let Some(fit) = fits[j] {
            joints.push(JointCalibration { joint: j, fit, swept: true });
            continue;
        }
        let peers: Vec<FitResult> = (0..n)
            .filter(|&k| actuator_types[k] == actuator_types[j])
            .filter_map(|k| fits[k])
            .collect();
        if peers.is_empty() {
            return Err(CalibrationError::NoReferenceActuator.at(j));
        }
        let m = peers.len() as f64;
        let fit = FitResult {
            ratio_hat: peers.iter().map(|f| f.ratio_hat).sum::<f64>() / m,
            friction_hat: peers.iter().map(|f| f.friction_hat).sum::<f64>() / m,
            phase_hat: 0.0,
            scale_hat: 0.0,
            residual_rms: 0.0,
            n_samples: 0,
        };
        joints.push(JointCalibration { joint: j, fit, swept: false });
    }
    Ok(Calibration { joints, model, sweeps })
}
