//! Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned
//! below. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use compliant_core::actuator::{sign, ActuatorParams, CurrentCommand};
use compliant_core::base::{BasePose, FollowerConfig, OperationalMode};
use compliant_core::calibration::*;
use compliant_core::control::torque_to_current;
use compliant_core::dynamics::*;
use compliant_core::experiments::*;
use compliant_core::presets;
use compliant_core::sim::{ScenarioEvent, SimState, Simulator};
use nalgebra::{DVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAL_REPEATS: usize = 50;
const CAL_NOISE: f64 = 0.01;
const RATIO_TOL: f64 = 0.01;
const FRICTION_TOL: f64 = 0.02;
const IQR_TOL: f64 = 0.01;
/// IQR bound where the median is zero: friction of a frictionless actuator, A.
const ZERO_FRICTION_IQR: f64 = 0.002;
/// IQR bound where the median is zero: phase of a joint without error, rad.
const ZERO_PHASE_IQR: f64 = 0.05 * std::f64::consts::PI / 180.0;
const CAL_RUNTIME: f64 = 60.0;

const PHASE_RECOVERY_DEG: f64 = 0.5;
const PHASE_REFIT_DEG: f64 = 0.05;
const PHASE_GRID_DEG: f64 = 0.1;

const STIFF_IN_CIRCLE: f64 = 1e-3;
const IMPEDANCE_IN_CIRCLE: f64 = 10e-3;
const GAP_RANGE: (f64, f64) = (0.4, 0.6);
const EXP2_RUNTIME: f64 = 300.0;

const SETTLED_SPEED: f64 = 1e-3;
const SETTLE_WITHIN: f64 = 3.0;
const REACQUIRE: f64 = 5e-3;

const JACOBIAN_TOL: f64 = 1e-5;
const GRAVITY_TOL: f64 = 1e-6;
const ENERGY_DRIFT: f64 = 1e-3;

struct Gate {
    failed: usize,
}

impl Gate {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed += 1;
        }
    }
}

fn degrees(x: f64) -> f64 {
    x.to_degrees()
}

fn simulator(actuators: Vec<ActuatorParams>) -> Simulator {
    let mut sim = Simulator::new(presets::true_robot(), actuators).unwrap();
    sim.mount = presets::default_mount();
    sim
}

/// One actuator set from a (ratio, friction) per type.
fn actuators(types: &[(f64, f64); 3]) -> Vec<ActuatorParams> {
    presets::ACTUATOR_TYPES
        .iter()
        .map(|k| {
            let (r, l) = match *k {
                "large" => types[0],
                "medium" => types[1],
                _ => types[2],
            };
            ActuatorParams::new(r, l).unwrap()
        })
        .collect()
}

fn calibrate(sim: &Simulator, noise: f64, seed: u64) -> Calibration {
    let config = SweepConfig { noise_std: noise, ..SweepConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    calibrate_all(sim, &presets::default_robot(), presets::home_pose().as_slice(), &presets::actuator_types(), &config, &mut rng).unwrap()
}

fn calibration_recovery(gate: &mut Gate) {
    // Accuracy: fresh truth drawn from the full range every repetition.
    let mut draw = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_r, mut worst_l) = (0.0f64, 0.0f64);
    for k in 0..CAL_REPEATS {
        let types = [(); 3].map(|_| (draw.random_range(0.5..=3.0), draw.random_range(0.0..=1.0)));
        let truth = actuators(&types);
        let cal = calibrate(&simulator(truth.clone()), CAL_NOISE, 100 + k as u64);
        for (j, t) in cal.joints.iter().zip(&truth) {
            worst_r = worst_r.max((j.fit.ratio_hat - t.ratio).abs() / t.ratio);
            worst_l = worst_l.max((j.fit.friction_hat.abs() - t.friction_loss).abs());
        }
    }
    gate.check(
        "calibration accuracy, r in [0.5, 3], l in [0, 1], sigma 0.01 A, 50 draws",
        worst_r < RATIO_TOL && worst_l < FRICTION_TOL,
        format!("worst ratio error {:.3}% (< 1%), worst friction error {:.4} A (< 0.02 A)", 100.0 * worst_r, worst_l),
    );

    // Spread: fixed truth at the range extremes, including l = 0.
    let types = [(0.5, 1.0), (3.0, 0.0), (1.75, 0.5)];
    let sim = simulator(actuators(&types));
    let started = Instant::now();
    let config = Experiment1Config { repeats: CAL_REPEATS, seed: 7, sweep: SweepConfig { noise_std: CAL_NOISE, ..SweepConfig::default() } };
    let report = run_experiment_1(&sim, &presets::default_robot(), presets::home_pose().as_slice(), &presets::actuator_types(), &config).unwrap();
    let runtime = started.elapsed().as_secs_f64();
    let truth = actuators(&types);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut zero = (0.0f64, 0.0f64);
    let mut bias = 0.0f64;
    for s in &report.summary {
        worst.0 = worst.0.max(s.ratio.iqr / s.ratio.median);
        bias = bias.max((s.ratio.median - truth[s.joint].ratio).abs() / truth[s.joint].ratio);
        if truth[s.joint].friction_loss > 0.0 {
            worst.1 = worst.1.max(s.friction.iqr / s.friction.median.abs());
        } else {
            zero.0 = zero.0.max(s.friction.iqr);
        }
        if degrees(s.phase.median).abs() >= 1.0 {
            worst.2 = worst.2.max(s.phase.iqr / s.phase.median.abs());
        } else {
            zero.1 = zero.1.max(s.phase.iqr);
        }
    }
    gate.check(
        "calibration spread, 50 repetitions",
        worst.0 < IQR_TOL && worst.1 < IQR_TOL && worst.2 < IQR_TOL && zero.0 < ZERO_FRICTION_IQR && zero.1 < ZERO_PHASE_IQR,
        format!(
            "IQR/median ratio {:.3}%, friction {:.3}%, phase {:.3}% (< 1%); l = 0 IQR {:.5} A (< 0.002 A); zero-phase IQR {:.4} deg (< 0.05 deg); median ratio bias {:.3}%",
            100.0 * worst.0,
            100.0 * worst.1,
            100.0 * worst.2,
            zero.0,
            degrees(zero.1),
            100.0 * bias
        ),
    );
    gate.check("calibration runtime, 50 repetitions", runtime < CAL_RUNTIME, format!("{runtime:.1} s (< 60 s)"));
}

/// Least-squares phase over a 0.01° grid, scale solved per grid point.
fn phase_by_grid(theta: &[f64], current: &[f64], center: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in -1000..=1000 {
        let d = center + (i as f64 * 0.01).to_radians();
        let basis: Vec<f64> = theta.iter().map(|t| -(t + d).sin()).collect();
        let s = basis.iter().zip(current).map(|(b, c)| b * c).sum::<f64>() / basis.iter().map(|b| b * b).sum::<f64>();
        let cost: f64 = basis.iter().zip(current).map(|(b, c)| (c - s * b).powi(2)).sum();
        if cost < best.0 {
            best = (cost, d);
        }
    }
    best.1
}

fn phase_recovery(gate: &mut Gate) {
    let joint = presets::DEFAULT_PHASE_JOINT;
    let injected = presets::DEFAULT_PHASE_ERROR;
    let sim = simulator(presets::default_actuators());
    let noisy = calibrate(&sim, CAL_NOISE, 11);
    let found = noisy.joints[joint].fit.phase_hat;
    gate.check(
        "phase recovery, injected -10 deg",
        (degrees(found - injected)).abs() < PHASE_RECOVERY_DEG,
        format!("recovered {:.3} deg, error {:.3} deg (< 0.5 deg)", degrees(found), degrees(found - injected).abs()),
    );

    let clean = calibrate(&sim, 0.0, 0);
    let config = SweepConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let home = presets::home_pose();
    let refit = calibrate_all(&sim, &clean.model, home.as_slice(), &presets::actuator_types(), &config, &mut rng).unwrap();
    let residual = refit.joints.iter().map(|j| degrees(j.fit.phase_hat).abs()).fold(0.0, f64::max);
    gate.check("phase re-fit after model correction", residual < PHASE_REFIT_DEG, format!("largest re-fit phase {residual:.4} deg (< 0.05 deg)"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noisy_config = SweepConfig { noise_std: CAL_NOISE, ..config };
    let nominal = presets::default_robot();
    let up = run_sweep(&sim, &nominal, home.as_slice(), joint, SweepDirection::Up, &noisy_config, &mut rng).unwrap();
    let down = run_sweep(&sim, &nominal, home.as_slice(), joint, SweepDirection::Down, &noisy_config, &mut rng).unwrap();
    let (theta, current) = averaged_on_grid(&up, &down).unwrap();
    let (_, closed) = fit_sinusoid(&theta, &current).unwrap();
    let grid = phase_by_grid(&theta, &current, injected);
    gate.check(
        "phase closed form vs 0.01 deg grid",
        degrees(closed - grid).abs() < PHASE_GRID_DEG,
        format!("closed {:.4} deg, grid {:.4} deg, gap {:.4} deg (< 0.1 deg)", degrees(closed), degrees(grid), degrees(closed - grid).abs()),
    );
}

fn friction_compensation_limits(gate: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let p = ActuatorParams::new(rng.random_range(0.5..3.0), rng.random_range(0.0..1.0)).unwrap();
        let tau = rng.random_range(-5.0..5.0);
        let at_rest = p.ratio * tau + p.friction_loss * sign(tau);
        let dq = rng.random_range(p.vel_threshold..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let moving = p.ratio * tau + p.friction_loss * sign(dq);
        if torque_to_current(&p, tau, 0.0) != at_rest || torque_to_current(&p, tau, dq) != moving {
            mismatches += 1;
        }
    }
    gate.check("friction compensation limits, 10^4 inputs", mismatches == 0, format!("{mismatches} inexact of 10000"));
}

fn rig() -> Rig {
    Rig::default_calibrated(7).unwrap()
}

fn half_circle(gate: &mut Gate, rig: &Rig) {
    let started = Instant::now();
    let run = |controller, spring| {
        run_experiment_2(rig, &Experiment2Config { controller, spring_stiffness: spring, ..Experiment2Config::default() }).unwrap().metrics
    };
    let stiff = run(ControllerKind::StiffVelocity, 40.0);
    let soft = run(ControllerKind::Impedance, 10.0);
    let matched = run(ControllerKind::Impedance, 40.0);
    let hard = run(ControllerKind::Impedance, 120.0);
    let runtime = started.elapsed().as_secs_f64();
    gate.check(
        "half circle, stiff controller in-circle error",
        stiff.in_circle_rms < STIFF_IN_CIRCLE,
        format!("RMS {:.4} mm, max {:.4} mm (< 1 mm)", 1e3 * stiff.in_circle_rms, 1e3 * stiff.in_circle_max),
    );
    gate.check(
        "half circle, impedance in-circle error",
        matched.in_circle_rms <= IMPEDANCE_IN_CIRCLE,
        format!("RMS {:.2} mm, max {:.2} mm (<= 10 mm)", 1e3 * matched.in_circle_rms, 1e3 * matched.in_circle_max),
    );
    gate.check(
        "half circle, gap ratio with k_s = K_d",
        (GAP_RANGE.0..=GAP_RANGE.1).contains(&matched.gap_ratio),
        format!("{:.3} (in [0.4, 0.6])", matched.gap_ratio),
    );
    gate.check(
        "half circle, equilibrium radius ordering",
        soft.equilibrium_radius > matched.equilibrium_radius && matched.equilibrium_radius > hard.equilibrium_radius,
        format!(
            "{:.4} m > {:.4} m > {:.4} m for k_s = 10, 40, 120 N/m",
            soft.equilibrium_radius, matched.equilibrium_radius, hard.equilibrium_radius
        ),
    );
    gate.check("half circle runtime", runtime < EXP2_RUNTIME, format!("{runtime:.1} s for four runs (< 300 s)"));
}

fn whole_body(gate: &mut Gate, rig: &Rig) {
    let deadband = FollowerConfig::DEFAULT_DEADBAND;
    let still = run_experiment_3(rig, &Experiment3Config { events: vec![], duration: 10.0, ..Experiment3Config::default() }).unwrap().metrics;
    gate.check(
        "guidance without interaction is stationary",
        still.max_base_speed < SETTLED_SPEED && still.max_ee_error_after_events < deadband,
        format!("max base speed {:.2e} m/s, max EE error {:.3} mm (< 5 mm)", still.max_base_speed, 1e3 * still.max_ee_error_after_events),
    );

    let push = run_experiment_3(rig, &Experiment3Config::default()).unwrap().metrics;
    let settled = push.base_settle_time.is_some_and(|t| t < SETTLE_WITHIN);
    gate.check(
        "guidance push and release",
        settled && push.final_follower_deviation < deadband,
        format!(
            "base travel {:.3} m, settles below 1 mm/s {:.2} s after release (< 3 s), follower deviation {:.2} mm (< 5 mm)",
            push.base_travel,
            push.base_settle_time.unwrap_or(f64::NAN),
            1e3 * push.final_follower_deviation
        ),
    );

    let hold = ScenarioEvent::Hold { start: 3.0, duration: 10.0, stiffness: 400.0, damping: 20.0 };
    let circle = run_experiment_3(
        rig,
        &Experiment3Config { mode: OperationalMode::Tracking, circle: Some((0.3, 0.05)), events: vec![hold], duration: 23.0, ..Experiment3Config::default() },
    )
    .unwrap()
    .metrics;
    let fixed = run_experiment_3(
        rig,
        &Experiment3Config {
            mode: OperationalMode::Tracking,
            world_target: Some(Vector3::new(1.2, 0.3, 0.25)),
            events: vec![ScenarioEvent::Push { start: 1.0, duration: 5.0, force: Vector3::new(0.0, -3.0, 0.0) }],
            duration: 12.0,
            ..Experiment3Config::default()
        },
    )
    .unwrap()
    .metrics;
    gate.check(
        "tracking reacquires the target after release",
        circle.final_ee_error < REACQUIRE && fixed.final_ee_error < REACQUIRE,
        format!(
            "moving circle after a 10 s hold {:.2} mm (largest escape {:.0} mm), static target after a 5 s push {:.2} mm (< 5 mm)",
            1e3 * circle.final_ee_error,
            1e3 * circle.max_ee_error_after_events,
            1e3 * fixed.final_ee_error
        ),
    );
}

fn numerical_hygiene(gate: &mut Gate) {
    let model = presets::true_robot();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let (mut jac_err, mut grav_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let state = JointState::from_slices(&q, &[0.0; 6]).unwrap();
        let jac = jacobian(&model, &state).unwrap();
        let g = gravity_torque(&model, &state, ComSource::True).unwrap();
        for j in 0..6 {
            let (mut hi, mut lo) = (q.clone(), q.clone());
            hi[j] += h;
            lo[j] -= h;
            let column = (ee_position(&model, &hi) - ee_position(&model, &lo)) / (2.0 * h);
            jac_err = jac_err.max((column - jac.column(j)).amax());
            let slope = (potential_energy(&model, &hi, ComSource::True) - potential_energy(&model, &lo, ComSource::True)) / (2.0 * h);
            grav_err = grav_err.max((slope - g[j]).abs());
        }
    }
    gate.check("Jacobian vs central differences", jac_err < JACOBIAN_TOL, format!("max {jac_err:.2e} (< 1e-5)"));
    gate.check("gravity torque vs potential gradient", grav_err < GRAVITY_TOL, format!("max {grav_err:.2e} N·m (< 1e-6)"));

    let frictionless: Vec<ActuatorParams> = (0..6).map(|_| ActuatorParams::new(1.0, 0.0).unwrap()).collect();
    let sim = Simulator::new(model.clone(), frictionless).unwrap();
    let dt = 1e-3;
    let mut s = SimState::at_rest(DVector::from_vec(vec![0.2, 0.6, -1.2, -0.4, 0.6, 0.3]), BasePose::origin());
    let energy = |s: &SimState| {
        let m = s.step_midpoint(dt);
        kinetic_energy(&model, &m, ComSource::True) + potential_energy(&model, m.q.as_slice(), ComSource::True)
    };
    let mut e = vec![energy(&s)];
    let mut ke = 0.0f64;
    for _ in 0..10_000 {
        s = sim.step(&s, &CurrentCommand::zeros(6), &Vector2::zeros(), dt).unwrap();
        e.push(energy(&s));
        ke = ke.max(kinetic_energy(&model, &s.joints, ComSource::True));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let drift = (mean(&e[e.len() - 1000..]) - mean(&e[..1000])).abs() / ke;
    gate.check(
        "passive energy drift over 10 s at 1 ms",
        drift < ENERGY_DRIFT,
        format!("{:.2e} of peak kinetic energy (< 1e-3)", drift),
    );

    let sim = simulator(presets::default_actuators());
    let same_calibration = calibrate(&sim, CAL_NOISE, 3) == calibrate(&sim, CAL_NOISE, 3);
    let rig = Rig::default_calibrated(3).unwrap();
    let config = Experiment3Config { duration: 8.0, ..Experiment3Config::default() };
    let same_trace = run_experiment_3(&rig, &config).unwrap().trace == run_experiment_3(&rig, &config).unwrap().trace;
    gate.check(
        "deterministic under a fixed seed",
        same_calibration && same_trace,
        format!("calibration identical: {same_calibration}, whole-body trace identical: {same_trace}"),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate { failed: 0 };
    calibration_recovery(&mut gate);
    phase_recovery(&mut gate);
    friction_compensation_limits(&mut gate);
    let rig = rig();
    half_circle(&mut gate, &rig);
    whole_body(&mut gate, &rig);
    numerical_hygiene(&mut gate);
    if gate.failed > 0 {
        println!("{} criteria failed", gate.failed);
        return ExitCode::FAILURE;
    }
    println!("all criteria passed");
    ExitCode::SUCCESS
}
