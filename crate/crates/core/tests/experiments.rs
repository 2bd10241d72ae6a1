//! End-to-end runs of the tethered half-circle and whole-body experiments on
//! the calibrated default robot.

use std::sync::OnceLock;

use compliant_core::base::OperationalMode;
use compliant_core::calibration::SweepConfig;
use compliant_core::experiments::*;
use compliant_core::presets;
use compliant_core::sim::{ScenarioEvent, Simulator};
use nalgebra::Vector3;

fn rig() -> &'static Rig {
    static RIG: OnceLock<Rig> = OnceLock::new();
    RIG.get_or_init(|| Rig::default_calibrated(7).unwrap())
}

fn half_circle(controller: ControllerKind, spring: f64) -> Experiment2Metrics {
    let config = Experiment2Config { controller, spring_stiffness: spring, ..Experiment2Config::default() };
    let m = run_experiment_2(rig(), &config).unwrap().metrics;
    println!("{controller:?} k={spring}: {m:?}");
    m
}

#[test]
fn stiff_controller_follows_the_circle() {
    let m = half_circle(ControllerKind::StiffVelocity, 40.0);
    assert!(m.in_circle_rms < 1e-3, "{m:?}");
}

#[test]
fn impedance_controller_follows_the_circle_and_yields_to_the_spring() {
    let m = half_circle(ControllerKind::Impedance, 40.0);
    assert!(m.in_circle_rms <= 0.010, "{m:?}");
    assert!((0.4..=0.6).contains(&m.gap_ratio), "{m:?}");
    assert!(m.excursions > 0);
}

#[test]
fn stiffer_springs_hold_the_end_effector_closer() {
    let runs: Vec<Experiment2Metrics> = [10.0, 40.0, 120.0].iter().map(|&k| half_circle(ControllerKind::Impedance, k)).collect();
    let radii: Vec<f64> = runs.iter().map(|m| m.equilibrium_radius).collect();
    assert!(radii[0] > radii[1] && radii[1] > radii[2], "{radii:?}");
    assert!(runs[0].gap_ratio > 0.75, "{:?}", runs[0]);
}

#[test]
fn halving_the_step_barely_changes_the_half_circle_metrics() {
    let coarse = run_experiment_2(rig(), &Experiment2Config::default()).unwrap().metrics;
    let fine = run_experiment_2(rig(), &Experiment2Config { dt: 5e-4, record_every: 20, ..Experiment2Config::default() }).unwrap().metrics;
    for (a, b) in [(coarse.in_circle_rms, fine.in_circle_rms), (coarse.gap_ratio, fine.gap_ratio), (coarse.equilibrium_radius, fine.equilibrium_radius)] {
        assert!((a - b).abs() < 0.02 * b, "{a} vs {b}");
    }
}

#[test]
fn noiseless_calibration_repeats_exactly() {
    let mut sim = Simulator::new(presets::true_robot(), presets::default_actuators()).unwrap();
    sim.mount = presets::default_mount();
    let config = Experiment1Config { repeats: 3, seed: 1, sweep: SweepConfig::default() };
    let report = run_experiment_1(&sim, &presets::default_robot(), presets::home_pose().as_slice(), &presets::actuator_types(), &config).unwrap();
    assert_eq!(report.rounds.len(), 3);
    for (j, s) in report.summary.iter().enumerate() {
        assert_eq!((s.ratio.iqr, s.friction.iqr, s.phase.iqr), (0.0, 0.0, 0.0), "joint {j}");
        let truth = presets::default_actuators()[j];
        assert!((s.ratio.median - truth.ratio).abs() < 0.005 * truth.ratio, "joint {j}: {s:?}");
        assert!((s.friction.median.abs() - truth.friction_loss).abs() < 0.005 * truth.friction_loss, "joint {j}: {s:?}");
    }
}

fn whole_body(config: Experiment3Config) -> Experiment3Metrics {
    let m = run_experiment_3(rig(), &config).unwrap().metrics;
    println!("{:?}: {m:?}", config.mode);
    m
}

#[test]
fn guidance_without_interaction_is_stationary() {
    let m = whole_body(Experiment3Config { events: vec![], duration: 5.0, ..Experiment3Config::default() });
    assert!(m.max_base_speed < SETTLED_BASE_SPEED, "{m:?}");
    assert!(m.final_follower_deviation < 0.005, "{m:?}");
}

#[test]
fn guidance_push_and_release_settles() {
    let config = Experiment3Config::default();
    let report = run_experiment_3(rig(), &config).unwrap();
    let m = report.metrics;
    // Base moves only forward along the push while it lasts.
    let during: Vec<f64> = report.trace.iter().filter(|r| (2.0..7.0).contains(&r.time)).map(|r| r.base.position.x).collect();
    assert!(during.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(m.base_travel > 0.05, "{m:?}");
    assert!(m.base_settle_time.is_some_and(|t| t < 3.0), "{m:?}");
    assert!(m.final_base_speed < SETTLED_BASE_SPEED);
    assert!(m.final_follower_deviation < 0.005, "{m:?}");
}

#[test]
fn tracking_reacquires_a_static_target_after_release() {
    let m = whole_body(Experiment3Config {
        mode: OperationalMode::Tracking,
        world_target: Some(Vector3::new(1.2, 0.3, 0.25)),
        duration: 12.0,
        ..Experiment3Config::default()
    });
    assert!(m.final_ee_error < 0.005, "{m:?}");
}

#[test]
fn tracking_reacquires_a_circle_after_a_hold() {
    let m = whole_body(Experiment3Config {
        mode: OperationalMode::Tracking,
        circle: Some((0.3, 0.05)),
        events: vec![ScenarioEvent::Hold { start: 3.0, duration: 10.0, stiffness: 400.0, damping: 20.0 }],
        duration: 23.0,
        ..Experiment3Config::default()
    });
    assert!(m.final_ee_error < 0.005, "{m:?}");
}

#[test]
fn tracking_a_moving_circle_recovers_from_a_push() {
    let m = whole_body(Experiment3Config {
        mode: OperationalMode::Tracking,
        circle: Some((0.3, 0.05)),
        events: vec![ScenarioEvent::Push { start: 3.0, duration: 1.0, force: Vector3::new(0.0, 3.0, 0.0) }],
        duration: 20.0,
        ..Experiment3Config::default()
    });
    assert!(m.ee_settle_time.is_some_and(|t| t < 3.0), "{m:?}");
    assert!(m.final_ee_error < 0.005, "{m:?}");
}
