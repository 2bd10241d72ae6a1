//! Configuration parsing and the calibration document round trip.

use std::path::Path;

use approx::assert_relative_eq;
use compliant_core::experiments::{Experiment2Config, Experiment3Config, Rig};
use compliant_core::presets;
use compliant_sim::commands::RunContext;
use compliant_sim::config::{Config, EventSpec, ScenarioFile};
use compliant_sim::records::CalibrationRecord;

fn repo_file(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(name)
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let config = Config::load(&repo_file("configs/default.toml")).unwrap();
    assert_eq!(config, Config::default());
}

#[test]
fn defaults_reproduce_the_library_experiment_settings() {
    let c = Config::default();
    let e2 = c.experiment_2().unwrap();
    let d2 = Experiment2Config::default();
    assert_relative_eq!(e2.arc.0, d2.arc.0, epsilon = 1e-12);
    assert_relative_eq!(e2.arc.1, d2.arc.1, epsilon = 1e-12);
    assert_eq!(Experiment2Config { arc: d2.arc, ..e2 }, d2);
    assert_eq!(c.experiment_3().unwrap(), Experiment3Config::default());
    assert_eq!(c.true_actuators().unwrap(), presets::default_actuators());
    assert_eq!(c.nominal_model().unwrap(), presets::default_robot());
    let truth = c.true_model().unwrap();
    for (a, b) in truth.links().iter().zip(presets::true_robot().links()) {
        assert!((a.com_offset_true - b.com_offset_true).norm() < 1e-12);
    }
}

#[test]
fn empty_and_partial_files_fall_back_to_defaults() {
    assert_eq!(toml::from_str::<Config>("").unwrap(), Config::default());
    let c: Config = toml::from_str("[controller]\nstiffness = 80.0\n").unwrap();
    assert_eq!(c.controller.stiffness, 80.0);
    assert_eq!(c.controller.damping, Config::default().controller.damping);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    assert!(toml::from_str::<Config>("[controller]\nstifness = 80.0\n").is_err());
    let c: Config = toml::from_str("[tether]\ncontroller = \"floppy\"\n").unwrap();
    assert!(c.experiment_2().is_err());
    let c: Config = toml::from_str("[whole_body]\nmode = \"dance\"\n").unwrap();
    assert!(c.experiment_3().is_err());
    let c: Config = toml::from_str("[sweep]\nsample_rate_hz = -1.0\n").unwrap();
    assert!(c.sweep().is_err());
    let c: Config = toml::from_str("[robot]\nposture = [0.0, 1.0]\n").unwrap();
    assert!(c.posture().is_err());
}

#[test]
fn custom_robot_from_link_tables() {
    let text = r#"
        [robot]
        phase_error_deg = 0.0
        phase_joint = 0
        [[robot.links]]
        length = 0.3
        mass = 1.0
        com = [0.15, 0.0, 0.0]
        axis = [0.0, -1.0, 0.0]
        inertia = [1e-3, 8e-3, 8e-3]
        actuator = "large"
        [[robot.links]]
        length = 0.2
        mass = 0.5
        com = [0.1, 0.0, 0.0]
        axis = [0.0, -2.0, 0.0]
        inertia = [1e-3, 2e-3, 2e-3]
        actuator = "tiny"
        [[actuators]]
        name = "large"
        ratio = 1.5
        friction = 0.1
    "#;
    let c: Config = toml::from_str(text).unwrap();
    let model = c.nominal_model().unwrap();
    assert_eq!(model.n_joints(), 2);
    assert_relative_eq!(model.links()[1].joint_axis.norm(), 1.0, epsilon = 1e-12);
    assert_eq!(c.home().unwrap().len(), 2);
    // "tiny" has no truth entry.
    assert!(c.true_actuators().is_err());
}

#[test]
fn scenario_file_parses() {
    let s = ScenarioFile::load(&repo_file("configs/push_and_hold.toml")).unwrap();
    assert_eq!(s.event.len(), 2);
    assert!(matches!(s.event[1], EventSpec::Hold { stiffness, .. } if stiffness == 400.0));
}

#[test]
fn calibration_document_round_trips_into_the_same_rig() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext { config: Config::default(), seed: 3, out: dir.path().into(), calibration: None };
    let (fresh, cal) = ctx.rig().unwrap();
    let path = dir.path().join("calibration.json");
    CalibrationRecord::new(&cal.unwrap(), &ctx.config.actuator_types()).save(&path).unwrap();

    let text: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["ratio", "friction", "phase_deg", "residual_rms", "n_samples"] {
        assert!(text["joints"][1].get(key).is_some(), "{key}");
    }
    assert_eq!(text["com_offsets"].as_array().unwrap().len(), 6);

    let loaded: Rig = RunContext { calibration: Some(path), ..ctx }.rig().unwrap().0;
    assert_eq!(loaded.params, fresh.params);
    for (a, b) in loaded.model.links().iter().zip(fresh.model.links()) {
        assert_eq!(a.com_offset, b.com_offset);
    }
}
