//! The `sim` subcommands. Each writes its artifacts into an output directory
//! and returns a JSON summary that is also saved as a sidecar.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use compliant_core::base::OperationalMode;
use compliant_core::calibration::Calibration;
use compliant_core::experiments::{
    run_experiment_1, run_experiment_2, run_experiment_3, Experiment1Config, Experiment2Metrics, Experiment3Config,
    Experiment3Metrics, Rig, Spread, WholeBodySession,
};
use serde_json::{json, Value};

use crate::config::Config;
use crate::records::{self, CalibrationRecord};

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: Config,
    pub seed: u64,
    pub out: PathBuf,
    /// Skip calibration and load this document instead.
    pub calibration: Option<PathBuf>,
}

impl RunContext {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    /// The true plant plus the controller's view of it, calibrated now or
    /// loaded from a calibration document.
    pub fn rig(&self) -> Result<(Rig, Option<Calibration>)> {
        let c = &self.config;
        let sim = c.simulator()?;
        let nominal = c.nominal_model()?;
        let (mut rig, cal) = match &self.calibration {
            Some(path) => {
                let record = CalibrationRecord::load(path)?;
                let rig = Rig {
                    sim,
                    model: record.model(&nominal)?,
                    params: record.params(c.controller.velocity_threshold)?,
                    impedance: c.impedance()?,
                    home: c.home()?,
                    follower_gain: c.base.gain,
                    deadband: c.base.deadband,
                };
                (rig, None)
            }
            None => {
                let (rig, cal) = Rig::calibrated(sim, &nominal, c.home()?, &c.actuator_types(), &c.sweep()?, c.impedance()?, self.seed)?;
                (rig, Some(cal))
            }
        };
        c.configure_rig(&mut rig)?;
        Ok((rig, cal))
    }
}

fn spread_json(s: &Spread) -> Value {
    json!({ "median": s.median, "iqr": s.iqr })
}

fn save_calibration(ctx: &RunContext, cal: &Calibration) -> Result<Value> {
    let record = CalibrationRecord::new(cal, &ctx.config.actuator_types());
    record.save(&ctx.path("calibration.json"))?;
    records::write_sweeps(&ctx.path("sweeps.csv"), &cal.sweeps)?;
    Ok(serde_json::to_value(&record)?)
}

/// Calibrate once, or `repeats` times with independent noise.
pub fn calibrate(ctx: &RunContext, repeats: usize) -> Result<Value> {
    ctx.prepare()?;
    let started = Instant::now();
    let (_, cal) = RunContext { calibration: None, ..ctx.clone() }.rig()?;
    let calibration = save_calibration(ctx, &cal.expect("freshly calibrated"))?;
    let mut summary = json!({ "command": "calibrate", "seed": ctx.seed, "config": ctx.config, "calibration": calibration });
    if repeats > 1 {
        summary["repeats"] = repetitions(ctx, repeats)?;
    }
    summary["runtime_s"] = json!(started.elapsed().as_secs_f64());
    records::write_json(&ctx.path("calibrate.json"), &summary)?;
    Ok(summary)
}

fn repetitions(ctx: &RunContext, repeats: usize) -> Result<Value> {
    let c = &ctx.config;
    let config = Experiment1Config { repeats, seed: ctx.seed, sweep: c.sweep()? };
    let report = run_experiment_1(&c.simulator()?, &c.nominal_model()?, c.home()?.as_slice(), &c.actuator_types(), &config)?;
    records::write_rounds(&ctx.path("rounds.csv"), &report)?;
    let truth = c.true_actuators()?;
    let joints: Vec<Value> = report
        .summary
        .iter()
        .map(|s| {
            json!({
                "joint": s.joint,
                "true_ratio": truth[s.joint].ratio,
                "true_friction": truth[s.joint].friction_loss,
                "ratio": spread_json(&s.ratio),
                "friction": spread_json(&s.friction),
                "phase_deg": { "median": s.phase.median.to_degrees(), "iqr": s.phase.iqr.to_degrees() },
            })
        })
        .collect();
    Ok(json!({ "count": repeats, "joints": joints }))
}

/// Repeated calibration consistency.
pub fn experiment_1(ctx: &RunContext, repeats: usize) -> Result<Value> {
    ctx.prepare()?;
    let started = Instant::now();
    let mut summary = json!({ "command": "exp1", "seed": ctx.seed, "config": ctx.config });
    summary["repeats"] = repetitions(ctx, repeats)?;
    summary["runtime_s"] = json!(started.elapsed().as_secs_f64());
    records::write_json(&ctx.path("exp1.json"), &summary)?;
    Ok(summary)
}

pub fn experiment_2_json(m: &Experiment2Metrics) -> Value {
    json!({
        "in_circle_rms_m": m.in_circle_rms,
        "in_circle_max_m": m.in_circle_max,
        "in_circle_lag_rms_m": m.in_circle_lag_rms,
        "gap_ratio": m.gap_ratio,
        "equilibrium_radius_m": m.equilibrium_radius,
        "excursions": m.excursions,
    })
}

/// Arm-only half-circle tracking against the spring tether.
pub fn experiment_2(ctx: &RunContext) -> Result<Value> {
    ctx.prepare()?;
    let (rig, cal) = ctx.rig()?;
    if let Some(cal) = &cal {
        save_calibration(ctx, cal)?;
    }
    let config = ctx.config.experiment_2()?;
    let report = run_experiment_2(&rig, &config)?;
    records::write_trace(&ctx.path("exp2_trace.csv"), &report.trace)?;
    let summary = json!({ "command": "exp2", "seed": ctx.seed, "config": ctx.config, "metrics": experiment_2_json(&report.metrics) });
    records::write_json(&ctx.path("exp2.json"), &summary)?;
    Ok(summary)
}

pub fn experiment_3_json(m: &Experiment3Metrics) -> Value {
    json!({
        "final_base_speed_m_s": m.final_base_speed,
        "final_ee_error_m": m.final_ee_error,
        "final_follower_deviation_m": m.final_follower_deviation,
        "max_base_speed_m_s": m.max_base_speed,
        "base_travel_m": m.base_travel,
        "base_settle_time_s": m.base_settle_time,
        "ee_settle_time_s": m.ee_settle_time,
        "max_ee_error_after_events_m": m.max_ee_error_after_events,
    })
}

/// Whole-body run; `name` labels the artifacts (`exp3`, `guide`, `track`).
pub fn whole_body(ctx: &RunContext, name: &str, config: &Experiment3Config) -> Result<Value> {
    ctx.prepare()?;
    let (rig, cal) = ctx.rig()?;
    if let Some(cal) = &cal {
        save_calibration(ctx, cal)?;
    }
    let report = run_experiment_3(&rig, config)?;
    records::write_trace(&ctx.path(&format!("{name}_trace.csv")), &report.trace)?;
    let summary = json!({ "command": name, "seed": ctx.seed, "config": ctx.config, "metrics": experiment_3_json(&report.metrics) });
    records::write_json(&ctx.path(&format!("{name}.json")), &summary)?;
    Ok(summary)
}

/// Guidance mode with the configured scenario.
pub fn guide(ctx: &RunContext) -> Result<Value> {
    let config = Experiment3Config { mode: OperationalMode::Guidance, circle: None, ..ctx.config.experiment_3()? };
    whole_body(ctx, "guide", &config)
}

/// Tracking mode following a circle.
pub fn track(ctx: &RunContext, radius: f64, speed: f64) -> Result<Value> {
    let config = Experiment3Config { mode: OperationalMode::Tracking, circle: Some((radius, speed)), ..ctx.config.experiment_3()? };
    whole_body(ctx, "track", &config)
}

/// A live session for serve mode, in the configured mode with the
/// whole-body gains.
pub fn live_session(ctx: &RunContext) -> Result<WholeBodySession> {
    let (mut rig, cal) = ctx.rig()?;
    if let Some(cal) = &cal {
        ctx.prepare()?;
        save_calibration(ctx, cal)?;
    }
    let w = &ctx.config.whole_body;
    rig.impedance = rig.impedance.with_gains(w.stiffness, w.damping);
    rig.impedance.validate()?;
    let mode = crate::config::parse_mode(&w.mode)?;
    let mut session = WholeBodySession::new(&rig, mode)?;
    if let (OperationalMode::Tracking, Some(p)) = (mode, w.target) {
        session.set_target(p.into());
    }
    Ok(session)
}

/// Default output directory for a subcommand.
pub fn default_out(command: &str) -> PathBuf {
    Path::new("out").join(command)
}
