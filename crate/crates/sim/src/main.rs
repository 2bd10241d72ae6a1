use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use compliant_sim::commands::{self, RunContext};
use compliant_sim::config::{Config, ScenarioFile};
use compliant_sim::serve::{serve, ServeOptions};
use log::info;

#[derive(Parser)]
#[command(name = "sim", version, about = "Calibrate and simulate a compliant mobile manipulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out/<command>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use this calibration document instead of calibrating.
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,
    /// Current measurement noise during calibration, A.
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// Impedance stiffness K_d, N/m.
    #[arg(long = "kd", global = true)]
    stiffness: Option<f64>,
    /// Impedance damping D_d, N·s/m.
    #[arg(long = "dd", global = true)]
    damping: Option<f64>,
    /// Friction compensation velocity threshold t, rad/s.
    #[arg(long = "vel-threshold", global = true)]
    vel_threshold: Option<f64>,
    /// Scenario file with `[[event]]` tables, replacing the configured scenario.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep every gravity-loaded joint and fit the actuator model.
    Calibrate {
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Repeated calibration consistency.
    Exp1 {
        #[arg(long, default_value_t = 50)]
        repeats: usize,
    },
    /// Arm-only half-circle tracking against a spring tether.
    Exp2,
    /// Whole-body run in the configured mode.
    Exp3,
    /// Guidance mode: pushes on the end-effector lead the robot.
    Guide,
    /// Tracking mode: follow a target moving on a circle.
    Track {
        #[arg(long, default_value_t = 0.3)]
        circle_radius: f64,
        /// Target speed, m/s.
        #[arg(long, default_value_t = 0.05)]
        speed: f64,
    },
    /// Stream a live session over WebSocket.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Calibrate { .. } => "calibrate",
            Cmd::Exp1 { .. } => "exp1",
            Cmd::Exp2 => "exp2",
            Cmd::Exp3 => "exp3",
            Cmd::Guide => "guide",
            Cmd::Track { .. } => "track",
            Cmd::Serve { .. } => "serve",
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(n) = common.noise {
        if !(n >= 0.0) {
            bail!("--noise must be non-negative");
        }
        config.sweep.noise_std = n;
    }
    if let Some(k) = common.stiffness {
        config.controller.stiffness = k;
        config.whole_body.stiffness = k;
    }
    if let Some(d) = common.damping {
        config.controller.damping = d;
        config.whole_body.damping = d;
    }
    if let Some(t) = common.vel_threshold {
        config.controller.velocity_threshold = t;
    }
    if let Some(path) = &common.scenario {
        config.scenario = ScenarioFile::load(path)?.event;
    }
    Ok(config)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = load_config(&cli.common)?;
    let ctx = RunContext {
        seed: cli.common.seed.unwrap_or(config.seed),
        out: cli.common.out.clone().unwrap_or_else(|| commands::default_out(cli.command.name())),
        calibration: cli.common.calibration.clone(),
        config,
    };
    let summary = match cli.command {
        Cmd::Calibrate { repeats } => commands::calibrate(&ctx, repeats)?,
        Cmd::Exp1 { repeats } => commands::experiment_1(&ctx, repeats)?,
        Cmd::Exp2 => commands::experiment_2(&ctx)?,
        Cmd::Exp3 => commands::whole_body(&ctx, "exp3", &ctx.config.experiment_3()?)?,
        Cmd::Guide => commands::guide(&ctx)?,
        Cmd::Track { circle_radius, speed } => commands::track(&ctx, circle_radius, speed)?,
        Cmd::Serve { port, host } => {
            let session = commands::live_session(&ctx)?;
            let port = port.unwrap_or(ctx.config.serve.port);
            let options = ServeOptions { frame_rate: ctx.config.serve.frame_rate, dt: ctx.config.whole_body.dt };
            let runtime = tokio::runtime::Runtime::new()?;
            return runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                info!("serving on ws://{}", listener.local_addr()?);
                serve(listener, session, options).await
            });
        }
    };
    let shown = summary.get("metrics").or_else(|| summary.get("repeats")).unwrap_or(&summary);
    println!("{}", serde_json::to_string_pretty(shown)?);
    info!("wrote {}", ctx.out.display());
    Ok(())
}
