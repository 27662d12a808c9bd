use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use cobot_core::config::ScenarioConfig;
use cobot_core::dmp::{self, DmpModel, LearnParams, Overrides, ReproduceParams};
use cobot_core::plot;
use cobot_core::runlog::RunLog;
use cobot_core::service::{self, ServiceConfig};
use cobot_core::sim::{Scenario, Simulator};

/// Kinematic simulation of shared-control grasping with an adaptive visual servo.
#[derive(Parser)]
#[command(name = "cobot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write its run log (JSON lines).
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Run log path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a DMP from a CSV demonstration (`t,q0,q1,...`).
    LearnDmp {
        demo: PathBuf,
        /// TOML file with alpha_q, beta_q, alpha_z, n_basis, tau.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out a learned DMP and write the trajectory as CSV.
    Reproduce {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        goal: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario live and serve the WebSocket protocol.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        #[arg(long, default_value_t = 1.0)]
        realtime_factor: f64,
        /// Simulated seconds between state frames.
        #[arg(long, default_value_t = 0.02)]
        broadcast_period: f64,
    },
    /// Convert a run log into a CSV table for plotting.
    ExportPlot {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML; the built-in default scenario if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let (mut cfg, base) = match &self.config {
            Some(p) => (ScenarioConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None => {
                let text = ScenarioConfig::default().to_toml_string();
                (ScenarioConfig::from_toml_with_env(&text, std::env::vars())?, PathBuf::from("."))
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        Ok(cfg.to_scenario(&base)?)
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn simulate(args: &ScenarioArgs, out: &Option<PathBuf>) -> Result<i32> {
    let scenario = args.load()?;
    let log = Simulator::new(scenario)?.run();
    let mut w = output(out)?;
    log.write_jsonl(&mut w)?;
    w.flush()?;
    let outcome = log.outcome.as_ref().ok_or_else(|| anyhow!("run ended without an outcome"))?;
    eprintln!("{} records, outcome: {}", log.records.len(), serde_json::to_string(outcome)?);
    Ok(outcome.exit_code())
}

fn learn_dmp(demo: &Path, params: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<i32> {
    let params = match params {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            toml::from_str::<LearnParams>(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => LearnParams::default(),
    };
    let demo = plot::read_demo_csv(open(demo)?).with_context(|| format!("in {}", demo.display()))?;
    let model = dmp::learn(&demo, &params)?;
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &model)?;
    writeln!(w)?;
    w.flush()?;
    Ok(0)
}

fn reproduce(model: &Path, overrides: Overrides, dt: f64, out: &Option<PathBuf>) -> Result<i32> {
    let model: DmpModel = serde_json::from_reader(open(model)?).with_context(|| format!("in {}", model.display()))?;
    let traj = dmp::reproduce(&model, &overrides, &ReproduceParams { dt, ..ReproduceParams::default() })?;
    plot::write_trajectory_csv(&traj, output(out)?)?;
    Ok(0)
}

fn serve(args: &ScenarioArgs, bind: String, realtime_factor: f64, broadcast_period: f64) -> Result<i32> {
    let sim = Simulator::new(args.load()?)?;
    let handle = service::start(sim, ServiceConfig { bind, realtime_factor, broadcast_period, ..ServiceConfig::default() })?;
    eprintln!("serving on ws://{}", handle.local_addr());
    handle.join();
    Ok(0)
}

fn export_plot(log: &Path, out: &Option<PathBuf>) -> Result<i32> {
    let log = RunLog::read_jsonl(open(log)?).with_context(|| format!("in {}", log.display()))?;
    plot::write_plot_csv(&log, output(out)?)?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenario, out } => simulate(scenario, out),
        Command::LearnDmp { demo, params, out } => learn_dmp(demo, params, out),
        Command::Reproduce { model, goal, start, tau, dt, out } => {
            reproduce(model, Overrides { goal: goal.clone(), tau: *tau, start: start.clone() }, *dt, out)
        }
        Command::Serve { scenario, bind, realtime_factor, broadcast_period } => {
            serve(scenario, bind.clone(), *realtime_factor, *broadcast_period)
        }
        Command::ExportPlot { log, out } => export_plot(log, out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
