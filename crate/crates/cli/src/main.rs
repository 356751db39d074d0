use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mlsim_core::coord::{listen_and_serve, L1Launcher};
use mlsim_core::harness::{executor_for, run_experiment, ExperimentPlan};
use mlsim_core::metrics::write_rows;
use mlsim_core::{ConfigOverrides, EngineOptions, InstanceId, SimConfig, SpawnTrigger, TimestepReport};

/// Two-level IoT simulator.
#[derive(Parser)]
#[command(name = "mlsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and print its metrics as CSV.
    Simulate(SimulateArgs),
    /// Run an experiment plan and print one averaged CSV row per value.
    Sweep {
        plan: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve one Level-1 session over TCP on 127.0.0.1.
    L1Server {
        /// 0 picks a free port.
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long)]
        instance_id: u64,
        /// Seconds to wait for each message.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    InProcess,
    Subprocess,
}

#[derive(Args)]
struct SimulateArgs {
    /// `key = value` file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ses: Option<usize>,
    #[arg(long)]
    lps: Option<usize>,
    #[arg(long)]
    timesteps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ttl: Option<u32>,
    #[arg(long)]
    prob: Option<f64>,
    #[arg(long)]
    cache: Option<usize>,
    /// Spawn trigger `timestep:lp:count`; repeatable.
    #[arg(long = "l1-schedule")]
    l1_schedule: Vec<SpawnTrigger>,
    #[arg(long)]
    fine_steps: Option<u32>,
    /// Per-timestep report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "in-process")]
    l1_mode: Mode,
    /// Seconds to wait for each Level-1 reply.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

impl SimulateArgs {
    fn config(&self) -> Result<SimConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ConfigOverrides::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigOverrides::default(),
        };
        let flags = ConfigOverrides {
            ses: self.ses,
            lps: self.lps,
            timesteps: self.timesteps,
            seed: self.seed,
            ttl: self.ttl,
            prob: self.prob,
            cache: self.cache,
            l1_schedule: (!self.l1_schedule.is_empty()).then(|| self.l1_schedule.clone()),
            fine_steps: self.fine_steps,
            ..ConfigOverrides::default()
        };
        let mut c = SimConfig::default();
        file.merged(&flags).apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

fn write_reports(path: &Path, reports: &[TimestepReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    w.write_record([
        "timestep",
        "generated",
        "forwarded",
        "delivered",
        "duplicates",
        "suppressed",
        "frozen_drops",
        "max_hops",
        "hop_violations",
        "active",
        "delegated",
        "lp_wct_max",
        "l1_wct",
        "l1_rreq",
        "l1_rrep",
        "l1_arrivals",
    ])?;
    for r in reports {
        let m = &r.messages;
        let lp_max = r.lp_wct.iter().copied().fold(0.0, f64::max);
        w.write_record([
            r.timestep.to_string(),
            m.generated.to_string(),
            m.forwarded.to_string(),
            m.delivered.to_string(),
            m.duplicates.to_string(),
            m.suppressed.to_string(),
            m.frozen_drops.to_string(),
            r.max_hops.to_string(),
            r.hop_violations.to_string(),
            r.active.to_string(),
            r.delegated.to_string(),
            lp_max.to_string(),
            r.l1_wct.to_string(),
            r.l1_counters.rreq.to_string(),
            r.l1_counters.rrep.to_string(),
            r.l1_counters.arrivals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = args.config()?;
    let launcher = match args.l1_mode {
        Mode::InProcess => L1Launcher::InProcess,
        Mode::Subprocess => L1Launcher::Subprocess {
            program: std::env::current_exe().context("locating the mlsim binary")?,
        },
    };
    let options = EngineOptions {
        launcher,
        session_timeout: Duration::from_secs(args.timeout),
        record_deliveries: false,
    };
    let outcome = mlsim_core::simulate(config, options)?;
    if let Some(path) = &args.out {
        write_reports(path, &outcome.reports)?;
    }
    write_rows(io::stdout().lock(), &[outcome.metrics.row()])?;
    Ok(())
}

fn sweep(plan_path: &Path, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let plan = ExperimentPlan::from_toml(&text)?;
    let exec = executor_for(&plan, std::env::current_exe().context("locating the mlsim binary")?);
    let result = run_experiment(&plan, exec.as_ref())?;
    match out {
        Some(p) => result.write_csv(File::create(p).with_context(|| format!("creating {}", p.display()))?)?,
        None => result.write_csv(io::stdout().lock())?,
    }
    if !result.all_ok() {
        bail!("some runs failed");
    }
    Ok(())
}

fn l1_server(port: u16, instance: u64, timeout: u64) -> Result<()> {
    listen_and_serve(port, InstanceId(instance), Duration::from_secs(timeout), |addr| {
        let mut out = io::stdout().lock();
        let _ = writeln!(out, "LISTENING {addr}");
        let _ = out.flush();
    })?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Simulate(args) => simulate(args),
        Cmd::Sweep { plan, out } => sweep(&plan, out.as_deref()),
        Cmd::L1Server { port, instance_id, timeout } => l1_server(port, instance_id, timeout),
    }
}
