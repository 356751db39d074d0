//! Experiment sweeps: run a base configuration over one varying axis,
//! repeat, and average.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigOverrides, SimConfig, SpawnTrigger};
use crate::coord::{own_peak_rss, peak_rss_of, L1Launcher};
use crate::engine::{simulate, EngineOptions};
use crate::metrics::{read_rows, MetricsRow};
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("plan file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing results: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NumSes,
    NumL1Activations,
    NumLps,
}

/// How activations are laid out in time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One activation at a time, all on LP 0.
    #[default]
    Sequential,
    /// Rounds in which every LP spawns an instance at the same timestep.
    Concurrent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L1Mode {
    #[default]
    InProcess,
    Subprocess,
}

fn one() -> u32 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub l1_mode: L1Mode,
    /// Run each simulation in its own process, so memory readings of one
    /// run are not inflated by earlier ones.
    #[serde(default)]
    pub isolate: bool,
    /// Unrecorded runs of the first point before measuring starts.
    #[serde(default)]
    pub warmup_runs: u32,
    /// Activations per run when the axis is not `num_l1_activations`.
    #[serde(default)]
    pub activations: usize,
    #[serde(default = "one_usize")]
    pub entities_per_activation: usize,
    #[serde(default)]
    pub base: ConfigOverrides,
}

/// Timesteps used when the plan's base does not set them.
pub const DESK_TIMESTEPS: u32 = 100;

/// Spawn triggers for `count` activations over `timesteps`.
///
/// Sequential: all on LP 0 at `(i+1)*T/(count+1)`. Concurrent: rounds of
/// `lps` simultaneous triggers, one per LP, spaced the same way.
pub fn activation_schedule(
    count: usize,
    layout: Layout,
    lps: usize,
    timesteps: u32,
    entities: usize,
) -> Vec<SpawnTrigger> {
    let at = |i: usize, n: usize| ((i as u64 + 1) * timesteps as u64 / (n as u64 + 1)) as u32;
    match layout {
        Layout::Sequential => (0..count)
            .map(|i| SpawnTrigger {
                at_timestep: at(i, count),
                lp_id: 0,
                entity_count: entities,
            })
            .collect(),
        Layout::Concurrent => {
            let rounds = count.div_ceil(lps);
            (0..count)
                .map(|i| SpawnTrigger {
                    at_timestep: at(i / lps, rounds),
                    lp_id: i % lps,
                    entity_count: entities,
                })
                .collect()
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::Plan("repetitions must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(HarnessError::Plan("no sweep values".into()));
        }
        for v in &self.values {
            self.config_for(*v, 0)?;
        }
        Ok(())
    }

    /// The configuration for one sweep value and repetition.
    pub fn config_for(&self, value: u64, rep: u32) -> Result<SimConfig, HarnessError> {
        let mut c = SimConfig {
            total_timesteps: DESK_TIMESTEPS,
            ..SimConfig::default()
        };
        self.base.apply(&mut c);
        let mut activations = self.activations;
        match self.axis {
            SweepAxis::NumSes => c.num_ses = value as usize,
            SweepAxis::NumLps => c.num_lps = value as usize,
            SweepAxis::NumL1Activations => activations = value as usize,
        }
        if activations > 0 {
            c.l1_schedule = activation_schedule(
                activations,
                self.layout,
                c.num_lps,
                c.total_timesteps,
                self.entities_per_activation,
            );
        }
        c.seed = derive_seed(c.seed, Stream::Repetition, rep as u64);
        c.validate()?;
        Ok(c)
    }
}

/// Runs one simulation and returns its metrics row.
pub trait Executor {
    fn execute(&self, config: &SimConfig) -> Result<MetricsRow, String>;
}

/// Runs simulations on this process.
pub struct InProcess {
    pub launcher: L1Launcher,
}

impl Executor for InProcess {
    fn execute(&self, config: &SimConfig) -> Result<MetricsRow, String> {
        let options = EngineOptions {
            launcher: self.launcher.clone(),
            ..EngineOptions::default()
        };
        simulate(config.clone(), options)
            .map(|o| o.metrics.row())
            .map_err(|e| e.to_string())
    }
}

/// Runs each simulation as `<program> simulate --config <file>` and reads
/// the metrics row it prints.
pub struct Isolated {
    pub program: PathBuf,
    pub l1_mode: L1Mode,
}

impl Executor for Isolated {
    fn execute(&self, config: &SimConfig) -> Result<MetricsRow, String> {
        let mut file = tempfile::Builder::new()
            .suffix(".toml")
            .tempfile()
            .map_err(|e| e.to_string())?;
        file.write_all(ConfigOverrides::from_config(config).to_toml().as_bytes())
            .map_err(|e| e.to_string())?;
        let mode = match self.l1_mode {
            L1Mode::InProcess => "in-process",
            L1Mode::Subprocess => "subprocess",
        };
        let out = Command::new(&self.program)
            .arg("simulate")
            .arg("--config")
            .arg(file.path())
            .args(["--l1-mode", mode])
            .stdin(Stdio::null())
            .stderr(Stdio::inherit())
            .output()
            .map_err(|e| format!("{}: {e}", self.program.display()))?;
        if !out.status.success() {
            return Err(format!("simulate exited with {}", out.status));
        }
        let mut rows = read_rows(&out.stdout[..]).map_err(|e| e.to_string())?;
        match rows.len() {
            1 => Ok(rows.remove(0)),
            n => Err(format!("expected one metrics row, got {n}")),
        }
    }
}

/// Picks the executor a plan asks for. `program` is the `mlsim` binary,
/// needed for subprocess Level 1 and for isolated runs.
pub fn executor_for(plan: &ExperimentPlan, program: PathBuf) -> Box<dyn Executor> {
    if plan.isolate {
        Box::new(Isolated {
            program,
            l1_mode: plan.l1_mode,
        })
    } else {
        let launcher = match plan.l1_mode {
            L1Mode::InProcess => L1Launcher::InProcess,
            L1Mode::Subprocess => L1Launcher::Subprocess { program },
        };
        Box::new(InProcess { launcher })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation; `None` for no samples.
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std })
    }
}

/// One averaged sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: u64,
    pub status: String,
    pub runs_ok: u32,
    pub runs: u32,
    pub num_ses: usize,
    pub num_lps: usize,
    pub timesteps: u32,
    pub l1_activations: usize,
    pub total_wct_mean: Option<f64>,
    pub total_wct_std: Option<f64>,
    pub l0_only_wct_mean: Option<f64>,
    pub l0_only_wct_std: Option<f64>,
    pub l1_wct_sum_mean: Option<f64>,
    pub l1_wct_sum_std: Option<f64>,
    pub peak_rss_l0_mean: Option<f64>,
    pub peak_rss_l0_std: Option<f64>,
    pub peak_rss_l1_mean: Option<f64>,
    pub peak_rss_l1_std: Option<f64>,
    pub generated_mean: Option<f64>,
    pub forwarded_mean: Option<f64>,
    pub delivered_mean: Option<f64>,
    pub duplicates_mean: Option<f64>,
    /// First failure message, if any run of this point failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<SweepRow>,
    /// Raw per-run rows, indexed `[value][rep]`; `None` for failed runs.
    pub runs: Vec<Vec<Option<MetricsRow>>>,
}

impl ExperimentResult {
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.status == "ok")
    }
}

/// Runs the whole plan, repetition-major: every value once, then again.
/// Sub-seeds depend on the repetition only, so all values of one
/// repetition share a seed.
pub fn run_experiment(plan: &ExperimentPlan, exec: &dyn Executor) -> Result<ExperimentResult, HarnessError> {
    plan.validate()?;
    let nv = plan.values.len();
    let mut runs: Vec<Vec<Option<MetricsRow>>> = vec![Vec::new(); nv];
    let mut errors: Vec<Option<String>> = vec![None; nv];
    if plan.warmup_runs > 0 {
        let cfg = plan.config_for(plan.values[0], 0)?;
        for _ in 0..plan.warmup_runs {
            if let Err(e) = exec.execute(&cfg) {
                log::warn!("warm-up run failed: {e}");
            }
        }
    }
    for rep in 0..plan.repetitions {
        for (i, &v) in plan.values.iter().enumerate() {
            let cfg = plan.config_for(v, rep)?;
            log::info!("{:?}={v} rep {rep}", plan.axis);
            match exec.execute(&cfg) {
                Ok(row) => runs[i].push(Some(row)),
                Err(e) => {
                    log::warn!("{:?}={v} rep {rep} failed: {e}", plan.axis);
                    errors[i].get_or_insert(e);
                    runs[i].push(None);
                }
            }
        }
    }
    let rows = plan
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cfg = plan.config_for(v, 0).expect("validated above");
            let ok: Vec<&MetricsRow> = runs[i].iter().flatten().collect();
            let pick = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Option<Stat> {
                let xs: Option<Vec<f64>> = ok.iter().map(|r| f(r)).collect();
                xs.and_then(|xs| Stat::of(&xs))
            };
            let total = pick(&|r| Some(r.total_wct));
            let l0 = pick(&|r| Some(r.l0_only_wct));
            let l1 = pick(&|r| Some(r.l1_wct_sum));
            let rss0 = pick(&|r| r.peak_rss_l0.map(|b| b as f64));
            let rss1 = pick(&|r| r.peak_rss_l1.map(|b| b as f64));
            SweepRow {
                axis: plan.axis,
                value: v,
                status: if errors[i].is_none() { "ok" } else { "failed" }.to_owned(),
                runs_ok: ok.len() as u32,
                runs: plan.repetitions,
                num_ses: cfg.num_ses,
                num_lps: cfg.num_lps,
                timesteps: cfg.total_timesteps,
                l1_activations: cfg.l1_schedule.len(),
                total_wct_mean: total.map(|s| s.mean),
                total_wct_std: total.map(|s| s.std),
                l0_only_wct_mean: l0.map(|s| s.mean),
                l0_only_wct_std: l0.map(|s| s.std),
                l1_wct_sum_mean: l1.map(|s| s.mean),
                l1_wct_sum_std: l1.map(|s| s.std),
                peak_rss_l0_mean: rss0.map(|s| s.mean),
                peak_rss_l0_std: rss0.map(|s| s.std),
                peak_rss_l1_mean: rss1.map(|s| s.mean),
                peak_rss_l1_std: rss1.map(|s| s.std),
                generated_mean: pick(&|r| Some(r.generated as f64)).map(|s| s.mean),
                forwarded_mean: pick(&|r| Some(r.forwarded as f64)).map(|s| s.mean),
                delivered_mean: pick(&|r| Some(r.delivered as f64)).map(|s| s.mean),
                duplicates_mean: pick(&|r| Some(r.duplicates as f64)).map(|s| s.mean),
                error: errors[i].clone(),
            }
        })
        .collect();
    Ok(ExperimentResult { rows, runs })
}

/// High-water-mark resident memory of a process (this one for `None`), in
/// bytes; `None` where the platform does not expose it.
pub fn measure_peak_memory(pid: Option<u32>) -> Option<u64> {
    match pid {
        None => own_peak_rss(),
        Some(p) => peak_rss_of(&format!("/proc/{p}/status")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_schedule() {
        let s = activation_schedule(4, Layout::Sequential, 1, 100, 1);
        assert_eq!(s.iter().map(|t| t.at_timestep).collect::<Vec<_>>(), vec![20, 40, 60, 80]);
        assert!(s.iter().all(|t| t.lp_id == 0 && t.entity_count == 1));
        assert!(activation_schedule(0, Layout::Sequential, 1, 100, 1).is_empty());
    }

    #[test]
    fn concurrent_schedule() {
        let s = activation_schedule(4, Layout::Concurrent, 4, 100, 1);
        assert!(s.iter().all(|t| t.at_timestep == 50));
        assert_eq!(s.iter().map(|t| t.lp_id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let s = activation_schedule(8, Layout::Concurrent, 4, 90, 1);
        assert_eq!(s.iter().filter(|t| t.at_timestep == 30).count(), 4);
        assert_eq!(s.iter().filter(|t| t.at_timestep == 60).count(), 4);
    }

    #[test]
    fn plan_parsing() {
        let p = ExperimentPlan::from_toml(
            r#"
            axis = "num_l1_activations"
            values = [0, 1, 2, 4, 8]
            repetitions = 3
            [base]
            ses = 300
            "#,
        )
        .unwrap();
        assert_eq!(p.layout, Layout::Sequential);
        let c = p.config_for(8, 2).unwrap();
        assert_eq!(c.num_ses, 300);
        assert_eq!(c.total_timesteps, DESK_TIMESTEPS);
        assert_eq!(c.l1_schedule.len(), 8);
        assert_eq!(c.seed, p.config_for(0, 2).unwrap().seed);
        assert_ne!(c.seed, p.config_for(8, 1).unwrap().seed);

        assert!(ExperimentPlan::from_toml("axis = \"num_ses\"\nvalues = [10]\nrepetitions = 0").is_err());
        assert!(ExperimentPlan::from_toml("axis = \"num_ses\"\nvalues = [10]\nbogus = 1").is_err());
        assert!(ExperimentPlan::from_toml("axis = \"num_lps\"\nvalues = [0]").is_err());
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    struct Flaky;

    impl Executor for Flaky {
        fn execute(&self, config: &SimConfig) -> Result<MetricsRow, String> {
            if config.num_ses == 20 {
                return Err("boom".into());
            }
            InProcess { launcher: L1Launcher::InProcess }.execute(config)
        }
    }

    #[test]
    fn failures_mark_rows_and_continue() {
        let plan = ExperimentPlan::from_toml(
            "axis = \"num_ses\"\nvalues = [10, 20, 30]\nrepetitions = 2\n[base]\ntimesteps = 3\n",
        )
        .unwrap();
        let res = run_experiment(&plan, &Flaky).unwrap();
        let status: Vec<&str> = res.rows.iter().map(|r| r.status.as_str()).collect();
        assert_eq!(status, vec!["ok", "failed", "ok"]);
        assert_eq!(res.rows[1].runs_ok, 0);
        assert_eq!(res.rows[1].total_wct_mean, None);
        assert_eq!(res.rows[2].runs_ok, 2);
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
