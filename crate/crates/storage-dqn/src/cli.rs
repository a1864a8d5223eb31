//! Command-line entry point: training runs, checkpoint evaluation, capacity
//! sweeps, exact-dispatch plans, learning-progression reports and synthetic
//! data generation. One flat `key = value` config file drives everything;
//! every key can be overridden with `--set key=value`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::agent::{train, AgentConfig, Checkpoint, TrainRecord};
use crate::analysis::{
    capacity_sweep, dr_comparison, emit_report, evaluate, fmt_sig, learning_progression,
    EpisodeTrace, Report, SlotActionHistogram, SweepConfig, TraceRow,
};
use crate::data::{self, LoadProfile, SyntheticSpec};
use crate::environment::{
    baseline_cost, cost_saving, BatteryConfig, DemandResponseConfig, DrMode, EnvConfig,
};
use crate::network::{load_checkpoint, save_checkpoint};
use crate::oracle::{dp_optimal, OracleOptions};
use crate::tariff::builtin_schedule;
use crate::{Error, Result};

/// Everything a run needs, resolved to concrete values. Writing it out with
/// [`RunConfig::to_config_string`] and parsing the result reproduces the
/// struct exactly, so run directories double as reusable config files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub tariff_name: String,
    pub battery: BatteryConfig,
    pub dr: DemandResponseConfig,
    pub horizon_hours: usize,
    pub normalize_observations: bool,
    pub initial_soc: Option<f64>,
    pub observe_day_cumulative: Option<bool>,
    pub agent: AgentConfig,
    pub data_csv: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub train_days: usize,
    pub test_days: usize,
    pub capacities: String,
    pub jobs: usize,
    pub oracle: OracleOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tariff_name: "table1".into(),
            battery: BatteryConfig::new(900.0, 300.0, 300.0, 0.0, 1.0)
                .expect("default battery is valid"),
            dr: DemandResponseConfig::disabled(),
            horizon_hours: 24,
            normalize_observations: false,
            initial_soc: None,
            observe_day_cumulative: None,
            agent: AgentConfig::default(),
            data_csv: None,
            synthetic: SyntheticSpec::default(),
            train_days: 30,
            test_days: 30,
            capacities: "5000..30000 step 5000".into(),
            jobs: 1,
            oracle: OracleOptions::default(),
        }
    }
}

fn bad_key(key: &str, message: impl std::fmt::Display) -> Error {
    Error::UsageError(format!("config key '{key}': {message}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad_key(
            key,
            format!("expected true or false, got '{other}'"),
        )),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad_key(key, e))
}

fn parse_sizes(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|t| parse_num(key, t.trim())).collect()
}

fn sizes_to_string(sizes: &[usize]) -> String {
    sizes
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Split config text into (key, value) pairs. Later occurrences of a key
/// override earlier ones, so files can be concatenated.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::UsageError(format!(
                "config line {}: expected 'key = value', got '{line}'",
                number + 1
            )));
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

impl RunConfig {
    /// Build a config from key/value pairs; unset keys take defaults. Unknown
    /// keys are rejected so typos fail loudly.
    pub fn from_entries(entries: Vec<(String, String)>) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (key, value) in entries {
            map.insert(key, value);
        }
        let mut cfg = RunConfig::default();
        let mut take = |key: &str| map.remove(key);

        if let Some(v) = take("seed") {
            cfg.seed = parse_num("seed", &v)?;
        }
        if let Some(v) = take("tariff.name") {
            builtin_schedule(&v)?;
            cfg.tariff_name = v;
        }
        if let Some(v) = take("battery.capacity_wh") {
            cfg.battery.capacity_wh = parse_num("battery.capacity_wh", &v)?;
        }
        if let Some(v) = take("battery.max_charge_w") {
            cfg.battery.max_charge_w = parse_num("battery.max_charge_w", &v)?;
        }
        if let Some(v) = take("battery.max_discharge_w") {
            cfg.battery.max_discharge_w = parse_num("battery.max_discharge_w", &v)?;
        }
        if let Some(v) = take("battery.soc_min") {
            cfg.battery.soc_min_frac = parse_num("battery.soc_min", &v)?;
        }
        if let Some(v) = take("battery.soc_max") {
            cfg.battery.soc_max_frac = parse_num("battery.soc_max", &v)?;
        }
        if let Some(v) = take("dr.enabled") {
            cfg.dr.enabled = parse_bool("dr.enabled", &v)?;
        }
        if let Some(v) = take("dr.mode") {
            cfg.dr.mode = DrMode::from_label(&v)?;
        }
        if let Some(v) = take("dr.limit_wh") {
            cfg.dr.limit_wh = parse_num("dr.limit_wh", &v)?;
        }
        if let Some(v) = take("dr.penalty_rate") {
            cfg.dr.penalty_rate = parse_num("dr.penalty_rate", &v)?;
        }
        if let Some(v) = take("env.horizon_hours") {
            cfg.horizon_hours = parse_num("env.horizon_hours", &v)?;
        }
        if let Some(v) = take("env.normalize_observations") {
            cfg.normalize_observations = parse_bool("env.normalize_observations", &v)?;
        }
        if let Some(v) = take("env.initial_soc") {
            cfg.initial_soc = match v.as_str() {
                "floor" => None,
                other => Some(parse_num("env.initial_soc", other)?),
            };
        }
        if let Some(v) = take("env.observe_day_cumulative") {
            cfg.observe_day_cumulative = match v.as_str() {
                "auto" => None,
                other => Some(parse_bool("env.observe_day_cumulative", other)?),
            };
        }
        if let Some(v) = take("agent.trunk") {
            cfg.agent.layers.trunk_sizes = parse_sizes("agent.trunk", &v)?;
        }
        if let Some(v) = take("agent.streams") {
            cfg.agent.layers.stream_sizes = parse_sizes("agent.streams", &v)?;
        }
        if let Some(v) = take("agent.batch_size") {
            cfg.agent.batch_size = parse_num("agent.batch_size", &v)?;
        }
        if let Some(v) = take("agent.replay_capacity") {
            cfg.agent.replay_capacity = parse_num("agent.replay_capacity", &v)?;
        }
        if let Some(v) = take("agent.discount") {
            cfg.agent.gamma = parse_num("agent.discount", &v)?;
        }
        if let Some(v) = take("agent.learning_rate") {
            cfg.agent.learning_rate = parse_num("agent.learning_rate", &v)?;
        }
        if let Some(v) = take("agent.momentum") {
            cfg.agent.momentum = parse_num("agent.momentum", &v)?;
        }
        if let Some(v) = take("agent.epsilon_initial") {
            cfg.agent.epsilon_initial = parse_num("agent.epsilon_initial", &v)?;
        }
        if let Some(v) = take("agent.epsilon_final") {
            cfg.agent.epsilon_final = parse_num("agent.epsilon_final", &v)?;
        }
        if let Some(v) = take("agent.epsilon_decay_steps") {
            cfg.agent.epsilon_decay_steps = match v.as_str() {
                "auto" => None,
                other => Some(parse_num("agent.epsilon_decay_steps", other)?),
            };
        }
        if let Some(v) = take("agent.anneal_beta") {
            cfg.agent.anneal_beta = parse_bool("agent.anneal_beta", &v)?;
        }
        if let Some(v) = take("agent.target_update_every") {
            cfg.agent.target_update_every = parse_num("agent.target_update_every", &v)?;
        }
        if let Some(v) = take("agent.epochs") {
            cfg.agent.epochs = parse_num("agent.epochs", &v)?;
        }
        if let Some(v) = take("agent.history_days") {
            cfg.agent.history_days = match v.as_str() {
                "all" => None,
                other => Some(parse_num("agent.history_days", other)?),
            };
        }
        if let Some(v) = take("agent.warmup_transitions") {
            cfg.agent.warmup_transitions = parse_num("agent.warmup_transitions", &v)?;
        }
        if let Some(v) = take("agent.updates_per_step") {
            cfg.agent.updates_per_step = parse_num("agent.updates_per_step", &v)?;
        }
        if let Some(v) = take("agent.checkpoint_every") {
            cfg.agent.checkpoint_every = parse_num("agent.checkpoint_every", &v)?;
        }
        if let Some(v) = take("agent.double_dqn") {
            cfg.agent.double_dqn = parse_bool("agent.double_dqn", &v)?;
        }
        if let Some(v) = take("replay.alpha") {
            cfg.agent.replay.alpha = parse_num("replay.alpha", &v)?;
        }
        if let Some(v) = take("replay.beta") {
            cfg.agent.replay.beta = parse_num("replay.beta", &v)?;
        }
        if let Some(v) = take("replay.priority_epsilon") {
            cfg.agent.replay.priority_epsilon = parse_num("replay.priority_epsilon", &v)?;
        }
        if let Some(v) = take("replay.stratified") {
            cfg.agent.replay.stratified = parse_bool("replay.stratified", &v)?;
        }
        if let Some(v) = take("data.csv") {
            cfg.data_csv = if v.is_empty() {
                None
            } else {
                Some(PathBuf::from(v))
            };
        }
        if let Some(v) = take("data.base_load_w") {
            cfg.synthetic.base_load_w = parse_num("data.base_load_w", &v)?;
        }
        if let Some(v) = take("data.evening_peak_w") {
            cfg.synthetic.evening_peak_w = parse_num("data.evening_peak_w", &v)?;
        }
        if let Some(v) = take("data.peak_start_hour") {
            cfg.synthetic.peak_start_hour = parse_num("data.peak_start_hour", &v)?;
        }
        if let Some(v) = take("data.peak_end_hour") {
            cfg.synthetic.peak_end_hour = parse_num("data.peak_end_hour", &v)?;
        }
        if let Some(v) = take("data.noise_frac") {
            cfg.synthetic.noise_frac = parse_num("data.noise_frac", &v)?;
        }
        let data_seed = take("data.seed");
        if let Some(v) = take("data.days") {
            cfg.synthetic.days = parse_num("data.days", &v)?;
        }
        if let Some(v) = take("data.train_days") {
            cfg.train_days = parse_num("data.train_days", &v)?;
        }
        if let Some(v) = take("data.test_days") {
            cfg.test_days = parse_num("data.test_days", &v)?;
        }
        if let Some(v) = take("sweep.capacities") {
            cfg.capacities = v;
        }
        if let Some(v) = take("sweep.jobs") {
            cfg.jobs = parse_num("sweep.jobs", &v)?;
        }
        if let Some(v) = take("oracle.quantum_wh") {
            cfg.oracle.quantum_wh = parse_num("oracle.quantum_wh", &v)?;
        }
        if let Some(v) = take("oracle.state_budget") {
            cfg.oracle.state_budget = parse_num("oracle.state_budget", &v)?;
        }

        if !map.is_empty() {
            let unknown: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::UsageError(format!(
                "unknown config key(s): {}; see --help for the full list",
                unknown.join(", ")
            )));
        }

        // The agent and (unless pinned) the synthetic generator both draw
        // from the run seed, so one flag reproduces the whole run.
        cfg.agent.seed = cfg.seed;
        cfg.synthetic.seed = match data_seed.as_deref() {
            None | Some("auto") => cfg.seed,
            Some(other) => parse_num("data.seed", other)?,
        };
        Ok(cfg)
    }

    /// Every key in canonical order, with all defaults made explicit.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("seed", self.seed.to_string());
        push("tariff.name", self.tariff_name.clone());
        push(
            "battery.capacity_wh",
            format!("{:?}", self.battery.capacity_wh),
        );
        push(
            "battery.max_charge_w",
            format!("{:?}", self.battery.max_charge_w),
        );
        push(
            "battery.max_discharge_w",
            format!("{:?}", self.battery.max_discharge_w),
        );
        push(
            "battery.soc_min",
            format!("{:?}", self.battery.soc_min_frac),
        );
        push(
            "battery.soc_max",
            format!("{:?}", self.battery.soc_max_frac),
        );
        push("dr.enabled", self.dr.enabled.to_string());
        push("dr.mode", self.dr.mode.label().to_string());
        push("dr.limit_wh", format!("{:?}", self.dr.limit_wh));
        push("dr.penalty_rate", format!("{:?}", self.dr.penalty_rate));
        push("env.horizon_hours", self.horizon_hours.to_string());
        push(
            "env.normalize_observations",
            self.normalize_observations.to_string(),
        );
        push(
            "env.initial_soc",
            match self.initial_soc {
                None => "floor".to_string(),
                Some(f) => format!("{f:?}"),
            },
        );
        push(
            "env.observe_day_cumulative",
            match self.observe_day_cumulative {
                None => "auto".to_string(),
                Some(flag) => flag.to_string(),
            },
        );
        push(
            "agent.trunk",
            sizes_to_string(&self.agent.layers.trunk_sizes),
        );
        push(
            "agent.streams",
            sizes_to_string(&self.agent.layers.stream_sizes),
        );
        push("agent.batch_size", self.agent.batch_size.to_string());
        push(
            "agent.replay_capacity",
            self.agent.replay_capacity.to_string(),
        );
        push("agent.discount", format!("{:?}", self.agent.gamma));
        push(
            "agent.learning_rate",
            format!("{:?}", self.agent.learning_rate),
        );
        push("agent.momentum", format!("{:?}", self.agent.momentum));
        push(
            "agent.epsilon_initial",
            format!("{:?}", self.agent.epsilon_initial),
        );
        push(
            "agent.epsilon_final",
            format!("{:?}", self.agent.epsilon_final),
        );
        push(
            "agent.epsilon_decay_steps",
            match self.agent.epsilon_decay_steps {
                None => "auto".to_string(),
                Some(n) => n.to_string(),
            },
        );
        push("agent.anneal_beta", self.agent.anneal_beta.to_string());
        push(
            "agent.target_update_every",
            self.agent.target_update_every.to_string(),
        );
        push("agent.epochs", self.agent.epochs.to_string());
        push(
            "agent.history_days",
            match self.agent.history_days {
                None => "all".to_string(),
                Some(n) => n.to_string(),
            },
        );
        push(
            "agent.warmup_transitions",
            self.agent.warmup_transitions.to_string(),
        );
        push(
            "agent.updates_per_step",
            self.agent.updates_per_step.to_string(),
        );
        push(
            "agent.checkpoint_every",
            self.agent.checkpoint_every.to_string(),
        );
        push("agent.double_dqn", self.agent.double_dqn.to_string());
        push("replay.alpha", format!("{:?}", self.agent.replay.alpha));
        push("replay.beta", format!("{:?}", self.agent.replay.beta));
        push(
            "replay.priority_epsilon",
            format!("{:?}", self.agent.replay.priority_epsilon),
        );
        push(
            "replay.stratified",
            self.agent.replay.stratified.to_string(),
        );
        push(
            "data.csv",
            self.data_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        push(
            "data.base_load_w",
            format!("{:?}", self.synthetic.base_load_w),
        );
        push(
            "data.evening_peak_w",
            format!("{:?}", self.synthetic.evening_peak_w),
        );
        push(
            "data.peak_start_hour",
            self.synthetic.peak_start_hour.to_string(),
        );
        push(
            "data.peak_end_hour",
            self.synthetic.peak_end_hour.to_string(),
        );
        push(
            "data.noise_frac",
            format!("{:?}", self.synthetic.noise_frac),
        );
        push("data.seed", self.synthetic.seed.to_string());
        push("data.days", self.synthetic.days.to_string());
        push("data.train_days", self.train_days.to_string());
        push("data.test_days", self.test_days.to_string());
        push("sweep.capacities", self.capacities.clone());
        push("sweep.jobs", self.jobs.to_string());
        push("oracle.quantum_wh", format!("{:?}", self.oracle.quantum_wh));
        push("oracle.state_budget", self.oracle.state_budget.to_string());
        out
    }

    /// The config as a reusable file.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            out.push_str(&key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    /// Stable content hash of the resolved config; run directories are named
    /// after its prefix so identical configs land in identical places.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_config_string().as_bytes());
        let mut hex = String::new();
        for byte in hasher.finalize() {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// The environment this config describes.
    pub fn env_config(&self) -> Result<EnvConfig> {
        let tariff = builtin_schedule(&self.tariff_name)?;
        let mut env = EnvConfig::new(tariff, self.battery.clone(), self.dr.clone());
        env.horizon_hours = self.horizon_hours;
        env.normalize_observations = self.normalize_observations;
        env.initial_soc_frac = self.initial_soc;
        env.observe_day_cumulative = self.observe_day_cumulative;
        env.validate()?;
        Ok(env)
    }

    /// The whole load profile, from CSV when configured, synthetic otherwise.
    pub fn full_profile(&self) -> Result<LoadProfile> {
        match &self.data_csv {
            Some(path) => data::load_csv(path),
            None => data::generate(&self.synthetic),
        }
    }

    /// Contiguous train/test split of the full profile.
    pub fn split_profiles(&self) -> Result<(LoadProfile, LoadProfile)> {
        data::split(&self.full_profile()?, self.train_days, self.test_days)
    }
}

/// Expand a capacity list: either comma-separated watt-hours
/// (`"5000,10000"`) or an inclusive range (`"5000..30000 step 5000"`).
pub fn parse_capacities(spec: &str) -> Result<Vec<f64>> {
    let text = spec.trim();
    let err = |message: String| Error::UsageError(format!("sweep.capacities '{spec}': {message}"));
    if text.is_empty() {
        return Err(err("no capacities given".into()));
    }
    let values: Vec<f64> = if let Some((range, step)) = text.split_once("step") {
        let (lo, hi) = range
            .trim()
            .split_once("..")
            .ok_or_else(|| err("expected 'LO..HI step SIZE'".into()))?;
        let lo: f64 = lo.trim().parse().map_err(|e| err(format!("{e}")))?;
        let hi: f64 = hi.trim().parse().map_err(|e| err(format!("{e}")))?;
        let step: f64 = step.trim().parse().map_err(|e| err(format!("{e}")))?;
        if !step.is_finite() || step <= 0.0 {
            return Err(err(format!("step {step} must be positive")));
        }
        if hi < lo {
            return Err(err(format!("range {lo}..{hi} runs backwards")));
        }
        let mut out = Vec::new();
        for i in 0.. {
            let x = lo + step * i as f64;
            if x > hi + step * 1e-9 {
                break;
            }
            out.push(x);
        }
        out
    } else {
        text.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("'{t}': {e}")))
            })
            .collect::<Result<_>>()?
    };
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(err("capacities must be finite and non-negative".into()));
    }
    Ok(values)
}

const CONFIG_HELP: &str = "\
Config file: flat `key = value` lines; `#` starts a comment; any key can be
overridden with --set key=value. Keys and defaults:

  seed = 0
  tariff.name = table1            (or tata)
  battery.capacity_wh = 900       battery.max_charge_w = 300
  battery.max_discharge_w = 300   battery.soc_min = 0   battery.soc_max = 1
  dr.enabled = false              dr.mode = daily_cumulative (or per_interval)
  dr.limit_wh = 700               dr.penalty_rate = 2
  env.horizon_hours = 24          env.normalize_observations = false
  env.initial_soc = floor         env.observe_day_cumulative = auto
  agent.trunk = 64,64             agent.streams = 32
  agent.batch_size = 32           agent.replay_capacity = 10240
  agent.discount = 0.96           agent.learning_rate = 0.00025
  agent.momentum = 0              agent.epsilon_initial = 1
  agent.epsilon_final = 0.1       agent.epsilon_decay_steps = auto
  agent.anneal_beta = true        agent.target_update_every = 5
  agent.epochs = 500              agent.history_days = 15 (or all)
  agent.warmup_transitions = 1024 agent.updates_per_step = 1
  agent.checkpoint_every = 10     agent.double_dqn = true
  replay.alpha = 0.6              replay.beta = 0.4
  replay.priority_epsilon = 0.001 replay.stratified = true
  data.csv =                      (path; empty means synthetic)
  data.base_load_w = 200          data.evening_peak_w = 600
  data.peak_start_hour = 18       data.peak_end_hour = 24
  data.noise_frac = 0.1           data.seed = auto   data.days = 60
  data.train_days = 30            data.test_days = 30
  sweep.capacities = 5000..30000 step 5000
  sweep.jobs = 1
  oracle.quantum_wh = 1           oracle.state_budget = 20000000

Output root: --out, else $STORAGE_DQN_OUT, else ./runs";

#[derive(Debug, Parser)]
#[command(
    name = "storage-dqn",
    version,
    about = "Battery dispatch under time-of-day tariffs: train, evaluate and explain a DQN agent against an exact oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set agent.discount=0.9
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master random seed; overrides the `seed` config key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root directory; overrides $STORAGE_DQN_OUT.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and write checkpoints, records and a manifest.
    #[command(after_help = CONFIG_HELP)]
    Train(CommonArgs),
    /// Replay a checkpoint greedily over the test split and report savings.
    #[command(after_help = CONFIG_HELP)]
    Eval(EvalArgs),
    /// Train across battery capacities and emit the cross matrix with an
    /// oracle column; adds a demand-response arm when dr.enabled is set.
    #[command(after_help = CONFIG_HELP)]
    Sweep(SweepArgs),
    /// Compute the exact optimal dispatch for one day and write its trace.
    #[command(after_help = CONFIG_HELP)]
    Oracle(OracleArgs),
    /// Replay a training run's checkpoints to show what was learned when.
    Explain(ExplainArgs),
    /// Generate a synthetic load profile CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint file written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Worker threads for per-capacity jobs; overrides sweep.jobs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Day of the profile to dispatch.
    #[arg(long, default_value_t = 0)]
    day: usize,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    /// A run directory written by `train`.
    run_dir: PathBuf,
    /// Probe day replayed by every checkpoint; defaults to the first test
    /// day when the run has a test split, day 0 otherwise.
    #[arg(long)]
    day: Option<usize>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Where to write the CSV.
    #[arg(default_value = "profile.csv")]
    out_file: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value_t = 200.0)]
    base_load: f64,
    #[arg(long, default_value_t = 600.0)]
    evening_peak: f64,
    #[arg(long, default_value_t = 18)]
    peak_start: u32,
    #[arg(long, default_value_t = 24)]
    peak_end: u32,
    #[arg(long, default_value_t = 0.1)]
    noise_frac: f64,
}

/// Parse args, dispatch, and map errors onto exit codes: 0 success,
/// 1 internal failure, 2 anything the user can fix.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Explain(args) => cmd_explain(&args),
        Command::GenData(args) => cmd_gen_data(&args),
    }
}

fn load_run_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut entries = Vec::new();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        entries.extend(parse_config_text(&text)?);
    }
    for item in &common.set {
        let Some((key, value)) = item.split_once('=') else {
            return Err(Error::UsageError(format!(
                "--set expects KEY=VALUE, got '{item}'"
            )));
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        entries.push(("seed".to_string(), seed.to_string()));
    }
    RunConfig::from_entries(entries)
}

fn output_root(common: &CommonArgs) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os("STORAGE_DQN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir(common: &CommonArgs, command: &str, cfg: &RunConfig) -> PathBuf {
    output_root(common).join(format!("{command}-{}", &cfg.digest()[..12]))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: BTreeMap<&'a str, &'a str>,
    config_digest: &'a str,
    seed: u64,
    data_digest: &'a str,
    outputs: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    data_digest: &str,
    outputs: &[String],
) -> Result<()> {
    let entries = cfg.entries();
    let digest = cfg.digest();
    let manifest = Manifest {
        command,
        config: entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect(),
        config_digest: &digest,
        seed: cfg.seed,
        data_digest,
        outputs: outputs.to_vec(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization failed: {e}")))?;
    json.push('\n');
    write_text(&dir.join("manifest.json"), &json)
}

fn records_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("epoch,total_reward,cost,savings_pct,mean_loss,epsilon\n");
    for r in records {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.epoch, r.total_reward, r.cost, r.savings_pct, r.mean_loss, r.epsilon
        ));
    }
    out
}

fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let cfg = load_run_config(common)?;
    let env = cfg.env_config()?;
    let full = cfg.full_profile()?;
    let (train_profile, _) = cfg.split_profiles()?;

    let output = train(&env, &train_profile, &cfg.agent)?;

    let dir = run_dir(common, "train", &cfg);
    let checkpoints_dir = dir.join("checkpoints");
    ensure_dir(&checkpoints_dir)?;
    let mut outputs = vec!["config.txt".to_string(), "records.csv".to_string()];
    write_text(&dir.join("config.txt"), &cfg.to_config_string())?;
    write_text(&dir.join("records.csv"), &records_csv(&output.records))?;
    for checkpoint in &output.checkpoints {
        let name = checkpoint_file_name(checkpoint.epoch);
        save_checkpoint(&checkpoint.params, cfg.seed, checkpoints_dir.join(&name))?;
        outputs.push(format!("checkpoints/{name}"));
    }
    write_manifest(&dir, "train", &cfg, full.digest(), &outputs)?;

    let last = output.records.last();
    println!("run directory: {}", dir.display());
    if let Some(record) = last {
        println!(
            "final epoch {}: savings {}%, mean loss {}",
            record.epoch,
            fmt_sig(record.savings_pct),
            fmt_sig(record.mean_loss)
        );
    }
    Ok(())
}

fn eval_days(profile: &LoadProfile) -> Vec<usize> {
    (0..profile.day_count()).collect()
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = load_run_config(&args.common)?;
    if cfg.test_days == 0 {
        return Err(Error::UsageError(
            "evaluation needs data.test_days > 0 for a held-out split".into(),
        ));
    }
    let env = cfg.env_config()?;
    let full = cfg.full_profile()?;
    let (_, test_profile) = cfg.split_profiles()?;
    let (params, _) = load_checkpoint(&args.checkpoint)?;

    let days = eval_days(&test_profile);
    let eval = evaluate(&params, &env, &test_profile, &days)?;
    let histogram = SlotActionHistogram::from_traces(&eval.traces, &env.tariff);

    let mut config = cfg.entries();
    config.push((
        "eval.checkpoint".to_string(),
        args.checkpoint.display().to_string(),
    ));
    let report = Report {
        config,
        seed: cfg.seed,
        data_digest: full.digest().to_string(),
        headline: vec![
            ("baseline_cost".to_string(), eval.baseline_cost),
            ("agent_cost".to_string(), eval.total_cost),
            ("savings_pct".to_string(), eval.savings_pct),
        ],
        traces: eval
            .traces
            .iter()
            .map(|t| (format!("day_{:03}", t.day_index), t.clone()))
            .collect(),
        histograms: vec![("all_days".to_string(), histogram)],
        sweep: None,
    };
    let dir = run_dir(&args.common, "eval", &cfg);
    emit_report(&report, &dir)?;

    println!("evaluated {} day(s)", eval.traces.len());
    println!(
        "baseline {} agent {} savings {}%",
        fmt_sig(eval.baseline_cost),
        fmt_sig(eval.total_cost),
        fmt_sig(eval.savings_pct)
    );
    println!("report directory: {}", dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = load_run_config(&args.common)?;
    let capacities = parse_capacities(&cfg.capacities)?;
    let env = cfg.env_config()?;
    let (train_profile, test_profile) = cfg.split_profiles()?;
    if test_profile.day_count() == 0 {
        return Err(Error::UsageError(
            "sweeps need data.test_days > 0 to score agents on held-out days".into(),
        ));
    }
    let full = cfg.full_profile()?;
    let sweep_cfg = SweepConfig {
        env,
        agent: cfg.agent.clone(),
        train_profile,
        eval_profile: test_profile,
        oracle: cfg.oracle.clone(),
        jobs: args.jobs.unwrap_or(cfg.jobs),
    };

    let dir = run_dir(&args.common, "sweep", &cfg);
    let mut headline = Vec::new();

    if cfg.dr.enabled {
        let comparison = dr_comparison(&capacities, &sweep_cfg, &cfg.dr)?;
        if let Some(at) = comparison.tod_flattening_wh {
            headline.push(("tod_flattening_wh".to_string(), at));
        }
        if let Some(at) = comparison.dr_flattening_wh {
            headline.push(("dr_flattening_wh".to_string(), at));
        }
        let tod_report = Report {
            config: cfg.entries(),
            seed: cfg.seed,
            data_digest: full.digest().to_string(),
            headline: headline.clone(),
            sweep: Some(comparison.tod.clone()),
            ..Report::default()
        };
        emit_report(&tod_report, &dir)?;
        let dr_report = Report {
            config: cfg.entries(),
            seed: cfg.seed,
            data_digest: full.digest().to_string(),
            headline,
            sweep: Some(comparison.dr.clone()),
            ..Report::default()
        };
        emit_report(&dr_report, dir.join("dr"))?;
        println!("tariff-only diagonal:");
        print_diagonal(&comparison.tod);
        println!("with demand response:");
        print_diagonal(&comparison.dr);
    } else {
        let sweep = capacity_sweep(&capacities, &sweep_cfg)?;
        if let Some(at) = flattening_of(&sweep) {
            headline.push(("flattening_wh".to_string(), at));
        }
        let report = Report {
            config: cfg.entries(),
            seed: cfg.seed,
            data_digest: full.digest().to_string(),
            headline,
            sweep: Some(sweep.clone()),
            ..Report::default()
        };
        emit_report(&report, &dir)?;
        print_diagonal(&sweep);
    }
    println!("report directory: {}", dir.display());
    Ok(())
}

fn flattening_of(sweep: &crate::analysis::SweepResult) -> Option<f64> {
    crate::analysis::flattening_capacity(&sweep.diagonal_curve())
}

fn print_diagonal(sweep: &crate::analysis::SweepResult) {
    println!("capacity_wh savings_pct oracle_pct fraction");
    for row in sweep.diagonal() {
        println!(
            "{} {} {} {}",
            fmt_sig(row.eval_capacity_wh),
            fmt_sig(row.savings_pct),
            fmt_sig(row.oracle_savings_pct),
            fmt_sig(row.fraction_of_oracle)
        );
    }
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let cfg = load_run_config(&args.common)?;
    let env = cfg.env_config()?;
    let profile = cfg.full_profile()?;
    let loads = profile.day(args.day)?;
    let plan = dp_optimal(
        loads,
        &env.tariff,
        &env.battery,
        &env.dr,
        env.initial_energy_wh(),
        &cfg.oracle,
    )?;
    let baseline = baseline_cost(loads, &env.tariff, &env.dr)?;
    let savings = cost_saving(plan.total_cost, baseline)?;

    let mut rows = Vec::with_capacity(plan.actions.len());
    for (hour, &action) in plan.actions.iter().enumerate() {
        rows.push(TraceRow {
            hour,
            price: env.tariff.price_at(hour as u32)?,
            load_wh: loads[hour],
            action,
            battery_wh: plan.battery_wh[hour],
            grid_wh: plan.grid_draws_wh[hour],
            reward: plan.rewards[hour],
        });
    }
    let trace = EpisodeTrace {
        day_index: args.day,
        initial_battery_wh: env.initial_energy_wh(),
        rows,
    };
    let histogram = SlotActionHistogram::from_trace(&trace, &env.tariff);

    let mut config = cfg.entries();
    config.push(("oracle.day".to_string(), args.day.to_string()));
    let report = Report {
        config,
        seed: cfg.seed,
        data_digest: profile.digest().to_string(),
        headline: vec![
            ("baseline_cost".to_string(), baseline),
            ("optimal_cost".to_string(), plan.total_cost),
            ("savings_pct".to_string(), savings),
        ],
        traces: vec![(format!("day_{:03}", args.day), trace)],
        histograms: vec![(format!("day_{:03}", args.day), histogram)],
        sweep: None,
    };
    let dir = run_dir(&args.common, "oracle", &cfg);
    emit_report(&report, &dir)?;

    println!(
        "day {}: baseline {} optimal {} savings {}%",
        args.day,
        fmt_sig(baseline),
        fmt_sig(plan.total_cost),
        fmt_sig(savings)
    );
    println!("report directory: {}", dir.display());
    Ok(())
}

fn read_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(epoch) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        let (params, _) = load_checkpoint(entry.path())?;
        found.push(Checkpoint { epoch, params });
    }
    found.sort_by_key(|c| c.epoch);
    Ok(found)
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let config_path = args.run_dir.join("config.txt");
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let cfg = RunConfig::from_entries(parse_config_text(&text)?)?;
    let env = cfg.env_config()?;
    let full = cfg.full_profile()?;
    let checkpoints = read_checkpoints(&args.run_dir.join("checkpoints"))?;
    if checkpoints.len() < 2 {
        return Err(Error::UsageError(format!(
            "{} holds {} checkpoint(s); explaining needs at least two",
            args.run_dir.display(),
            checkpoints.len()
        )));
    }

    // Probe on the first held-out day when there is one.
    let probe_day = args
        .day
        .unwrap_or(if cfg.test_days > 0 { cfg.train_days } else { 0 });
    let entries = learning_progression(&checkpoints, &env, &full, probe_day)?;

    let mut progression = String::from("epoch,savings_pct,charged_wh,discharged_wh\n");
    let mut histograms = Vec::new();
    for entry in &entries {
        progression.push_str(&format!(
            "{},{},{},{}\n",
            entry.epoch,
            fmt_sig(entry.savings_pct),
            fmt_sig(entry.histogram.charged_total_wh()),
            fmt_sig(entry.histogram.discharged_total_wh())
        ));
        histograms.push((format!("epoch_{:04}", entry.epoch), entry.histogram.clone()));
    }

    let last = checkpoints.last().expect("checked above");
    let final_eval = evaluate(&last.params, &env, &full, &[probe_day])?;

    let mut config = cfg.entries();
    config.push(("explain.day".to_string(), probe_day.to_string()));
    let report = Report {
        config,
        seed: cfg.seed,
        data_digest: full.digest().to_string(),
        headline: vec![("final_savings_pct".to_string(), final_eval.savings_pct)],
        traces: vec![(
            format!("final_day_{probe_day:03}"),
            final_eval.traces[0].clone(),
        )],
        histograms,
        sweep: None,
    };
    let dir = args.run_dir.join("explain");
    emit_report(&report, &dir)?;
    write_text(&dir.join("progression.csv"), &progression)?;

    println!(
        "replayed {} checkpoints on day {probe_day}; final savings {}%",
        entries.len(),
        fmt_sig(final_eval.savings_pct)
    );
    println!("report directory: {}", dir.display());
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        base_load_w: args.base_load,
        evening_peak_w: args.evening_peak,
        peak_start_hour: args.peak_start,
        peak_end_hour: args.peak_end,
        noise_frac: args.noise_frac,
        seed: args.seed,
        days: args.days,
    };
    let profile = data::generate(&spec)?;
    data::write_csv(&profile, &args.out_file)?;
    println!(
        "wrote {} ({} days, digest {})",
        args.out_file.display(),
        profile.day_count(),
        profile.digest()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = RunConfig::from_entries(Vec::new()).unwrap();
        assert_eq!(cfg, RunConfig::default());
        // The default agent carries the published hyperparameters.
        assert_eq!(cfg.agent.batch_size, 32);
        assert_eq!(cfg.agent.replay_capacity, 10240);
        assert_eq!(cfg.agent.gamma, 0.96);
        assert_eq!(cfg.agent.learning_rate, 0.00025);
        assert_eq!(cfg.agent.epsilon_initial, 1.0);
        assert_eq!(cfg.agent.epsilon_final, 0.1);
    }

    #[test]
    fn config_round_trips_losslessly() {
        let text = "\
            seed = 42\n\
            tariff.name = tata\n\
            battery.capacity_wh = 1800.5\n\
            dr.enabled = true\n\
            dr.mode = per_interval\n\
            env.initial_soc = 0.25\n\
            env.observe_day_cumulative = false\n\
            agent.trunk = 16,8\n\
            agent.streams = \n\
            agent.epsilon_decay_steps = 1234\n\
            agent.history_days = all\n\
            data.csv = loads.csv\n\
            data.seed = 9\n\
            sweep.capacities = 900,1800\n";
        let cfg = RunConfig::from_entries(parse_config_text(text).unwrap()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.agent.seed, 42);
        assert_eq!(cfg.synthetic.seed, 9);
        assert_eq!(cfg.agent.layers.stream_sizes, Vec::<usize>::new());
        assert_eq!(cfg.agent.history_days, None);
        assert_eq!(cfg.initial_soc, Some(0.25));

        let rewritten = cfg.to_config_string();
        let reparsed = RunConfig::from_entries(parse_config_text(&rewritten).unwrap()).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(cfg.digest(), reparsed.digest());
    }

    #[test]
    fn data_seed_follows_the_run_seed_unless_pinned() {
        let cfg = RunConfig::from_entries(vec![("seed".into(), "7".into())]).unwrap();
        assert_eq!(cfg.synthetic.seed, 7);
        let pinned = RunConfig::from_entries(vec![
            ("seed".into(), "7".into()),
            ("data.seed".into(), "3".into()),
        ])
        .unwrap();
        assert_eq!(pinned.synthetic.seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            RunConfig::from_entries(vec![("agent.disscount".into(), "0.9".into())]).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("agent.disscount"), "{message}");
        assert!(err.is_user_error());
    }

    #[test]
    fn bad_values_name_the_key() {
        let err =
            RunConfig::from_entries(vec![("agent.discount".into(), "fast".into())]).unwrap_err();
        assert!(err.to_string().contains("agent.discount"));
        let err = RunConfig::from_entries(vec![("dr.mode".into(), "hourly".into())]).unwrap_err();
        assert!(err.is_user_error());
    }

    #[test]
    fn config_text_parsing() {
        let entries = parse_config_text("# comment\n\n a = 1 \n b = x = y \n").unwrap();
        assert_eq!(entries[0], ("a".into(), "1".into()));
        // Values may contain '='; only the first one splits.
        assert_eq!(entries[1], ("b".into(), "x = y".into()));
        assert!(parse_config_text("just words\n").is_err());
    }

    #[test]
    fn later_keys_override_earlier_ones() {
        let cfg = RunConfig::from_entries(vec![
            ("seed".into(), "1".into()),
            ("seed".into(), "2".into()),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 2);
    }

    #[test]
    fn capacity_range_expands_inclusively() {
        let caps = parse_capacities("5000..30000 step 5000").unwrap();
        assert_eq!(
            caps,
            vec![5000.0, 10000.0, 15000.0, 20000.0, 25000.0, 30000.0]
        );
        let caps = parse_capacities("900, 1800").unwrap();
        assert_eq!(caps, vec![900.0, 1800.0]);
    }

    #[test]
    fn capacity_parse_errors_are_user_errors() {
        for bad in [
            "",
            "5000..1000 step 500",
            "5000..30000 step 0",
            "5000..30000",
            "abc",
            "-5",
        ] {
            let err = parse_capacities(bad).unwrap_err();
            assert!(err.is_user_error(), "'{bad}' should be a usage error");
        }
    }

    #[test]
    fn config_digest_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        b.agent.seed = 1;
        b.synthetic.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn checkpoint_names_sort_with_epochs() {
        assert_eq!(checkpoint_file_name(0), "epoch_0000.ckpt");
        assert_eq!(checkpoint_file_name(500), "epoch_0500.ckpt");
        assert!(checkpoint_file_name(20) < checkpoint_file_name(100));
    }
}
