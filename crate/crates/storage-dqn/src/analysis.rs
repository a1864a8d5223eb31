//! Explaining what a trained policy does: greedy-rollout traces, per-slot
//! action histograms, learning-progression reports, capacity sweeps with an
//! oracle column, and deterministic report files for external plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::agent::{fine_tune, greedy_action, train, AgentConfig, Checkpoint};
use crate::data::{LoadProfile, HOURS_PER_DAY};
use crate::environment::{
    baseline_cost, cost_saving, penalty, Action, BatteryConfig, DemandResponseConfig, EnvConfig,
    Environment,
};
use crate::network::NetworkParams;
use crate::oracle::{dp_optimal, OracleOptions};
use crate::tariff::TariffSchedule;
use crate::{Error, Result};

/// One decided hour of a replayed episode. `battery_wh` is the stored energy
/// after the action took effect.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub hour: usize,
    pub price: f64,
    pub load_wh: f64,
    pub action: Action,
    pub battery_wh: f64,
    pub grid_wh: f64,
    pub reward: f64,
}

/// A full day replayed under the greedy policy. Replays are deterministic:
/// the same parameters, environment and day always give the same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub day_index: usize,
    pub initial_battery_wh: f64,
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    /// The day's bill including penalties: the negated reward sum.
    pub fn total_cost(&self) -> f64 {
        self.rows.iter().map(|r| -r.reward).sum()
    }
}

/// Charge/discharge totals inside one pricing window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBucket {
    pub start_hour: u32,
    pub end_hour: u32,
    /// Energy actually stored, Wh (after clipping at the capacity ceiling).
    pub charged_wh: f64,
    /// Energy actually released, Wh.
    pub discharged_wh: f64,
    /// Hours whose stored energy did not change, whatever action was chosen.
    pub idle_hours: usize,
}

/// Where in the tariff day the battery moved energy — the data behind the
/// "charges in cheap slots, discharges in expensive ones" reading of a
/// policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotActionHistogram {
    pub slots: Vec<SlotBucket>,
}

impl SlotActionHistogram {
    /// Accumulate one or more day traces into per-slot totals.
    pub fn from_traces(traces: &[EpisodeTrace], tariff: &TariffSchedule) -> Self {
        let mut slots: Vec<SlotBucket> = tariff
            .slots()
            .iter()
            .map(|s| SlotBucket {
                start_hour: s.start_hour,
                end_hour: s.end_hour,
                charged_wh: 0.0,
                discharged_wh: 0.0,
                idle_hours: 0,
            })
            .collect();
        slots.sort_by_key(|s| s.start_hour);
        for trace in traces {
            let mut previous = trace.initial_battery_wh;
            for row in &trace.rows {
                let delta = row.battery_wh - previous;
                previous = row.battery_wh;
                let hour = (row.hour % HOURS_PER_DAY) as u32;
                let Some(bucket) = slots
                    .iter_mut()
                    .find(|s| s.start_hour <= hour && hour < s.end_hour)
                else {
                    continue;
                };
                if delta > 0.0 {
                    bucket.charged_wh += delta;
                } else if delta < 0.0 {
                    bucket.discharged_wh += -delta;
                } else {
                    bucket.idle_hours += 1;
                }
            }
        }
        SlotActionHistogram { slots }
    }

    pub fn from_trace(trace: &EpisodeTrace, tariff: &TariffSchedule) -> Self {
        Self::from_traces(std::slice::from_ref(trace), tariff)
    }

    /// The bucket whose window starts at `start_hour`, if any.
    pub fn slot(&self, start_hour: u32) -> Option<&SlotBucket> {
        self.slots.iter().find(|s| s.start_hour == start_hour)
    }

    pub fn charged_total_wh(&self) -> f64 {
        self.slots.iter().map(|s| s.charged_wh).sum()
    }

    pub fn discharged_total_wh(&self) -> f64 {
        self.slots.iter().map(|s| s.discharged_wh).sum()
    }
}

/// Greedy-policy performance over a set of days.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub traces: Vec<EpisodeTrace>,
    pub total_cost: f64,
    pub baseline_cost: f64,
    pub savings_pct: f64,
}

/// Roll the greedy policy (no exploration) over the given days and score it
/// against the no-battery baseline.
pub fn evaluate(
    params: &NetworkParams,
    env_cfg: &EnvConfig,
    profile: &LoadProfile,
    days: &[usize],
) -> Result<Evaluation> {
    if env_cfg.observation_len() != params.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: params.input_dim(),
            got: env_cfg.observation_len(),
        });
    }
    if days.is_empty() {
        return Err(Error::InvalidConfig(
            "evaluation needs at least one day".into(),
        ));
    }
    let mut env = Environment::new(env_cfg.clone(), profile.clone())?;
    let mut traces = Vec::with_capacity(days.len());
    let mut total_cost = 0.0;
    let mut baseline_total = 0.0;
    for &day in days {
        let mut observation = env.reset(day)?;
        let initial_battery_wh = env.battery_energy_wh();
        let mut rows = Vec::with_capacity(HOURS_PER_DAY);
        let mut day_cost = 0.0;
        loop {
            let hour = env.hour();
            let price = env_cfg.tariff.price_at(hour as u32)?;
            let load_wh = profile.load_at(day, hour);
            let action = greedy_action(params, &observation)?;
            let outcome = env.step(action)?;
            rows.push(TraceRow {
                hour,
                price,
                load_wh,
                action,
                battery_wh: env.battery_energy_wh(),
                grid_wh: outcome.grid_draw_wh,
                reward: outcome.reward,
            });
            day_cost += -outcome.reward;
            observation = outcome.next_observation;
            if outcome.done {
                break;
            }
        }
        // Aggregate per day, like the baseline, so the two totals stay
        // bit-comparable when every hour's cost matches.
        total_cost += day_cost;
        baseline_total += baseline_cost(profile.day(day)?, &env_cfg.tariff, &env_cfg.dr)?;
        traces.push(EpisodeTrace {
            day_index: day,
            initial_battery_wh,
            rows,
        });
    }
    let savings_pct = cost_saving(total_cost, baseline_total)?;
    Ok(Evaluation {
        traces,
        total_cost,
        baseline_cost: baseline_total,
        savings_pct,
    })
}

/// One checkpoint's behavior on the probe day.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionEntry {
    pub epoch: usize,
    pub savings_pct: f64,
    pub histogram: SlotActionHistogram,
}

/// Replay every checkpoint greedily on one probe day, oldest first. Reading
/// the entries in order shows what the agent picked up when — typically
/// discharging in expensive slots first, charging in cheap ones later.
pub fn learning_progression(
    checkpoints: &[Checkpoint],
    env_cfg: &EnvConfig,
    profile: &LoadProfile,
    probe_day: usize,
) -> Result<Vec<ProgressionEntry>> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "learning progression needs at least two checkpoints, got {}",
            checkpoints.len()
        )));
    }
    let mut entries = Vec::with_capacity(checkpoints.len());
    for checkpoint in checkpoints {
        let eval = evaluate(&checkpoint.params, env_cfg, profile, &[probe_day])?;
        entries.push(ProgressionEntry {
            epoch: checkpoint.epoch,
            savings_pct: eval.savings_pct,
            histogram: SlotActionHistogram::from_traces(&eval.traces, &env_cfg.tariff),
        });
    }
    Ok(entries)
}

/// One cell of the cross-capacity matrix: an agent trained on one battery
/// size evaluated on another (or the same) size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub train_capacity_wh: f64,
    pub eval_capacity_wh: f64,
    pub savings_pct: f64,
    pub oracle_savings_pct: f64,
    /// `savings_pct / oracle_savings_pct`, or 0 when the oracle itself saves
    /// nothing at this capacity.
    pub fraction_of_oracle: f64,
}

/// The full cross matrix, train-capacity-major, one row per (train, eval)
/// pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub capacities_wh: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Cells where the evaluation battery matches the training battery.
    pub fn diagonal(&self) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.train_capacity_wh == r.eval_capacity_wh)
            .collect()
    }

    pub fn cell(&self, train_capacity_wh: f64, eval_capacity_wh: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.train_capacity_wh == train_capacity_wh && r.eval_capacity_wh == eval_capacity_wh
        })
    }

    /// Diagonal as (capacity, savings) pairs, for flattening detection.
    pub fn diagonal_curve(&self) -> Vec<(f64, f64)> {
        self.diagonal()
            .iter()
            .map(|r| (r.eval_capacity_wh, r.savings_pct))
            .collect()
    }
}

/// Everything a capacity sweep needs besides the capacity list. The battery
/// in `env` is a placeholder: each cell replaces it with a proportionally
/// rated battery of the cell's capacity.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train_profile: LoadProfile,
    pub eval_profile: LoadProfile,
    pub oracle: OracleOptions,
    /// Worker threads for the independent per-capacity jobs.
    pub jobs: usize,
}

impl SweepConfig {
    fn env_for(&self, capacity_wh: f64) -> Result<EnvConfig> {
        let mut env = self.env.clone();
        env.battery = BatteryConfig::proportional(capacity_wh)?;
        Ok(env)
    }

    /// Per-capacity seed, so cells differ but reruns do not.
    fn seed_for(&self, index: usize) -> u64 {
        self.agent.seed.wrapping_add(index as u64)
    }
}

/// Run independent jobs over `0..count` on up to `jobs` threads, collecting
/// results in index order. Each job is deterministic, so the thread count
/// never changes the output.
fn run_jobs<T, F>(count: usize, jobs: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = jobs.max(1).min(count.max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= count {
                    break;
                }
                let outcome = job(index);
                results.lock().expect("sweep worker panicked")[index] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("sweep worker panicked")
        .into_iter()
        .map(|slot| slot.expect("job left no result"))
        .collect()
}

/// The exact dispatcher's savings over every day of the evaluation profile
/// for one battery size, with the same initial state of charge the
/// environment uses.
fn oracle_savings(cfg: &SweepConfig, capacity_wh: f64) -> Result<f64> {
    let env = cfg.env_for(capacity_wh)?;
    let mut dispatch_total = 0.0;
    let mut baseline_total = 0.0;
    for day in 0..cfg.eval_profile.day_count() {
        let loads = cfg.eval_profile.day(day)?;
        let plan = dp_optimal(
            loads,
            &env.tariff,
            &env.battery,
            &env.dr,
            env.initial_energy_wh(),
            &cfg.oracle,
        )?;
        dispatch_total += plan.total_cost;
        baseline_total += baseline_cost(loads, &env.tariff, &env.dr)?;
    }
    cost_saving(dispatch_total, baseline_total)
}

fn all_eval_days(profile: &LoadProfile) -> Vec<usize> {
    (0..profile.day_count()).collect()
}

/// Train one agent per capacity (optionally warm-starting each from a
/// matching base network) and evaluate every agent on every capacity.
fn sweep_matrix(
    capacities_wh: &[f64],
    cfg: &SweepConfig,
    bases: Option<&[NetworkParams]>,
) -> Result<(Vec<NetworkParams>, SweepResult)> {
    if capacities_wh.is_empty() {
        return Err(Error::InvalidConfig(
            "capacity sweep needs at least one capacity".into(),
        ));
    }
    if let Some(bases) = bases {
        if bases.len() != capacities_wh.len() {
            return Err(Error::Internal(format!(
                "{} base networks for {} capacities",
                bases.len(),
                capacities_wh.len()
            )));
        }
    }

    // Train one agent per capacity; cells are independent jobs.
    let trained = run_jobs(capacities_wh.len(), cfg.jobs, |i| {
        let env = cfg.env_for(capacities_wh[i])?;
        let mut agent_cfg = cfg.agent.clone();
        agent_cfg.seed = cfg.seed_for(i);
        let output = match bases {
            Some(bases) => fine_tune(&bases[i], &env, &cfg.train_profile, &agent_cfg)?,
            None => train(&env, &cfg.train_profile, &agent_cfg)?,
        };
        Ok(output.params)
    })?;

    // The oracle column depends only on the evaluation capacity.
    let oracle_column = run_jobs(capacities_wh.len(), cfg.jobs, |j| {
        oracle_savings(cfg, capacities_wh[j])
    })?;

    let eval_days = all_eval_days(&cfg.eval_profile);
    let mut rows = Vec::with_capacity(capacities_wh.len() * capacities_wh.len());
    for (i, &train_capacity) in capacities_wh.iter().enumerate() {
        for (j, &eval_capacity) in capacities_wh.iter().enumerate() {
            let env = cfg.env_for(eval_capacity)?;
            let eval = evaluate(&trained[i], &env, &cfg.eval_profile, &eval_days)?;
            let oracle_savings_pct = oracle_column[j];
            let fraction_of_oracle = if oracle_savings_pct > 0.0 {
                eval.savings_pct / oracle_savings_pct
            } else {
                0.0
            };
            rows.push(SweepRow {
                train_capacity_wh: train_capacity,
                eval_capacity_wh: eval_capacity,
                savings_pct: eval.savings_pct,
                oracle_savings_pct,
                fraction_of_oracle,
            });
        }
    }
    Ok((
        trained,
        SweepResult {
            capacities_wh: capacities_wh.to_vec(),
            rows,
        },
    ))
}

/// Train one agent per battery capacity and fill the cross-capacity matrix:
/// every agent evaluated on every size, with the exact dispatcher's savings
/// alongside each cell. The diagonal is the storage-capacity-versus-savings
/// curve.
pub fn capacity_sweep(capacities_wh: &[f64], cfg: &SweepConfig) -> Result<SweepResult> {
    sweep_matrix(capacities_wh, cfg, None).map(|(_, result)| result)
}

/// The two arms of a demand-response comparison, trained and evaluated
/// identically except for the penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct DrComparison {
    pub tod: SweepResult,
    pub dr: SweepResult,
    pub tod_flattening_wh: Option<f64>,
    pub dr_flattening_wh: Option<f64>,
}

/// Sweep the same capacities twice: once under the plain tariff and once
/// with the demand-response penalty active, warm-starting each penalty-arm
/// agent from its tariff-arm counterpart.
pub fn dr_comparison(
    capacities_wh: &[f64],
    cfg: &SweepConfig,
    dr: &DemandResponseConfig,
) -> Result<DrComparison> {
    if !dr.enabled {
        return Err(Error::InvalidConfig(
            "demand-response comparison needs an enabled penalty for the second arm".into(),
        ));
    }
    dr.validate()?;

    // Pin the observation layout across both arms so the tariff-arm weights
    // can seed the penalty arm: the cumulative-draw component would
    // otherwise appear only in the second arm and change the input width.
    let mut base = cfg.clone();
    base.env.observe_day_cumulative = Some(base.env.observes_cumulative() || dr.enabled);

    let mut tod_cfg = base.clone();
    tod_cfg.env.dr = DemandResponseConfig::disabled();
    let (tod_params, tod) = sweep_matrix(capacities_wh, &tod_cfg, None)?;

    let mut dr_cfg = base;
    dr_cfg.env.dr = dr.clone();
    let (_, dr_result) = sweep_matrix(capacities_wh, &dr_cfg, Some(&tod_params))?;

    let tod_flattening_wh = flattening_capacity(&tod.diagonal_curve());
    let dr_flattening_wh = flattening_capacity(&dr_result.diagonal_curve());
    Ok(DrComparison {
        tod,
        dr: dr_result,
        tod_flattening_wh,
        dr_flattening_wh,
    })
}

/// First capacity whose savings sit within half a percentage point of the
/// previous capacity's — where a savings-versus-capacity curve stops paying
/// for bigger batteries. `None` when the curve never settles.
pub fn flattening_capacity(curve: &[(f64, f64)]) -> Option<f64> {
    curve
        .windows(2)
        .find(|pair| (pair[1].1 - pair[0].1).abs() < 0.5)
        .map(|pair| pair[1].0)
}

/// Everything `emit_report` writes, already computed. Traces and histograms
/// are labeled; labels become file names.
#[derive(Debug, Clone, Default)]
pub struct Report {
    /// Flat dotted-key configuration, as the CLI's config format.
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub data_digest: String,
    /// Named headline numbers (savings, costs, fractions of optimal).
    pub headline: Vec<(String, f64)>,
    pub traces: Vec<(String, EpisodeTrace)>,
    pub histograms: Vec<(String, SlotActionHistogram)>,
    pub sweep: Option<SweepResult>,
}

#[derive(Serialize)]
struct SummaryCapacity {
    capacity_wh: f64,
    savings_pct: f64,
    oracle_savings_pct: f64,
    fraction_of_oracle: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: std::collections::BTreeMap<&'a str, &'a str>,
    seed: u64,
    data_digest: &'a str,
    headline: std::collections::BTreeMap<&'a str, f64>,
    capacities: Vec<SummaryCapacity>,
}

/// Format with six significant digits, plain notation. Integers wider than
/// the budget keep their exact digits rather than switching to scientific
/// notation; nothing this toolkit reports gets that large.
pub fn fmt_sig(value: f64) -> String {
    const DIGITS: i32 = 6;
    if value == 0.0 || !value.is_finite() {
        return if value == 0.0 {
            "0".into()
        } else {
            value.to_string()
        };
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (DIGITS - 1 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn trace_csv(trace: &EpisodeTrace) -> String {
    let mut out = String::from("hour,price,load_wh,action,battery_wh,grid_wh,reward\n");
    for row in &trace.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.hour,
            fmt_sig(row.price),
            fmt_sig(row.load_wh),
            row.action.label(),
            fmt_sig(row.battery_wh),
            fmt_sig(row.grid_wh),
            fmt_sig(row.reward),
        ));
    }
    out
}

fn histogram_csv(histogram: &SlotActionHistogram) -> String {
    let mut out = String::from("slot_start,slot_end,charged_wh,discharged_wh,idle_hours\n");
    for slot in &histogram.slots {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            slot.start_hour,
            slot.end_hour,
            fmt_sig(slot.charged_wh),
            fmt_sig(slot.discharged_wh),
            slot.idle_hours,
        ));
    }
    out
}

fn sweep_rows_csv(rows: &[&SweepRow], with_train_column: bool) -> String {
    let mut out = String::from(if with_train_column {
        "train_capacity_wh,eval_capacity_wh,savings_pct,oracle_savings_pct,fraction_of_oracle\n"
    } else {
        "capacity_wh,savings_pct,oracle_savings_pct,fraction_of_oracle\n"
    });
    for row in rows {
        if with_train_column {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_sig(row.train_capacity_wh),
                fmt_sig(row.eval_capacity_wh),
                fmt_sig(row.savings_pct),
                fmt_sig(row.oracle_savings_pct),
                fmt_sig(row.fraction_of_oracle),
            ));
        } else {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_sig(row.eval_capacity_wh),
                fmt_sig(row.savings_pct),
                fmt_sig(row.oracle_savings_pct),
                fmt_sig(row.fraction_of_oracle),
            ));
        }
    }
    out
}

/// Write the report as plot-ready files: `traces/*.csv`,
/// `histograms/*.csv`, `sweep.csv` (diagonal), `cross_matrix.csv` (every
/// cell) and `summary.json`. Rerunning with the same inputs rewrites
/// byte-identical files — nothing here depends on time or machine. Returns
/// the paths written.
pub fn emit_report(report: &Report, output_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = output_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    if !report.traces.is_empty() {
        let traces_dir = dir.join("traces");
        fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
        for (label, trace) in &report.traces {
            let path = traces_dir.join(format!("{label}.csv"));
            write_file(&path, &trace_csv(trace))?;
            written.push(path);
        }
    }

    if !report.histograms.is_empty() {
        let histograms_dir = dir.join("histograms");
        fs::create_dir_all(&histograms_dir).map_err(|e| Error::io(&histograms_dir, e))?;
        for (label, histogram) in &report.histograms {
            let path = histograms_dir.join(format!("{label}.csv"));
            write_file(&path, &histogram_csv(histogram))?;
            written.push(path);
        }
    }

    if let Some(sweep) = &report.sweep {
        let diagonal = dir.join("sweep.csv");
        write_file(&diagonal, &sweep_rows_csv(&sweep.diagonal(), false))?;
        written.push(diagonal);
        let matrix = dir.join("cross_matrix.csv");
        let all: Vec<&SweepRow> = sweep.rows.iter().collect();
        write_file(&matrix, &sweep_rows_csv(&all, true))?;
        written.push(matrix);
    }

    let summary = Summary {
        config: report
            .config
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect(),
        seed: report.seed,
        data_digest: &report.data_digest,
        headline: report
            .headline
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .collect(),
        capacities: report
            .sweep
            .iter()
            .flat_map(|s| s.diagonal())
            .map(|row| SummaryCapacity {
                capacity_wh: row.eval_capacity_wh,
                savings_pct: row.savings_pct,
                oracle_savings_pct: row.oracle_savings_pct,
                fraction_of_oracle: row.fraction_of_oracle,
            })
            .collect(),
    };
    let path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Internal(format!("summary serialization failed: {e}")))?;
    json.push('\n');
    write_file(&path, &json)?;
    written.push(path);

    Ok(written)
}

/// Recompute a trace's bill from its own rows and the tariff, as an
/// independent check on every reported savings number.
pub fn recompute_cost(
    trace: &EpisodeTrace,
    tariff: &TariffSchedule,
    dr: &DemandResponseConfig,
) -> Result<f64> {
    let mut cumulative = 0.0;
    let mut cost = 0.0;
    for row in &trace.rows {
        let price = tariff.price_at((row.hour % HOURS_PER_DAY) as u32)?;
        cost += price * row.grid_wh / 1000.0 + penalty(dr, cumulative, row.grid_wh);
        cumulative += row.grid_wh;
    }
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};
    use crate::network::{init, LayerSpec};
    use crate::tariff::builtin_schedule;
    use approx::assert_abs_diff_eq;

    fn tiny_agent_cfg() -> AgentConfig {
        AgentConfig {
            layers: LayerSpec {
                trunk_sizes: vec![8],
                stream_sizes: vec![],
            },
            epochs: 2,
            warmup_transitions: 8,
            batch_size: 4,
            replay_capacity: 64,
            history_days: None,
            ..AgentConfig::default()
        }
    }

    fn small_profile(days: usize, seed: u64) -> LoadProfile {
        generate(&SyntheticSpec {
            days,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn table1_env(capacity_wh: f64) -> EnvConfig {
        EnvConfig::new(
            builtin_schedule("table1").unwrap(),
            BatteryConfig::new(capacity_wh, 300.0, 300.0, 0.0, 1.0).unwrap(),
            DemandResponseConfig::disabled(),
        )
    }

    fn random_params(env: &EnvConfig, seed: u64) -> NetworkParams {
        init(&LayerSpec::default(), env.observation_len(), seed).unwrap()
    }

    #[test]
    fn zero_capacity_saves_exactly_nothing() {
        let env = EnvConfig::new(
            builtin_schedule("tata").unwrap(),
            BatteryConfig::new(0.0, 0.0, 0.0, 0.1, 0.9).unwrap(),
            DemandResponseConfig::disabled(),
        );
        let profile = small_profile(2, 3);
        let params = random_params(&env, 7);
        let eval = evaluate(&params, &env, &profile, &[0, 1]).unwrap();
        assert_eq!(eval.savings_pct, 0.0);
        assert_eq!(eval.total_cost, eval.baseline_cost);
        assert_eq!(eval.traces.len(), 2);
        for trace in &eval.traces {
            assert_eq!(trace.rows.len(), HOURS_PER_DAY);
            for row in &trace.rows {
                assert_eq!(row.grid_wh, row.load_wh);
            }
        }
    }

    #[test]
    fn evaluate_rejects_wrong_input_width() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 1);
        let params = init(&LayerSpec::default(), env.observation_len() + 1, 0).unwrap();
        let err = evaluate(&params, &env, &profile, &[0]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn evaluate_is_deterministic() {
        let env = table1_env(900.0);
        let profile = small_profile(2, 5);
        let params = random_params(&env, 11);
        let a = evaluate(&params, &env, &profile, &[0, 1]).unwrap();
        let b = evaluate(&params, &env, &profile, &[0, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_policy_never_beats_the_oracle() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 9);
        let params = random_params(&env, 13);
        let eval = evaluate(&params, &env, &profile, &[0]).unwrap();
        let plan = dp_optimal(
            profile.day(0).unwrap(),
            &env.tariff,
            &env.battery,
            &env.dr,
            env.initial_energy_wh(),
            &OracleOptions::default(),
        )
        .unwrap();
        assert!(eval.total_cost >= plan.total_cost - 1e-9);
    }

    #[test]
    fn reported_cost_matches_trace_recompute() {
        let dr = DemandResponseConfig {
            enabled: true,
            ..DemandResponseConfig::default()
        };
        let env = EnvConfig::new(
            builtin_schedule("tata").unwrap(),
            BatteryConfig::new(900.0, 300.0, 300.0, 0.0, 1.0).unwrap(),
            dr,
        );
        let profile = small_profile(2, 21);
        let params = random_params(&env, 17);
        let eval = evaluate(&params, &env, &profile, &[0, 1]).unwrap();
        let mut recomputed = 0.0;
        for trace in &eval.traces {
            recomputed += recompute_cost(trace, &env.tariff, &env.dr).unwrap();
            assert_abs_diff_eq!(
                trace.total_cost(),
                recompute_cost(trace, &env.tariff, &env.dr).unwrap(),
                epsilon = 1e-9
            );
        }
        assert_abs_diff_eq!(eval.total_cost, recomputed, epsilon = 1e-9);
        let savings = cost_saving(recomputed, eval.baseline_cost).unwrap();
        assert_abs_diff_eq!(savings, eval.savings_pct, epsilon = 1e-9);
    }

    #[test]
    fn histogram_conserves_energy() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 30);
        let params = random_params(&env, 31);
        let eval = evaluate(&params, &env, &profile, &[0]).unwrap();
        let trace = &eval.traces[0];
        let histogram = SlotActionHistogram::from_trace(trace, &env.tariff);
        let delta = trace.rows.last().unwrap().battery_wh - trace.initial_battery_wh;
        assert_abs_diff_eq!(
            histogram.charged_total_wh() - histogram.discharged_total_wh(),
            delta,
            epsilon = 1e-9
        );
        let hours: usize = histogram
            .slots
            .iter()
            .map(|s| (s.end_hour - s.start_hour) as usize)
            .sum();
        assert_eq!(hours, HOURS_PER_DAY);
    }

    #[test]
    fn histogram_buckets_by_slot() {
        let tariff = builtin_schedule("table1").unwrap();
        let rows = vec![
            TraceRow {
                hour: 2,
                price: 1.0,
                load_wh: 100.0,
                action: Action::ChargePlusGrid,
                battery_wh: 300.0,
                grid_wh: 400.0,
                reward: -0.4,
            },
            TraceRow {
                hour: 9,
                price: 3.0,
                load_wh: 100.0,
                action: Action::DischargePlusGrid,
                battery_wh: 200.0,
                grid_wh: 0.0,
                reward: 0.0,
            },
            TraceRow {
                hour: 20,
                price: 2.0,
                load_wh: 100.0,
                action: Action::GridOnly,
                battery_wh: 200.0,
                grid_wh: 100.0,
                reward: -0.2,
            },
        ];
        let trace = EpisodeTrace {
            day_index: 0,
            initial_battery_wh: 0.0,
            rows,
        };
        let histogram = SlotActionHistogram::from_trace(&trace, &tariff);
        assert_eq!(histogram.slot(0).unwrap().charged_wh, 300.0);
        assert_eq!(histogram.slot(8).unwrap().discharged_wh, 100.0);
        assert_eq!(histogram.slot(16).unwrap().idle_hours, 1);
        assert_eq!(histogram.charged_total_wh(), 300.0);
        assert_eq!(histogram.discharged_total_wh(), 100.0);
    }

    #[test]
    fn progression_needs_two_checkpoints() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 2);
        let checkpoints = vec![Checkpoint {
            epoch: 0,
            params: random_params(&env, 1),
        }];
        assert!(learning_progression(&checkpoints, &env, &profile, 0).is_err());
    }

    #[test]
    fn progression_keeps_checkpoint_order() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 2);
        let checkpoints = vec![
            Checkpoint {
                epoch: 0,
                params: random_params(&env, 1),
            },
            Checkpoint {
                epoch: 10,
                params: random_params(&env, 2),
            },
        ];
        let entries = learning_progression(&checkpoints, &env, &profile, 0).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].epoch, 0);
        assert_eq!(entries[1].epoch, 10);
    }

    #[test]
    fn flattening_detects_the_knee() {
        let curve = vec![(5.0, 1.0), (10.0, 2.0), (15.0, 2.2), (20.0, 2.25)];
        assert_eq!(flattening_capacity(&curve), Some(15.0));
        let rising = vec![(5.0, 1.0), (10.0, 2.0), (15.0, 3.0)];
        assert_eq!(flattening_capacity(&rising), None);
        assert_eq!(flattening_capacity(&[]), None);
        assert_eq!(flattening_capacity(&[(5.0, 1.0)]), None);
    }

    fn small_sweep_cfg(jobs: usize) -> SweepConfig {
        SweepConfig {
            env: table1_env(0.0),
            agent: tiny_agent_cfg(),
            train_profile: small_profile(2, 40),
            eval_profile: small_profile(1, 41),
            oracle: OracleOptions {
                quantum_wh: 10.0,
                ..OracleOptions::default()
            },
            jobs,
        }
    }

    #[test]
    fn sweep_fills_the_cross_matrix() {
        let capacities = [0.0, 900.0];
        let result = capacity_sweep(&capacities, &small_sweep_cfg(1)).unwrap();
        assert_eq!(result.rows.len(), 4);
        let zero = result.cell(0.0, 0.0).unwrap();
        assert_eq!(zero.savings_pct, 0.0);
        assert_eq!(zero.oracle_savings_pct, 0.0);
        assert_eq!(zero.fraction_of_oracle, 0.0);
        let diagonal = result.diagonal();
        assert_eq!(diagonal.len(), 2);
        // Agents trained on either capacity can be evaluated on both.
        assert!(result.cell(900.0, 0.0).is_some());
        assert!(result.cell(0.0, 900.0).is_some());
        for row in &result.rows {
            assert!(row.savings_pct <= row.oracle_savings_pct + 1e-9);
        }
    }

    #[test]
    fn sweep_results_do_not_depend_on_thread_count() {
        let capacities = [0.0, 900.0];
        let serial = capacity_sweep(&capacities, &small_sweep_cfg(1)).unwrap();
        let parallel = capacity_sweep(&capacities, &small_sweep_cfg(4)).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn dr_comparison_requires_enabled_penalty() {
        let err = dr_comparison(
            &[900.0],
            &small_sweep_cfg(1),
            &DemandResponseConfig::disabled(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn dr_comparison_pairs_the_arms() {
        let capacities = [900.0];
        let dr = DemandResponseConfig {
            enabled: true,
            ..DemandResponseConfig::default()
        };
        let comparison = dr_comparison(&capacities, &small_sweep_cfg(2), &dr).unwrap();
        assert_eq!(comparison.tod.rows.len(), 1);
        assert_eq!(comparison.dr.rows.len(), 1);
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(12.5), "12.5000");
        assert_eq!(fmt_sig(0.00025), "0.000250000");
        assert_eq!(fmt_sig(-3.25), "-3.25000");
        assert_eq!(fmt_sig(123456.0), "123456");
    }

    #[test]
    fn report_reruns_are_byte_identical() {
        let env = table1_env(900.0);
        let profile = small_profile(1, 50);
        let params = random_params(&env, 51);
        let eval = evaluate(&params, &env, &profile, &[0]).unwrap();
        let histogram = SlotActionHistogram::from_traces(&eval.traces, &env.tariff);
        let report = Report {
            config: vec![("tariff.name".into(), "table1".into())],
            seed: 51,
            data_digest: profile.digest().to_string(),
            headline: vec![("savings_pct".into(), eval.savings_pct)],
            traces: vec![("day_000".into(), eval.traces[0].clone())],
            histograms: vec![("final".into(), histogram)],
            sweep: None,
        };

        let dir = tempfile::tempdir().unwrap();
        let first = emit_report(&report, dir.path()).unwrap();
        let mut snapshots = Vec::new();
        for path in &first {
            snapshots.push(std::fs::read(path).unwrap());
        }
        let second = emit_report(&report, dir.path()).unwrap();
        assert_eq!(first, second);
        for (path, before) in second.iter().zip(&snapshots) {
            assert_eq!(&std::fs::read(path).unwrap(), before);
        }

        let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
        assert_eq!(parsed["seed"], 51);
        assert_eq!(parsed["config"]["tariff.name"], "table1");
        assert!(parsed["headline"]["savings_pct"].is_number());
    }

    #[test]
    fn report_emits_square_matrix() {
        let capacities = [0.0, 900.0];
        let sweep = capacity_sweep(&capacities, &small_sweep_cfg(1)).unwrap();
        let report = Report {
            sweep: Some(sweep),
            ..Report::default()
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let matrix = std::fs::read_to_string(dir.path().join("cross_matrix.csv")).unwrap();
        // Header plus one row per (train, eval) pair.
        assert_eq!(matrix.lines().count(), 1 + 4);
        let diagonal = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(diagonal.lines().count(), 1 + 2);
        assert!(
            diagonal.starts_with("capacity_wh,savings_pct,oracle_savings_pct,fraction_of_oracle")
        );
    }
}
