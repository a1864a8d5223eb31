//! Exact dispatch benchmark via dynamic programming.
//!
//! Backward induction over quantized battery energy (and, when the
//! daily-cumulative demand-response mode is on, quantized cumulative grid
//! draw) finds the cheapest action sequence for one day. The reported cost
//! always comes from replaying the chosen actions through the same battery
//! and billing arithmetic the environment uses, so on instances where every
//! quantity is a whole number of watt-hours the result is exact and directly
//! comparable to simulated episodes. An exponential brute-force search over
//! all action sequences backs the dynamic program in tests.
//!
//! Ties between plans are broken toward the lexicographically first action
//! sequence (grid-only sorts before discharging before charging), so both
//! solvers return the same plan, not merely the same cost.

use crate::data::{LoadProfile, HOURS_PER_DAY};
use crate::environment::{
    apply_action, baseline_cost, cost_saving, penalty, reward, Action, BatteryConfig,
    DemandResponseConfig, DrMode,
};
use crate::tariff::TariffSchedule;
use crate::{Error, Result};

/// Knobs for the dynamic program.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    /// Energy grid resolution in watt-hours. 1 Wh keeps whole-number
    /// instances exact; coarser values trade accuracy for state count.
    pub quantum_wh: f64,
    /// Hard cap on hours x energy states x cumulative states.
    pub state_budget: u64,
    /// A plan must beat the incumbent by more than this to replace it.
    /// True plan costs on whole-watt-hour instances differ by far more, so
    /// this only absorbs floating-point noise.
    pub cost_tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            quantum_wh: 1.0,
            state_budget: 20_000_000,
            cost_tolerance: 1e-9,
        }
    }
}

/// An action sequence with its replayed consequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub actions: Vec<Action>,
    /// Sum of per-step `-reward`, i.e. the day's bill plus penalties.
    pub total_cost: f64,
    pub grid_draws_wh: Vec<f64>,
    /// Battery energy after each step.
    pub battery_wh: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// One capacity on a savings curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityPoint {
    pub capacity_wh: f64,
    pub mean_daily_cost: f64,
    pub savings_pct: f64,
}

/// Savings of the exact dispatcher across a range of battery sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsCurve {
    pub baseline_mean_daily_cost: f64,
    pub points: Vec<CapacityPoint>,
}

fn check_loads(loads: &[f64]) -> Result<()> {
    if loads.is_empty() {
        return Err(Error::InvalidConfig(
            "dispatch needs at least one hour of load".into(),
        ));
    }
    if loads.len() > HOURS_PER_DAY {
        return Err(Error::InvalidConfig(format!(
            "dispatch covers at most one day ({HOURS_PER_DAY} hours); got {}",
            loads.len()
        )));
    }
    if let Some(bad) = loads.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "load {bad} is not a finite non-negative value"
        )));
    }
    Ok(())
}

/// Replay an action sequence through the environment's battery and billing
/// arithmetic. This is the single source of truth for what a plan costs.
pub fn simulate_plan(
    actions: &[Action],
    loads: &[f64],
    tariff: &TariffSchedule,
    battery: &BatteryConfig,
    dr: &DemandResponseConfig,
    initial_energy_wh: f64,
) -> Result<DispatchPlan> {
    check_loads(loads)?;
    if actions.len() != loads.len() {
        return Err(Error::InvalidConfig(format!(
            "{} actions for {} hours of load",
            actions.len(),
            loads.len()
        )));
    }
    let mut energy = initial_energy_wh;
    let mut cumulative = 0.0;
    let mut total_cost = 0.0;
    let mut grid_draws_wh = Vec::with_capacity(loads.len());
    let mut battery_wh = Vec::with_capacity(loads.len());
    let mut rewards = Vec::with_capacity(loads.len());
    for (hour, (&action, &load)) in actions.iter().zip(loads).enumerate() {
        let price = tariff.price_at(hour as u32)?;
        let (next_energy, draw) = apply_action(battery, energy, action, load, 1.0);
        let pen = penalty(dr, cumulative, draw);
        let r = reward(price, draw, pen);
        cumulative += draw;
        energy = next_energy;
        total_cost += -r;
        grid_draws_wh.push(draw);
        battery_wh.push(energy);
        rewards.push(r);
    }
    Ok(DispatchPlan {
        actions: actions.to_vec(),
        total_cost,
        grid_draws_wh,
        battery_wh,
        rewards,
    })
}

/// Quantized state space shared by the backward and forward passes.
struct Grid {
    floor: f64,
    quantum: f64,
    n_energy: usize,
    /// Cumulative-draw states: indices below `n_cum - 1` hold `i * quantum`,
    /// the last one means "at or past the limit". 1 when the cumulative
    /// dimension is irrelevant.
    n_cum: usize,
    limit: f64,
    track_cumulative: bool,
}

impl Grid {
    fn new(
        battery: &BatteryConfig,
        dr: &DemandResponseConfig,
        options: &OracleOptions,
    ) -> Result<Self> {
        if !options.quantum_wh.is_finite() || options.quantum_wh <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "energy quantum must be a positive number of watt-hours, got {}",
                options.quantum_wh
            )));
        }
        let floor = battery.floor_wh();
        let span = battery.ceil_wh() - floor;
        let n_energy = ((span / options.quantum_wh) + 1e-9).floor() as usize + 1;
        let track_cumulative = dr.enabled && dr.mode == DrMode::DailyCumulative;
        let n_cum = if track_cumulative {
            ((dr.limit_wh / options.quantum_wh).ceil() as usize) + 1
        } else {
            1
        };
        Ok(Grid {
            floor,
            quantum: options.quantum_wh,
            n_energy,
            n_cum,
            limit: dr.limit_wh,
            track_cumulative,
        })
    }

    fn energy_of(&self, index: usize) -> f64 {
        self.floor + index as f64 * self.quantum
    }

    fn energy_index(&self, energy: f64) -> usize {
        let raw = ((energy - self.floor) / self.quantum).round().max(0.0) as usize;
        raw.min(self.n_energy - 1)
    }

    fn cum_of(&self, index: usize) -> f64 {
        if index + 1 == self.n_cum {
            self.limit
        } else {
            index as f64 * self.quantum
        }
    }

    fn cum_index(&self, cumulative: f64) -> usize {
        if !self.track_cumulative {
            return 0;
        }
        if cumulative >= self.limit {
            return self.n_cum - 1;
        }
        let raw = (cumulative / self.quantum).round().max(0.0) as usize;
        raw.min(self.n_cum - 1)
    }
}

/// Cheapest dispatch for one day by backward induction, exact on
/// whole-watt-hour instances.
pub fn dp_optimal(
    loads: &[f64],
    tariff: &TariffSchedule,
    battery: &BatteryConfig,
    dr: &DemandResponseConfig,
    initial_energy_wh: f64,
    options: &OracleOptions,
) -> Result<DispatchPlan> {
    check_loads(loads)?;
    let grid = Grid::new(battery, dr, options)?;
    let hours = loads.len();
    let states = hours as u64 * grid.n_energy as u64 * grid.n_cum as u64;
    if states > options.state_budget {
        return Err(Error::OracleBudget {
            states,
            budget: options.state_budget,
        });
    }

    let prices: Vec<f64> = (0..hours)
        .map(|h| tariff.price_at(h as u32))
        .collect::<Result<_>>()?;
    let slab = grid.n_energy * grid.n_cum;
    let mut cost_after = vec![0.0f64; slab];
    let mut cost_here = vec![0.0f64; slab];
    let mut choice = vec![0u8; hours * slab];
    let tol = options.cost_tolerance;

    for hour in (0..hours).rev() {
        let load = loads[hour];
        let price = prices[hour];
        for e in 0..grid.n_energy {
            let energy = grid.energy_of(e);
            for c in 0..grid.n_cum {
                let cumulative = grid.cum_of(c);
                let mut best = f64::INFINITY;
                let mut best_action = 0u8;
                for action in Action::ALL {
                    let (next_energy, draw) = apply_action(battery, energy, action, load, 1.0);
                    let pen = penalty(dr, cumulative, draw);
                    let step = -reward(price, draw, pen);
                    let e_next = grid.energy_index(next_energy);
                    let c_next = grid.cum_index(cumulative + draw);
                    let total = step + cost_after[e_next * grid.n_cum + c_next];
                    if total < best - tol {
                        best = total;
                        best_action = action.index() as u8;
                    }
                }
                cost_here[e * grid.n_cum + c] = best;
                choice[hour * slab + e * grid.n_cum + c] = best_action;
            }
        }
        std::mem::swap(&mut cost_after, &mut cost_here);
    }

    // Walk the policy forward over the quantized dynamics to recover the
    // action sequence, then price it on the true dynamics.
    let mut e = grid.energy_index(initial_energy_wh);
    let mut c = grid.cum_index(0.0);
    let mut actions = Vec::with_capacity(hours);
    for (hour, &load) in loads.iter().enumerate() {
        let action = Action::from_index(choice[hour * slab + e * grid.n_cum + c] as usize)?;
        actions.push(action);
        let (next_energy, draw) = apply_action(battery, grid.energy_of(e), action, load, 1.0);
        c = grid.cum_index(grid.cum_of(c) + draw);
        e = grid.energy_index(next_energy);
    }
    simulate_plan(&actions, loads, tariff, battery, dr, initial_energy_wh)
}

/// Exhaustive search over all action sequences; exponential, so capped at
/// half a day. Enumerates in lexicographic order and replaces the incumbent
/// only on strict improvement, matching the dynamic program's tie-breaking.
pub fn brute_force_optimal(
    loads: &[f64],
    tariff: &TariffSchedule,
    battery: &BatteryConfig,
    dr: &DemandResponseConfig,
    initial_energy_wh: f64,
    cost_tolerance: f64,
) -> Result<DispatchPlan> {
    check_loads(loads)?;
    if loads.len() > 12 {
        return Err(Error::InvalidConfig(format!(
            "exhaustive search grows as 3^hours; {} hours is past the 12-hour cap",
            loads.len()
        )));
    }
    let hours = loads.len();
    let mut digits = vec![0u8; hours];
    let mut actions = vec![Action::GridOnly; hours];
    let mut best: Option<DispatchPlan> = None;
    loop {
        for (slot, &digit) in actions.iter_mut().zip(&digits) {
            *slot = Action::from_index(digit as usize)?;
        }
        let plan = simulate_plan(&actions, loads, tariff, battery, dr, initial_energy_wh)?;
        let improves = match &best {
            None => true,
            Some(incumbent) => plan.total_cost < incumbent.total_cost - cost_tolerance,
        };
        if improves {
            best = Some(plan);
        }
        let mut position = hours;
        loop {
            if position == 0 {
                return Ok(best.expect("at least one plan was evaluated"));
            }
            position -= 1;
            if digits[position] < 2 {
                digits[position] += 1;
                break;
            }
            digits[position] = 0;
        }
    }
}

/// Exact-dispatch savings across battery capacities, each sized with
/// proportional charge and discharge rates. Days are dispatched
/// independently, starting from the configured state of charge.
pub fn savings_curve(
    capacities_wh: &[f64],
    profile: &LoadProfile,
    tariff: &TariffSchedule,
    dr: &DemandResponseConfig,
    initial_soc_frac: Option<f64>,
    options: &OracleOptions,
) -> Result<SavingsCurve> {
    if capacities_wh.is_empty() {
        return Err(Error::InvalidConfig(
            "savings curve needs at least one capacity".into(),
        ));
    }
    let days = profile.day_count();
    let mut baseline_total = 0.0;
    for day in 0..days {
        baseline_total += baseline_cost(profile.day(day)?, tariff, dr)?;
    }
    let baseline_mean = baseline_total / days as f64;

    let mut points = Vec::with_capacity(capacities_wh.len());
    for &capacity in capacities_wh {
        let battery = BatteryConfig::proportional(capacity)?;
        let initial = match initial_soc_frac {
            Some(frac) => (frac * capacity).clamp(battery.floor_wh(), battery.ceil_wh()),
            None => battery.floor_wh(),
        };
        let mut total = 0.0;
        for day in 0..days {
            total +=
                dp_optimal(profile.day(day)?, tariff, &battery, dr, initial, options)?.total_cost;
        }
        let mean = total / days as f64;
        points.push(CapacityPoint {
            capacity_wh: capacity,
            mean_daily_cost: mean,
            savings_pct: cost_saving(total, baseline_total)?,
        });
    }
    Ok(SavingsCurve {
        baseline_mean_daily_cost: baseline_mean,
        points,
    })
}
