//! The dispatch problem as a Markov decision process.
//!
//! One episode is one calendar day of 24 hourly decisions. Each hour the
//! agent sees the next `horizon_hours` prices, its state of charge and the
//! current load, picks one of three actions, and pays for whatever the grid
//! supplies. Costs are price times kWh plus any demand-response penalty; the
//! reward is the negated cost, so maximizing reward minimizes the bill.

use crate::data::{LoadProfile, HOURS_PER_DAY};
use crate::tariff::TariffSchedule;
use crate::{Error, Result};

/// What the battery does this hour. The grid always covers whatever the
/// battery does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Let the grid serve the load; battery idles.
    GridOnly = 0,
    /// Discharge into the load, grid covers the remainder.
    DischargePlusGrid = 1,
    /// Charge from the grid while the grid also serves the load.
    ChargePlusGrid = 2,
}

pub const ACTION_COUNT: usize = 3;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::GridOnly,
        Action::DischargePlusGrid,
        Action::ChargePlusGrid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("action index {index} out of range 0..3")))
    }

    /// Short name used in trace CSVs.
    pub fn label(self) -> &'static str {
        match self {
            Action::GridOnly => "grid",
            Action::DischargePlusGrid => "discharge",
            Action::ChargePlusGrid => "charge",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "grid" => Ok(Action::GridOnly),
            "discharge" => Ok(Action::DischargePlusGrid),
            "charge" => Ok(Action::ChargePlusGrid),
            other => Err(Error::InvalidConfig(format!("unknown action '{other}'"))),
        }
    }
}

/// Physical battery parameters. Energies in Wh, rates in W. Round-trip
/// efficiency is taken as 1.0: every stored Wh comes back out.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryConfig {
    pub capacity_wh: f64,
    pub max_charge_w: f64,
    pub max_discharge_w: f64,
    /// State-of-charge window as fractions of capacity.
    pub soc_min_frac: f64,
    pub soc_max_frac: f64,
}

impl BatteryConfig {
    pub fn new(
        capacity_wh: f64,
        max_charge_w: f64,
        max_discharge_w: f64,
        soc_min_frac: f64,
        soc_max_frac: f64,
    ) -> Result<Self> {
        let cfg = BatteryConfig {
            capacity_wh,
            max_charge_w,
            max_discharge_w,
            soc_min_frac,
            soc_max_frac,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sizing rule used by capacity sweeps: charge and discharge rates at
    /// 70% of capacity, usable state of charge 10% to 90%.
    pub fn proportional(capacity_wh: f64) -> Result<Self> {
        BatteryConfig::new(capacity_wh, 0.7 * capacity_wh, 0.7 * capacity_wh, 0.1, 0.9)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.capacity_wh.is_finite()
            && self.capacity_wh >= 0.0
            && self.max_charge_w.is_finite()
            && self.max_charge_w >= 0.0
            && self.max_discharge_w.is_finite()
            && self.max_discharge_w >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(
                "battery capacity and rates must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.soc_min_frac)
            || !(0.0..=1.0).contains(&self.soc_max_frac)
            || self.soc_min_frac >= self.soc_max_frac
        {
            return Err(Error::InvalidConfig(format!(
                "state-of-charge window [{}, {}] must satisfy 0 <= min < max <= 1",
                self.soc_min_frac, self.soc_max_frac
            )));
        }
        Ok(())
    }

    /// Lowest allowed stored energy, Wh.
    pub fn floor_wh(&self) -> f64 {
        self.soc_min_frac * self.capacity_wh
    }

    /// Highest allowed stored energy, Wh.
    pub fn ceil_wh(&self) -> f64 {
        self.soc_max_frac * self.capacity_wh
    }
}

/// How demand beyond the limit is priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrMode {
    /// Each hour's grid draw is compared against the limit on its own.
    PerInterval,
    /// The day's running total of grid draw is compared against the limit;
    /// only newly exceeding energy is penalized.
    DailyCumulative,
}

impl DrMode {
    pub fn label(self) -> &'static str {
        match self {
            DrMode::PerInterval => "per_interval",
            DrMode::DailyCumulative => "daily_cumulative",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "per_interval" => Ok(DrMode::PerInterval),
            "daily_cumulative" => Ok(DrMode::DailyCumulative),
            other => Err(Error::InvalidConfig(format!(
                "unknown demand-response mode '{other}'; expected per_interval or daily_cumulative"
            ))),
        }
    }
}

/// Demand-response program: grid energy beyond `limit_wh` costs an extra
/// `penalty_rate` per kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandResponseConfig {
    pub enabled: bool,
    pub mode: DrMode,
    pub limit_wh: f64,
    /// Currency per kWh of excess.
    pub penalty_rate: f64,
}

impl DemandResponseConfig {
    pub fn disabled() -> Self {
        DemandResponseConfig {
            enabled: false,
            ..DemandResponseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled {
            if !self.limit_wh.is_finite() || self.limit_wh <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "demand-response limit {} must be positive",
                    self.limit_wh
                )));
            }
            if !self.penalty_rate.is_finite() || self.penalty_rate < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "demand-response penalty rate {} must be non-negative",
                    self.penalty_rate
                )));
            }
        }
        Ok(())
    }
}

impl Default for DemandResponseConfig {
    fn default() -> Self {
        DemandResponseConfig {
            enabled: false,
            mode: DrMode::DailyCumulative,
            limit_wh: 700.0,
            penalty_rate: 2.0,
        }
    }
}

/// Everything the environment needs except the load data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub tariff: TariffSchedule,
    pub battery: BatteryConfig,
    pub dr: DemandResponseConfig,
    /// How many hours of prices the agent sees ahead (wrapping midnight).
    pub horizon_hours: usize,
    /// Battery energy after reset, as a state-of-charge fraction. `None`
    /// starts at the floor, the most pessimistic legal state.
    pub initial_soc_frac: Option<f64>,
    /// Scale observation components into [0, 1] using bounds derived from
    /// the tariff, the profile and the battery. Off by default.
    pub normalize_observations: bool,
    /// Append the day's cumulative grid draw to the observation. `None`
    /// follows `dr.enabled`, which keeps the state Markov under the
    /// daily-cumulative penalty.
    pub observe_day_cumulative: Option<bool>,
}

impl EnvConfig {
    pub fn new(tariff: TariffSchedule, battery: BatteryConfig, dr: DemandResponseConfig) -> Self {
        EnvConfig {
            tariff,
            battery,
            dr,
            horizon_hours: HOURS_PER_DAY,
            initial_soc_frac: None,
            normalize_observations: false,
            observe_day_cumulative: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.dr.validate()?;
        if self.horizon_hours == 0 {
            return Err(Error::InvalidConfig(
                "price horizon must be at least one hour".into(),
            ));
        }
        if let Some(frac) = self.initial_soc_frac {
            if !(self.battery.soc_min_frac..=self.battery.soc_max_frac).contains(&frac) {
                return Err(Error::InvalidConfig(format!(
                    "initial state of charge {frac} outside the window [{}, {}]",
                    self.battery.soc_min_frac, self.battery.soc_max_frac
                )));
            }
        }
        Ok(())
    }

    pub fn observes_cumulative(&self) -> bool {
        self.observe_day_cumulative.unwrap_or(self.dr.enabled)
    }

    /// Observation layout: `horizon_hours` prices, state of charge, current
    /// load, then the optional cumulative-draw component.
    pub fn observation_len(&self) -> usize {
        self.horizon_hours + 2 + usize::from(self.observes_cumulative())
    }

    /// Battery energy right after a reset, Wh.
    pub fn initial_energy_wh(&self) -> f64 {
        match self.initial_soc_frac {
            Some(frac) => frac * self.battery.capacity_wh,
            None => self.battery.floor_wh(),
        }
    }
}

/// Move the battery one hour forward. Returns the new stored energy and the
/// grid draw for the hour, both in Wh. Infeasible amounts are clipped
/// silently: charging a full battery or discharging an empty one degenerates
/// to [`Action::GridOnly`]. Discharge serves at most the load, so energy is
/// never exported and the grid draw is never negative.
pub fn apply_action(
    battery: &BatteryConfig,
    energy_wh: f64,
    action: Action,
    load_wh: f64,
    dt_hours: f64,
) -> (f64, f64) {
    match action {
        Action::GridOnly => (energy_wh, load_wh),
        Action::DischargePlusGrid => {
            let d = (battery.max_discharge_w * dt_hours)
                .min(energy_wh - battery.floor_wh())
                .min(load_wh)
                .max(0.0);
            (energy_wh - d, load_wh - d)
        }
        Action::ChargePlusGrid => {
            let c = (battery.max_charge_w * dt_hours)
                .min(battery.ceil_wh() - energy_wh)
                .max(0.0);
            (energy_wh + c, load_wh + c)
        }
    }
}

/// Demand-response penalty for one hour, given the day's cumulative grid
/// draw before this hour. Under the cumulative mode only energy newly pushed
/// past the limit is charged, so the penalties over a day telescope to
/// `rate * (total - limit) / 1000`.
pub fn penalty(dr: &DemandResponseConfig, cumulative_before_wh: f64, grid_draw_wh: f64) -> f64 {
    if !dr.enabled {
        return 0.0;
    }
    match dr.mode {
        DrMode::PerInterval => dr.penalty_rate * (grid_draw_wh - dr.limit_wh).max(0.0) / 1000.0,
        DrMode::DailyCumulative => {
            let before = (cumulative_before_wh - dr.limit_wh).max(0.0);
            let after = (cumulative_before_wh + grid_draw_wh - dr.limit_wh).max(0.0);
            dr.penalty_rate * (after - before) / 1000.0
        }
    }
}

/// Reward for one hour: the negated bill. Price is per kWh, draw in Wh.
pub fn reward(price: f64, grid_draw_wh: f64, penalty: f64) -> f64 {
    -(price * grid_draw_wh / 1000.0) - penalty
}

/// What [`Environment::step`] hands back.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_observation: Vec<f64>,
    pub reward: f64,
    pub grid_draw_wh: f64,
    pub done: bool,
}

/// Precomputed bounds for min-max observation scaling.
#[derive(Debug, Clone)]
struct ObsScaler {
    price_lo: f64,
    price_span: f64,
    load_max: f64,
    cumulative_max: f64,
}

impl ObsScaler {
    fn from(cfg: &EnvConfig, profile: &LoadProfile) -> Self {
        let (lo, hi) = cfg.tariff.price_bounds();
        let load_max = profile.max_load();
        ObsScaler {
            price_lo: lo,
            price_span: hi - lo,
            load_max,
            cumulative_max: HOURS_PER_DAY as f64 * (load_max + cfg.battery.max_charge_w),
        }
    }

    fn price(&self, p: f64) -> f64 {
        if self.price_span > 0.0 {
            (p - self.price_lo) / self.price_span
        } else {
            0.0
        }
    }

    fn load(&self, l: f64) -> f64 {
        if self.load_max > 0.0 {
            l / self.load_max
        } else {
            0.0
        }
    }

    fn cumulative(&self, c: f64) -> f64 {
        if self.cumulative_max > 0.0 {
            c / self.cumulative_max
        } else {
            0.0
        }
    }
}

/// The day-ahead dispatch MDP over a load profile.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    profile: LoadProfile,
    scaler: Option<ObsScaler>,
    day: usize,
    hour: usize,
    energy_wh: f64,
    day_cumulative_wh: f64,
    done: bool,
}

impl Environment {
    pub fn new(cfg: EnvConfig, profile: LoadProfile) -> Result<Self> {
        cfg.validate()?;
        if profile.day_count() == 0 {
            return Err(Error::InvalidProfile(
                "environment needs a profile with at least one day".into(),
            ));
        }
        let scaler = cfg
            .normalize_observations
            .then(|| ObsScaler::from(&cfg, &profile));
        let mut env = Environment {
            cfg,
            profile,
            scaler,
            day: 0,
            hour: 0,
            energy_wh: 0.0,
            day_cumulative_wh: 0.0,
            done: false,
        };
        env.energy_wh = env.cfg.initial_energy_wh();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &LoadProfile {
        &self.profile
    }

    pub fn battery_energy_wh(&self) -> f64 {
        self.energy_wh
    }

    pub fn day_cumulative_wh(&self) -> f64 {
        self.day_cumulative_wh
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// Start an episode on one day of the profile and return the first
    /// observation.
    pub fn reset(&mut self, day_index: usize) -> Result<Vec<f64>> {
        if day_index >= self.profile.day_count() {
            return Err(Error::InvalidProfile(format!(
                "day {day_index} out of range; profile has {} day(s)",
                self.profile.day_count()
            )));
        }
        self.day = day_index;
        self.hour = 0;
        self.energy_wh = self.cfg.initial_energy_wh();
        self.day_cumulative_wh = 0.0;
        self.done = false;
        Ok(self.observation())
    }

    /// Advance one hour. Stepping a finished episode is a usage error.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EnvMisuse(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        let load = self.profile.load_at(self.day, self.hour);
        let price = self
            .cfg
            .tariff
            .price_at(self.hour as u32)
            .expect("hour below 24");
        let (new_energy, draw) = apply_action(&self.cfg.battery, self.energy_wh, action, load, 1.0);
        let pen = penalty(&self.cfg.dr, self.day_cumulative_wh, draw);
        let r = reward(price, draw, pen);
        self.energy_wh = new_energy;
        self.day_cumulative_wh += draw;
        self.hour += 1;
        self.done = self.hour == HOURS_PER_DAY;
        Ok(StepOutcome {
            next_observation: self.observation(),
            reward: r,
            grid_draw_wh: draw,
            done: self.done,
        })
    }

    /// The current observation: upcoming prices (wrapping the static
    /// schedule), state of charge as a fraction of capacity, the load about
    /// to be decided, and optionally the day's cumulative grid draw. The
    /// terminal observation after hour 23 carries a zero load; it is stored
    /// in replay but never bootstrapped from.
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.cfg.observation_len());
        for i in 0..self.cfg.horizon_hours {
            let hour = ((self.hour + i) % HOURS_PER_DAY) as u32;
            let p = self.cfg.tariff.price_at(hour).expect("hour below 24");
            obs.push(match &self.scaler {
                Some(s) => s.price(p),
                None => p,
            });
        }
        let status = if self.cfg.battery.capacity_wh > 0.0 {
            self.energy_wh / self.cfg.battery.capacity_wh
        } else {
            0.0
        };
        obs.push(status);
        let load = if self.done {
            0.0
        } else {
            self.profile.load_at(self.day, self.hour)
        };
        obs.push(match &self.scaler {
            Some(s) => s.load(load),
            None => load,
        });
        if self.cfg.observes_cumulative() {
            obs.push(match &self.scaler {
                Some(s) => s.cumulative(self.day_cumulative_wh),
                None => self.day_cumulative_wh,
            });
        }
        obs
    }
}

/// Cost of serving a day (or any hour run) straight from the grid with no
/// battery, including penalties. This is the denominator of every savings
/// figure. Uses the same per-hour arithmetic as [`Environment::step`], so a
/// zero-capacity battery reproduces it bit for bit.
pub fn baseline_cost(
    loads: &[f64],
    tariff: &TariffSchedule,
    dr: &DemandResponseConfig,
) -> Result<f64> {
    let mut cumulative = 0.0;
    let mut cost = 0.0;
    for (t, &load) in loads.iter().enumerate() {
        let price = tariff.price_at((t % HOURS_PER_DAY) as u32)?;
        let pen = penalty(dr, cumulative, load);
        cost += -reward(price, load, pen);
        cumulative += load;
    }
    Ok(cost)
}

/// Percentage saved relative to the no-battery baseline. Errors when the
/// baseline is not a positive finite cost, since the ratio is meaningless.
pub fn cost_saving(agent_cost: f64, baseline: f64) -> Result<f64> {
    if !baseline.is_finite() || baseline <= 0.0 {
        return Err(Error::DegenerateBaseline(baseline));
    }
    Ok((1.0 - agent_cost / baseline) * 100.0)
}
