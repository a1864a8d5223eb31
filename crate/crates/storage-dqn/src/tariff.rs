//! Time-of-day tariff schedules.
//!
//! A schedule is a base price plus a set of half-open hour slots, each adding
//! (or subtracting) a fixed amount. Slots must tile the 24-hour day exactly:
//! no gaps, no overlaps. A slot that wraps midnight is stored as two slots.

use crate::{Error, Result};

/// One pricing window. `start_hour` is inclusive, `end_hour` exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TariffSlot {
    pub start_hour: u32,
    pub end_hour: u32,
    /// Added to the schedule's base price inside this slot. May be negative.
    pub adder: f64,
}

impl TariffSlot {
    pub fn new(start_hour: u32, end_hour: u32, adder: f64) -> Self {
        TariffSlot {
            start_hour,
            end_hour,
            adder,
        }
    }

    fn contains(&self, hour: u32) -> bool {
        self.start_hour <= hour && hour < self.end_hour
    }
}

/// A full day's pricing: base price plus slot adders, in currency per kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    slots: Vec<TariffSlot>,
    base_price: f64,
}

impl TariffSchedule {
    /// Build a schedule, rejecting anything that fails [`validate`].
    ///
    /// A slot whose end does not exceed its start is taken to wrap midnight
    /// and is split into `[start, 24)` and `[0, end)`.
    pub fn new(base_price: f64, slots: impl IntoIterator<Item = TariffSlot>) -> Result<Self> {
        let mut stored = Vec::new();
        for slot in slots {
            if slot.start_hour > 23 || slot.end_hour > 24 {
                return Err(Error::InvalidTariff(format!(
                    "slot [{}, {}) out of range; hours are 0..=23, end at most 24",
                    slot.start_hour, slot.end_hour
                )));
            }
            if slot.end_hour > slot.start_hour {
                stored.push(slot);
            } else {
                // Wraps midnight: split into the evening and morning halves.
                stored.push(TariffSlot::new(slot.start_hour, 24, slot.adder));
                if slot.end_hour > 0 {
                    stored.push(TariffSlot::new(0, slot.end_hour, slot.adder));
                }
            }
        }
        stored.sort_by_key(|s| s.start_hour);
        let schedule = TariffSchedule {
            slots: stored,
            base_price,
        };
        let violations = validate(&schedule);
        if let Some(first) = violations.first() {
            return Err(Error::InvalidTariff(format!(
                "{} ({} violation(s) total)",
                first,
                violations.len()
            )));
        }
        Ok(schedule)
    }

    /// Effective price for a clock hour.
    pub fn price_at(&self, hour: u32) -> Result<f64> {
        if hour > 23 {
            return Err(Error::InvalidHour(hour));
        }
        let slot = self
            .slots
            .iter()
            .find(|s| s.contains(hour))
            .expect("validated schedule covers every hour");
        Ok(self.base_price + slot.adder)
    }

    /// Slots in ascending start order. Wrapped slots appear as their halves.
    pub fn slots(&self) -> &[TariffSlot] {
        &self.slots
    }

    pub fn base_price(&self) -> f64 {
        self.base_price
    }

    /// Cheapest and dearest effective prices over the day.
    pub fn price_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.slots {
            let p = self.base_price + s.adder;
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}

/// Names accepted by [`builtin_schedule`].
pub const BUILTIN_NAMES: [&str; 2] = ["table1", "tata"];

/// Ready-made schedules.
///
/// * `table1`: three flat slots, prices 1 / 3 / 2 over [0,8), [8,16), [16,24).
/// * `tata`: base 5 with adders 0 over [6,9), +0.5 over [9,12), 0 over
///   [12,18), +1.0 over [18,22) and -0.75 over the wrapping night slot
///   [22,6). Prices span 4.25 to 6.00.
pub fn builtin_schedule(name: &str) -> Result<TariffSchedule> {
    match name {
        "table1" => TariffSchedule::new(
            0.0,
            [
                TariffSlot::new(0, 8, 1.0),
                TariffSlot::new(8, 16, 3.0),
                TariffSlot::new(16, 24, 2.0),
            ],
        ),
        "tata" => TariffSchedule::new(
            5.0,
            [
                TariffSlot::new(6, 9, 0.0),
                TariffSlot::new(9, 12, 0.5),
                TariffSlot::new(12, 18, 0.0),
                TariffSlot::new(18, 22, 1.0),
                TariffSlot::new(22, 6, -0.75),
            ],
        ),
        other => Err(Error::UnknownTariff(other.to_string())),
    }
}

/// Check a schedule for gaps, overlaps and negative effective prices.
/// Returns human-readable violations; an empty list means the schedule is
/// sound.
pub fn validate(schedule: &TariffSchedule) -> Vec<String> {
    let mut violations = Vec::new();
    let mut covered = [0u32; 24];
    for s in &schedule.slots {
        for h in s.start_hour..s.end_hour.min(24) {
            covered[h as usize] += 1;
        }
        if schedule.base_price + s.adder < 0.0 {
            violations.push(format!(
                "negative effective price {} in slot [{}, {})",
                schedule.base_price + s.adder,
                s.start_hour,
                s.end_hour
            ));
        }
    }
    for (h, &count) in covered.iter().enumerate() {
        match count {
            0 => violations.push(format!("hour {h} not covered by any slot")),
            1 => {}
            n => violations.push(format!("hour {h} covered by {n} slots")),
        }
    }
    violations
}
