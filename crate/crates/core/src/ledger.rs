//! Latency and cost accounting.

use std::fmt;
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::env::SimClock;

/// Cost in millionths of a unit. Integer so that ledger sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostUnits(pub u64);

impl CostUnits {
    pub const MICRO: u64 = 1_000_000;

    pub fn from_units(units: f64) -> Self {
        assert!(units >= 0.0 && units.is_finite(), "cost must be a non-negative finite number");
        CostUnits((units * Self::MICRO as f64).round() as u64)
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / Self::MICRO as f64
    }
}

impl fmt::Display for CostUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::MICRO, self.0 % Self::MICRO)
    }
}

impl Add for CostUnits {
    type Output = CostUnits;
    fn add(self, rhs: Self) -> Self {
        CostUnits(self.0 + rhs.0)
    }
}

impl AddAssign for CostUnits {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl Mul<u64> for CostUnits {
    type Output = CostUnits;
    fn mul(self, rhs: u64) -> Self {
        CostUnits(self.0 * rhs)
    }
}

/// Fixed charges for one reflex step and one supervisor call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Charges {
    pub reflex_ms: u64,
    pub reflex_cost: CostUnits,
    pub supervisor_ms: u64,
    pub supervisor_cost: CostUnits,
}

impl Default for Charges {
    fn default() -> Self {
        Self {
            reflex_ms: 50,
            reflex_cost: CostUnits::from_units(0.005),
            supervisor_ms: 10_000,
            supervisor_cost: CostUnits::from_units(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationReason {
    ColdStart,
    Drift,
    Proprioception,
    /// Every grounding of the end-to-end baseline.
    Grounding,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub reflex_steps: u64,
    pub supervisor_calls: u64,
    pub total_sim_ms: u64,
    pub total_cost_micro: CostUnits,
    pub cold_start_calls: u64,
    pub drift_calls: u64,
    pub proprioception_calls: u64,
}

impl CostLedger {
    pub fn charge_reflex(&mut self, charges: &Charges, clock: &mut SimClock) {
        self.reflex_steps += 1;
        self.total_sim_ms += charges.reflex_ms;
        self.total_cost_micro += charges.reflex_cost;
        clock.charge(charges.reflex_ms);
    }

    pub fn charge_supervisor(&mut self, charges: &Charges, clock: &mut SimClock, reason: EscalationReason) {
        self.supervisor_calls += 1;
        self.total_sim_ms += charges.supervisor_ms;
        self.total_cost_micro += charges.supervisor_cost;
        clock.charge(charges.supervisor_ms);
        match reason {
            EscalationReason::ColdStart => self.cold_start_calls += 1,
            EscalationReason::Drift => self.drift_calls += 1,
            EscalationReason::Proprioception => self.proprioception_calls += 1,
            EscalationReason::Grounding => {}
        }
    }

    pub fn absorb(&mut self, other: &CostLedger) {
        self.reflex_steps += other.reflex_steps;
        self.supervisor_calls += other.supervisor_calls;
        self.total_sim_ms += other.total_sim_ms;
        self.total_cost_micro += other.total_cost_micro;
        self.cold_start_calls += other.cold_start_calls;
        self.drift_calls += other.drift_calls;
        self.proprioception_calls += other.proprioception_calls;
    }

    /// Totals implied by the counters alone. Equal to the recorded totals
    /// whenever every charge went through this ledger.
    pub fn expected_totals(&self, charges: &Charges) -> (u64, CostUnits) {
        (
            self.reflex_steps * charges.reflex_ms + self.supervisor_calls * charges.supervisor_ms,
            charges.reflex_cost * self.reflex_steps + charges.supervisor_cost * self.supervisor_calls,
        )
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost_micro.as_units()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_exact() {
        let charges = Charges::default();
        let mut clock = SimClock::default();
        let mut ledger = CostLedger::default();
        for i in 0..1000 {
            ledger.charge_reflex(&charges, &mut clock);
            if i % 97 == 0 {
                ledger.charge_supervisor(&charges, &mut clock, EscalationReason::Drift);
            }
        }
        assert_eq!(ledger.expected_totals(&charges), (ledger.total_sim_ms, ledger.total_cost_micro));
        assert_eq!(clock.now_ms(), ledger.total_sim_ms);
        assert_eq!(ledger.drift_calls, 11);
    }

    #[test]
    fn cost_display() {
        assert_eq!(CostUnits::from_units(1.005).to_string(), "1.005000");
    }
}
