//! Attempt period, repetition rate and entanglement event rate versus fibre
//! length.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::link::{travel_time_us, LinkParams};

/// Per-attempt time costs. The cooling stage is shared by a burst of
/// attempts and amortised over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingBudget {
    pub prep_us: f64,
    pub entangle_us: f64,
    pub raman_us: f64,
    pub cooling_us: f64,
    pub attempts_per_cooling: u32,
}

impl Default for TimingBudget {
    fn default() -> Self {
        Self {
            prep_us: 3.0,
            entangle_us: 0.2,
            raman_us: 8.0,
            cooling_us: 6500.0,
            attempts_per_cooling: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateResult {
    pub length_km: f64,
    pub attempt_period_us: f64,
    pub repetition_rate_hz: f64,
    pub eta: f64,
    pub rate_per_s: f64,
}

impl TimingBudget {
    pub fn validate(&self) -> Result<()> {
        check_non_negative("prep_us", self.prep_us)?;
        check_non_negative("entangle_us", self.entangle_us)?;
        check_non_negative("raman_us", self.raman_us)?;
        check_non_negative("cooling_us", self.cooling_us)?;
        if self.attempts_per_cooling == 0 {
            return Err(Error::param("attempts_per_cooling", 0.0, "must be >= 1"));
        }
        if self.zero_length_period_us() <= 0.0 {
            return Err(Error::param("prep_us", self.prep_us, "attempt period must be positive"));
        }
        Ok(())
    }

    pub fn cooling_share_us(&self) -> f64 {
        self.cooling_us / self.attempts_per_cooling as f64
    }

    pub fn zero_length_period_us(&self) -> f64 {
        self.prep_us + self.entangle_us + self.raman_us + self.cooling_share_us()
    }

    /// T(L) = T(0) + L/c_f: the herald has to come back before the next try.
    pub fn attempt_period_us(&self, length_km: f64, speed_km_per_s: f64) -> Result<f64> {
        Ok(self.zero_length_period_us() + travel_time_us(length_km, speed_km_per_s)?)
    }

    pub fn max_repetition_rate_hz(&self, length_km: f64, speed_km_per_s: f64) -> Result<f64> {
        Ok(1e6 / self.attempt_period_us(length_km, speed_km_per_s)?)
    }
}

/// r = φ·R(L)·η(L).
pub fn entanglement_rate(budget: &TimingBudget, link: &LinkParams, duty_cycle: f64) -> Result<RateResult> {
    check_unit("duty_cycle", duty_cycle)?;
    let period = budget.attempt_period_us(link.length_km, link.fiber_speed_km_per_s)?;
    let repetition_rate_hz = 1e6 / period;
    let eta = link.signal_click_probability()?;
    Ok(RateResult {
        length_km: link.length_km,
        attempt_period_us: period,
        repetition_rate_hz,
        eta,
        rate_per_s: duty_cycle * repetition_rate_hz * eta,
    })
}

pub fn rate_sweep(
    budget: &TimingBudget,
    link: &LinkParams,
    duty_cycle: f64,
    lengths_km: &[f64],
) -> Result<Vec<RateResult>> {
    lengths_km
        .iter()
        .map(|&l| entanglement_rate(budget, &link.at_length(l), duty_cycle))
        .collect()
}
