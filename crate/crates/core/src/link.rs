//! Photon-path budget from the atom to the telecom detectors: fibre loss and
//! latency, frequency-conversion background, detector dark counts, the
//! acceptance window and the resulting signal-to-noise ratio.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, Error, Result};

/// Group speed in the fibre that reproduces the 497.4 µs one-way delay
/// measured over the 101 km spool.
pub const CALIBRATED_FIBER_SPEED_KM_PER_S: f64 = 101.0 / 497.4e-6;
/// c/1.5.
pub const TWO_THIRDS_C_KM_PER_S: f64 = 299_792.458 * 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkParams {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub fiber_speed_km_per_s: f64,
    /// Single-photon collection and fibre coupling per attempt.
    pub collection_efficiency: f64,
    pub switch_efficiency: f64,
    pub conversion_efficiency: f64,
    pub filter_efficiency: f64,
    pub projection_efficiency: f64,
    pub connector_efficiency: f64,
    pub detector_efficiency: f64,
    pub n_detectors: u32,
    /// Per detector.
    pub dark_count_rate_cps: f64,
    /// Conversion background leaving the converter, before the long fibre.
    pub conversion_background_cps: f64,
    pub window_ns: f64,
    /// Fraction of the signal photon's temporal profile inside the window.
    pub window_fraction: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            attenuation_db_per_km: 0.196,
            fiber_speed_km_per_s: CALIBRATED_FIBER_SPEED_KM_PER_S,
            collection_efficiency: 0.01,
            switch_efficiency: 0.85,
            conversion_efficiency: 0.48,
            filter_efficiency: 0.82,
            projection_efficiency: 0.85,
            connector_efficiency: 0.94,
            detector_efficiency: 0.597,
            n_detectors: 3,
            dark_count_rate_cps: 5.24,
            conversion_background_cps: 455.5,
            window_ns: 50.0,
            window_fraction: 0.62,
        }
    }
}

/// Per-attempt click probabilities inside the acceptance window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClickBreakdown {
    pub p_signal: f64,
    pub p_qfc: f64,
    pub p_dc: f64,
}

impl ClickBreakdown {
    pub fn total(&self) -> f64 {
        self.p_signal + self.p_qfc + self.p_dc
    }

    pub fn noise(&self) -> f64 {
        self.p_qfc + self.p_dc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrRow {
    pub length_km: f64,
    pub p_signal: f64,
    pub p_qfc: f64,
    pub p_dc: f64,
    pub snr: f64,
}

/// 10^(−αL/10).
pub fn fiber_transmission(length_km: f64, attenuation_db_per_km: f64) -> Result<f64> {
    check_non_negative("length_km", length_km)?;
    check_non_negative("attenuation_db_per_km", attenuation_db_per_km)?;
    Ok(10f64.powf(-attenuation_db_per_km * length_km / 10.0))
}

/// One-way photon travel time in µs.
pub fn travel_time_us(length_km: f64, speed_km_per_s: f64) -> Result<f64> {
    check_non_negative("length_km", length_km)?;
    if !(speed_km_per_s > 0.0 && speed_km_per_s.is_finite()) {
        return Err(Error::param("fiber_speed_km_per_s", speed_km_per_s, "must be positive"));
    }
    Ok(length_km / speed_km_per_s * 1e6)
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        check_non_negative("length_km", self.length_km)?;
        check_non_negative("attenuation_db_per_km", self.attenuation_db_per_km)?;
        travel_time_us(0.0, self.fiber_speed_km_per_s)?;
        for (name, v) in [
            ("collection_efficiency", self.collection_efficiency),
            ("switch_efficiency", self.switch_efficiency),
            ("conversion_efficiency", self.conversion_efficiency),
            ("filter_efficiency", self.filter_efficiency),
            ("projection_efficiency", self.projection_efficiency),
            ("connector_efficiency", self.connector_efficiency),
            ("detector_efficiency", self.detector_efficiency),
            ("window_fraction", self.window_fraction),
        ] {
            check_unit(name, v)?;
        }
        check_non_negative("dark_count_rate_cps", self.dark_count_rate_cps)?;
        check_non_negative("conversion_background_cps", self.conversion_background_cps)?;
        check_non_negative("window_ns", self.window_ns)?;
        let b = self.click_breakdown()?;
        if b.total() > 1.0 {
            return Err(Error::param(
                "window_ns",
                self.window_ns,
                "click probabilities exceed 1 per attempt",
            ));
        }
        Ok(())
    }

    pub fn at_length(&self, length_km: f64) -> Self {
        Self { length_km, ..*self }
    }

    pub fn transmission(&self) -> Result<f64> {
        fiber_transmission(self.length_km, self.attenuation_db_per_km)
    }

    pub fn travel_time_us(&self) -> Result<f64> {
        travel_time_us(self.length_km, self.fiber_speed_km_per_s)
    }

    /// Efficiencies the converted photon (and converter background) sees
    /// after leaving the converter, excluding the long fibre.
    pub fn post_conversion_efficiency(&self) -> f64 {
        self.filter_efficiency * self.projection_efficiency * self.connector_efficiency * self.detector_efficiency
    }

    /// Detection probability per attempt at zero fibre length, with the
    /// whole temporal profile accepted.
    pub fn zero_length_efficiency(&self) -> f64 {
        self.collection_efficiency
            * self.switch_efficiency
            * self.conversion_efficiency
            * self.post_conversion_efficiency()
    }

    pub fn signal_click_probability(&self) -> Result<f64> {
        Ok(self.window_fraction * self.zero_length_efficiency() * self.transmission()?)
    }

    /// (p_qfc, p_dc) per attempt.
    pub fn noise_click_probabilities(&self) -> Result<(f64, f64)> {
        let window_s = self.window_ns * 1e-9;
        let p_qfc =
            self.conversion_background_cps * self.transmission()? * self.post_conversion_efficiency() * window_s;
        let p_dc = self.n_detectors as f64 * self.dark_count_rate_cps * window_s;
        Ok((p_qfc, p_dc))
    }

    pub fn click_breakdown(&self) -> Result<ClickBreakdown> {
        let (p_qfc, p_dc) = self.noise_click_probabilities()?;
        Ok(ClickBreakdown {
            p_signal: self.signal_click_probability()?,
            p_qfc,
            p_dc,
        })
    }

    /// Signal over noise clicks; +∞ when there is no noise at all.
    pub fn snr(&self) -> Result<f64> {
        let b = self.click_breakdown()?;
        Ok(if b.noise() == 0.0 {
            f64::INFINITY
        } else {
            b.p_signal / b.noise()
        })
    }

    /// Length where conversion background and dark counts are equally likely.
    /// `None` when one of them vanishes or the background is already below
    /// the dark counts at zero length.
    pub fn noise_crossover_km(&self) -> Result<Option<f64>> {
        let (qfc0, dc) = self.at_length(0.0).noise_click_probabilities()?;
        if qfc0 <= 0.0 || dc <= 0.0 || qfc0 < dc || self.attenuation_db_per_km <= 0.0 {
            return Ok(None);
        }
        Ok(Some(10.0 / self.attenuation_db_per_km * (qfc0 / dc).log10()))
    }

    pub fn snr_sweep(&self, lengths_km: &[f64]) -> Result<Vec<SnrRow>> {
        lengths_km
            .iter()
            .map(|&length_km| {
                let p = self.at_length(length_km);
                let b = p.click_breakdown()?;
                Ok(SnrRow {
                    length_km,
                    p_signal: b.p_signal,
                    p_qfc: b.p_qfc,
                    p_dc: b.p_dc,
                    snr: p.snr()?,
                })
            })
            .collect()
    }
}
