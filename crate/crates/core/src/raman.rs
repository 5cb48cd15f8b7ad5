//! Zeeman-state-selective Raman transfer between the F=1 and F=2 ground
//! manifolds with a σ⁺-polarised beam pair.
//!
//! Two transfers compete. The three-level path |m⟩=|1,+1⟩ → |k⟩=|2′,+2⟩ →
//! |n⟩=|2,+1⟩ moves `|↑⟩_z` into the memory basis; the four-level path
//! |a⟩=|1,−1⟩ → {|3⟩=|1′,0⟩, |4⟩=|2′,0⟩} → |b⟩=|2,−1⟩ would move `|↓⟩_z` and
//! must stay blocked. Each path is reduced to an effective two-level system
//! whose optimal two-photon detuning carries the Zeeman and light shifts.
//!
//! Configuration frequencies are cyclic MHz (ν = ω/2π); every function
//! returning a detuning or Rabi frequency returns angular units, rad/µs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::zeeman::AtomicConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RamanConfig {
    pub bias_field_gauss: f64,
    /// Δ̄/2π
    pub mean_detuning_mhz: f64,
    pub rabi_mk_mhz: f64,
    pub rabi_nk_mhz: f64,
    pub rabi_a3_mhz: f64,
    pub rabi_b3_mhz: f64,
    pub rabi_a4_mhz: f64,
    pub rabi_b4_mhz: f64,
    /// δ/2π
    pub two_photon_detuning_mhz: f64,
    pub pulse_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Three,
    Four,
}

/// Rabi frequency and detuning of the reduced two-level problem (rad/µs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveTwoLevel {
    pub rabi: f64,
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub delta_mhz: f64,
    pub p_target: f64,
    pub p_blocked: f64,
}

/// Ω/2π for the three-level legs: Ω_eff = 2π·62.5 kHz, an 8 µs π pulse at
/// Δ̄ = 2π·2.7 GHz.
const THREE_LEVEL_RABI_MHZ: f64 = 18.371_173_070_873_837;
/// F′=1 legs of the four-level path. Their product has the opposite sign to
/// the F′=2 legs, as for the D1 dipole matrix elements of these σ⁺ lines.
const FOUR_LEVEL_F1_RABI_MHZ: f64 = 9.185_586_535_436_919;
/// F′=2 legs, sized so the four-level Ω_eff also equals 2π·62.5 kHz.
const FOUR_LEVEL_F2_RABI_MHZ: f64 = 20.057_934_655_333_884;

impl Default for RamanConfig {
    fn default() -> Self {
        Self {
            bias_field_gauss: 0.2445,
            mean_detuning_mhz: 2700.0,
            rabi_mk_mhz: THREE_LEVEL_RABI_MHZ,
            rabi_nk_mhz: THREE_LEVEL_RABI_MHZ,
            rabi_a3_mhz: FOUR_LEVEL_F1_RABI_MHZ,
            rabi_b3_mhz: -FOUR_LEVEL_F1_RABI_MHZ,
            rabi_a4_mhz: FOUR_LEVEL_F2_RABI_MHZ,
            rabi_b4_mhz: FOUR_LEVEL_F2_RABI_MHZ,
            two_photon_detuning_mhz: 0.0,
            pulse_us: 8.0,
        }
    }
}

impl RamanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_us >= 0.0) {
            return Err(Error::param("pulse_us", self.pulse_us, "must be >= 0"));
        }
        if !(self.bias_field_gauss >= 0.0) {
            return Err(Error::param("bias_field_gauss", self.bias_field_gauss, "must be >= 0"));
        }
        let max_rabi = self.rabis().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if self.mean_detuning_mhz.abs() < 10.0 * max_rabi {
            log::warn!(
                "mean detuning {} MHz is not far above the largest Rabi frequency {} MHz; \
                 the effective two-level reduction may be inaccurate",
                self.mean_detuning_mhz,
                max_rabi
            );
        }
        Ok(())
    }

    fn rabis(&self) -> [f64; 6] {
        [
            self.rabi_mk_mhz,
            self.rabi_nk_mhz,
            self.rabi_a3_mhz,
            self.rabi_b3_mhz,
            self.rabi_a4_mhz,
            self.rabi_b4_mhz,
        ]
    }

    /// Copy with the two-photon detuning set to the scheme's optimum.
    pub fn tuned_to(&self, atom: &AtomicConstants, scheme: Scheme) -> Result<Self> {
        let opt = optimal_detuning(atom, self, scheme)?;
        Ok(Self {
            two_photon_detuning_mhz: opt / TAU,
            ..*self
        })
    }
}

/// Ground Zeeman term 2 g_F μ_B B_z in rad/µs.
fn ground_zeeman(atom: &AtomicConstants, cfg: &RamanConfig) -> f64 {
    TAU * 2.0 * atom.raman_g_f * atom.mu_b_mhz_per_gauss * cfg.bias_field_gauss
}

/// Excited detuning of the three-level path, Δ̄ − 2 g_F′ μ_B B_z (rad/µs).
fn three_level_excited_detuning(atom: &AtomicConstants, cfg: &RamanConfig) -> f64 {
    TAU * (cfg.mean_detuning_mhz - 2.0 * atom.raman_g_f_excited * atom.mu_b_mhz_per_gauss * cfg.bias_field_gauss)
}

pub fn delta_three_level(atom: &AtomicConstants, cfg: &RamanConfig) -> Result<f64> {
    let denom = 4.0 * three_level_excited_detuning(atom, cfg);
    if denom == 0.0 {
        return Err(Error::Singular("three-level light-shift denominator vanishes"));
    }
    let (rabi_pump, rabi_stokes) = (TAU * cfg.rabi_mk_mhz, TAU * cfg.rabi_nk_mhz);
    Ok(ground_zeeman(atom, cfg) + (rabi_stokes * rabi_stokes - rabi_pump * rabi_pump) / denom)
}

pub fn delta_four_level(atom: &AtomicConstants, cfg: &RamanConfig) -> Result<f64> {
    let detuning_four = 4.0 * TAU * cfg.mean_detuning_mhz;
    let detuning_three = detuning_four + 4.0 * TAU * atom.hfs_excited_mhz;
    if detuning_three == 0.0 || detuning_four == 0.0 {
        return Err(Error::Singular("four-level light-shift denominator vanishes"));
    }
    let sq = |x: f64| (TAU * x).powi(2);
    Ok(-ground_zeeman(atom, cfg)
        + (sq(cfg.rabi_b3_mhz) - sq(cfg.rabi_a3_mhz)) / detuning_three
        + (sq(cfg.rabi_b4_mhz) - sq(cfg.rabi_a4_mhz)) / detuning_four)
}

pub fn optimal_detuning(atom: &AtomicConstants, cfg: &RamanConfig, scheme: Scheme) -> Result<f64> {
    match scheme {
        Scheme::Three => delta_three_level(atom, cfg),
        Scheme::Four => delta_four_level(atom, cfg),
    }
}

/// Adiabatically eliminated Rabi frequency Ω₁Ω₂/(2Δ) and residual detuning
/// δ − δ_opt.
pub fn effective_two_level(atom: &AtomicConstants, cfg: &RamanConfig, scheme: Scheme) -> Result<EffectiveTwoLevel> {
    let rabi = match scheme {
        Scheme::Three => {
            let excited = three_level_excited_detuning(atom, cfg);
            if excited == 0.0 {
                return Err(Error::Singular("three-level detuning vanishes"));
            }
            TAU * cfg.rabi_mk_mhz * TAU * cfg.rabi_nk_mhz / (2.0 * excited)
        }
        Scheme::Four => {
            let detuning_four = TAU * cfg.mean_detuning_mhz;
            let detuning_three = detuning_four + TAU * atom.hfs_excited_mhz;
            if detuning_three == 0.0 || detuning_four == 0.0 {
                return Err(Error::Singular("four-level detuning vanishes"));
            }
            TAU * TAU
                * (cfg.rabi_a3_mhz * cfg.rabi_b3_mhz / (2.0 * detuning_three)
                    + cfg.rabi_a4_mhz * cfg.rabi_b4_mhz / (2.0 * detuning_four))
        }
    };
    let detuning = TAU * cfg.two_photon_detuning_mhz - optimal_detuning(atom, cfg, scheme)?;
    Ok(EffectiveTwoLevel {
        rabi: rabi.abs(),
        detuning,
    })
}

/// Rabi formula Ω²/(Ω²+Δ²)·sin²(√(Ω²+Δ²)·t/2).
pub fn rabi_probability(rabi: f64, detuning: f64, duration_us: f64) -> f64 {
    let w2 = rabi * rabi + detuning * detuning;
    if w2 == 0.0 {
        return 0.0;
    }
    let sine = (0.5 * w2.sqrt() * duration_us).sin();
    (rabi * rabi / w2 * sine * sine).clamp(0.0, 1.0)
}

pub fn transfer_probability(atom: &AtomicConstants, cfg: &RamanConfig, scheme: Scheme) -> Result<f64> {
    let e = effective_two_level(atom, cfg, scheme)?;
    Ok(rabi_probability(e.rabi, e.detuning, cfg.pulse_us))
}

/// Transfer probability of both paths over an evenly spaced δ grid (MHz).
pub fn transfer_spectrum(
    atom: &AtomicConstants,
    cfg: &RamanConfig,
    delta_min_mhz: f64,
    delta_max_mhz: f64,
    n_points: usize,
) -> Result<Vec<SpectrumPoint>> {
    if n_points < 2 {
        return Err(Error::param("n_points", n_points as f64, "need at least 2 grid points"));
    }
    if !(delta_max_mhz > delta_min_mhz) {
        return Err(Error::param(
            "delta_max_mhz",
            delta_max_mhz,
            "must exceed delta_min_mhz",
        ));
    }
    let step = (delta_max_mhz - delta_min_mhz) / (n_points - 1) as f64;
    (0..n_points)
        .map(|i| {
            let delta_mhz = delta_min_mhz + i as f64 * step;
            let c = RamanConfig {
                two_photon_detuning_mhz: delta_mhz,
                ..*cfg
            };
            Ok(SpectrumPoint {
                delta_mhz,
                p_target: transfer_probability(atom, &c, Scheme::Three)?,
                p_blocked: transfer_probability(atom, &c, Scheme::Four)?,
            })
        })
        .collect()
}

/// p(target transferred) − p(blocked state transferred) at the configured δ.
pub fn selectivity_contrast(atom: &AtomicConstants, cfg: &RamanConfig) -> Result<f64> {
    let target = transfer_probability(atom, cfg, Scheme::Three)?;
    let blocked = transfer_probability(atom, cfg, Scheme::Four)?;
    Ok((target - blocked).clamp(0.0, 1.0))
}

/// Contrast with the blocked transfer replaced by its Lorentzian envelope
/// Ω²/(Ω²+Δ²); a pulse-length-independent worst case.
pub fn contrast_floor(atom: &AtomicConstants, cfg: &RamanConfig) -> Result<f64> {
    let target = transfer_probability(atom, cfg, Scheme::Three)?;
    let e = effective_two_level(atom, cfg, Scheme::Four)?;
    let envelope = e.rabi * e.rabi / (e.rabi * e.rabi + e.detuning * e.detuning);
    Ok((target - envelope).clamp(0.0, 1.0))
}

/// Pulse length of a resonant π pulse for the given scheme (µs).
pub fn pi_pulse_us(atom: &AtomicConstants, cfg: &RamanConfig, scheme: Scheme) -> Result<f64> {
    let e = effective_two_level(atom, cfg, scheme)?;
    if e.rabi == 0.0 {
        return Err(Error::Singular("effective Rabi frequency is zero"));
    }
    Ok(PI / e.rabi)
}

/// Transfer probability from the exact propagator of the full rotating-frame
/// Hamiltonian (ground states plus the intermediate excited levels), with no
/// adiabatic elimination.
pub fn full_level_transfer_probability(atom: &AtomicConstants, cfg: &RamanConfig, scheme: Scheme) -> Result<f64> {
    let delta = TAU * cfg.two_photon_detuning_mhz;
    let h = match scheme {
        Scheme::Three => {
            let de = three_level_excited_detuning(atom, cfg);
            let (rabi_pump, rabi_stokes) = (TAU * cfg.rabi_mk_mhz, TAU * cfg.rabi_nk_mhz);
            let mut h = DMatrix::<f64>::zeros(3, 3);
            h[(1, 1)] = ground_zeeman(atom, cfg) - delta;
            h[(2, 2)] = -(de + 0.5 * delta);
            h[(0, 2)] = 0.5 * rabi_pump;
            h[(1, 2)] = 0.5 * rabi_stokes;
            h
        }
        Scheme::Four => {
            let detuning_four = TAU * cfg.mean_detuning_mhz;
            let detuning_three = detuning_four + TAU * atom.hfs_excited_mhz;
            let mut h = DMatrix::<f64>::zeros(4, 4);
            h[(1, 1)] = -ground_zeeman(atom, cfg) - delta;
            h[(2, 2)] = -(detuning_three + 0.5 * delta);
            h[(3, 3)] = -(detuning_four + 0.5 * delta);
            h[(0, 2)] = 0.5 * TAU * cfg.rabi_a3_mhz;
            h[(0, 3)] = 0.5 * TAU * cfg.rabi_a4_mhz;
            h[(1, 2)] = 0.5 * TAU * cfg.rabi_b3_mhz;
            h[(1, 3)] = 0.5 * TAU * cfg.rabi_b4_mhz;
            h
        }
    };
    let n = h.nrows();
    let h = DMatrix::from_fn(n, n, |i, j| if i <= j { h[(i, j)] } else { h[(j, i)] });
    let eig = SymmetricEigen::new(h);
    // ψ(t) = V e^{-iλt} Vᵀ ψ(0), ψ(0) = |0⟩; the target is state 1.
    let phases = DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, -eig.eigenvalues[i] * cfg.pulse_us));
    let amp: Complex64 = (0..n)
        .map(|i| eig.eigenvectors[(1, i)] * phases[i] * eig.eigenvectors[(0, i)])
        .sum();
    Ok(amp.norm_sqr())
}
