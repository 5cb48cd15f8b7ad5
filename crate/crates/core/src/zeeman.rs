//! ⁸⁷Rb 5²S₁/₂ Zeeman structure from the Breit–Rabi formula (J = 1/2, I = 3/2).
//!
//! Units are MHz (cyclic) and gauss throughout. Sign conventions:
//!
//! | quantity            | value / sign                                   |
//! |---------------------|------------------------------------------------|
//! | g_J                 | +2.00233113                                    |
//! | g_I                 | −0.0009951414 (μ_B units, H = μ_B(g_J J_z + g_I I_z)B) |
//! | g_F(F=1)            | −g_J/4 + 5g_I/4 ≈ −0.5018                      |
//! | g_F(F=2)            | +g_J/4 + 3g_I/4 ≈ +0.5000                      |
//! | Raman ground |g_F|  | 1/2                                            |
//! | Raman excited |g_F′| | 1/6 (5²P₁/₂, F′ = 2)                          |
//!
//! Energies are measured from the hyperfine centroid, so F=2 sits at
//! +3Δ_hfs/8 and F=1 at −5Δ_hfs/8 at zero field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NUCLEAR_SPIN: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtomicConstants {
    pub g_j: f64,
    pub g_i: f64,
    pub mu_b_mhz_per_gauss: f64,
    /// Ground-state hyperfine splitting.
    pub hfs_ground_mhz: f64,
    /// 5²P₁/₂ F′=1 ↔ F′=2 splitting.
    pub hfs_excited_mhz: f64,
    /// Ground-state |g_F| used by the Raman detuning formulas.
    pub raman_g_f: f64,
    /// Excited-state |g_F′| used by the Raman detuning formulas.
    pub raman_g_f_excited: f64,
}

impl Default for AtomicConstants {
    fn default() -> Self {
        Self {
            g_j: 2.002_331_13,
            g_i: -0.000_995_141_4,
            mu_b_mhz_per_gauss: 1.399_624_493_61,
            hfs_ground_mhz: 6_834.682_610_904,
            hfs_excited_mhz: 814.5,
            raman_g_f: 0.5,
            raman_g_f_excited: 1.0 / 6.0,
        }
    }
}

impl AtomicConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.hfs_ground_mhz > 0.0) {
            return Err(Error::param("hfs_ground_mhz", self.hfs_ground_mhz, "must be > 0"));
        }
        if !(self.hfs_excited_mhz > 0.0) {
            return Err(Error::param("hfs_excited_mhz", self.hfs_excited_mhz, "must be > 0"));
        }
        if !(self.mu_b_mhz_per_gauss > 0.0) {
            return Err(Error::param(
                "mu_b_mhz_per_gauss",
                self.mu_b_mhz_per_gauss,
                "must be > 0",
            ));
        }
        if self.g_i == 0.0 || !self.g_i.is_finite() || !self.g_j.is_finite() {
            return Err(Error::param("g_i", self.g_i, "must be finite and non-zero"));
        }
        Ok(())
    }

    /// Exact Landé factor of a ground hyperfine level.
    pub fn g_f(&self, f_level: u8) -> f64 {
        let f_sq = f_level as f64 * (f_level as f64 + 1.0);
        let (i_sq, j_sq) = (NUCLEAR_SPIN * (NUCLEAR_SPIN + 1.0), 0.75);
        self.g_j * (f_sq - i_sq + j_sq) / (2.0 * f_sq) + self.g_i * (f_sq + i_sq - j_sq) / (2.0 * f_sq)
    }

    fn x_per_gauss(&self) -> f64 {
        (self.g_j - self.g_i) * self.mu_b_mhz_per_gauss / self.hfs_ground_mhz
    }
}

fn check_level(f_level: u8, m_f: i8) -> Result<()> {
    let ok = match f_level {
        1 => m_f.abs() <= 1,
        2 => m_f.abs() <= 2,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::param(
            "m_F",
            m_f as f64,
            "not a level of the F=1/F=2 ground manifold",
        ))
    }
}

/// Breit–Rabi energy, valid for any sign of `field_gauss`.
fn energy_raw(consts: &AtomicConstants, f_level: u8, m_f: i8, field_gauss: f64) -> f64 {
    let de = consts.hfs_ground_mhz;
    let projection = m_f as f64;
    let reduced = consts.x_per_gauss() * field_gauss;
    let base = -de / (2.0 * (2.0 * NUCLEAR_SPIN + 1.0));
    if m_f.abs() == 2 {
        // Stretched states: the square root is 1 ± x exactly, no branch flip.
        return base
            + consts.g_i * consts.mu_b_mhz_per_gauss * projection * field_gauss
            + 0.5 * de * (1.0 + projection.signum() * reduced);
    }
    let root = (1.0 + 4.0 * projection * reduced / (2.0 * NUCLEAR_SPIN + 1.0) + reduced * reduced).sqrt();
    let sign = if f_level == 2 { 1.0 } else { -1.0 };
    base + consts.g_i * consts.mu_b_mhz_per_gauss * projection * field_gauss + sign * 0.5 * de * root
}

fn slope_raw(consts: &AtomicConstants, f_level: u8, m_f: i8, field_gauss: f64) -> f64 {
    let de = consts.hfs_ground_mhz;
    let projection = m_f as f64;
    let reduced_per_gauss = consts.x_per_gauss();
    let reduced = reduced_per_gauss * field_gauss;
    let nuclear = consts.g_i * consts.mu_b_mhz_per_gauss * projection;
    if m_f.abs() == 2 {
        return nuclear + 0.5 * de * projection.signum() * reduced_per_gauss;
    }
    let root = (1.0 + 4.0 * projection * reduced / (2.0 * NUCLEAR_SPIN + 1.0) + reduced * reduced).sqrt();
    let sign = if f_level == 2 { 1.0 } else { -1.0 };
    nuclear
        + sign * 0.25 * de * (4.0 * projection / (2.0 * NUCLEAR_SPIN + 1.0) + 2.0 * reduced) * reduced_per_gauss / root
}

fn check_field(field_gauss: f64) -> Result<()> {
    if field_gauss >= 0.0 && field_gauss.is_finite() {
        Ok(())
    } else {
        Err(Error::param("B", field_gauss, "field must be finite and >= 0 G"))
    }
}

/// Level energy in MHz at field `field_gauss` (gauss).
pub fn breit_rabi_energy(consts: &AtomicConstants, f_level: u8, m_f: i8, field_gauss: f64) -> Result<f64> {
    check_level(f_level, m_f)?;
    check_field(field_gauss)?;
    Ok(energy_raw(consts, f_level, m_f, field_gauss))
}

/// Analytic dE/dB in MHz/G.
pub fn breit_rabi_slope(consts: &AtomicConstants, f_level: u8, m_f: i8, field_gauss: f64) -> Result<f64> {
    check_level(f_level, m_f)?;
    check_field(field_gauss)?;
    Ok(slope_raw(consts, f_level, m_f, field_gauss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitBasis {
    /// {|F=1,m=−1⟩, |F=1,m=+1⟩}
    Initial,
    /// {|F=1,m=−1⟩, |F=2,m=+1⟩}
    Memory,
}

impl QubitBasis {
    pub fn levels(self) -> [(u8, i8); 2] {
        match self {
            QubitBasis::Initial => [(1, -1), (1, 1)],
            QubitBasis::Memory => [(1, -1), (2, 1)],
        }
    }
}

fn transition_raw(consts: &AtomicConstants, basis: QubitBasis, field_gauss: f64) -> f64 {
    let [(f0, m0), (f1, m1)] = basis.levels();
    energy_raw(consts, f1, m1, field_gauss) - energy_raw(consts, f0, m0, field_gauss)
}

/// Qubit transition frequency (second level minus first), MHz.
pub fn transition_frequency(consts: &AtomicConstants, basis: QubitBasis, field_gauss: f64) -> Result<f64> {
    check_field(field_gauss)?;
    Ok(transition_raw(consts, basis, field_gauss))
}

/// dν/dB of the qubit transition by Richardson-extrapolated central
/// differences. The step is halved while successive estimates keep getting
/// closer; once round-off dominates the change grows and the loop stops.
pub fn basis_sensitivity(consts: &AtomicConstants, basis: QubitBasis, field_gauss: f64) -> Result<f64> {
    check_field(field_gauss)?;
    let central = |step: f64| {
        (transition_raw(consts, basis, field_gauss + step) - transition_raw(consts, basis, field_gauss - step))
            / (2.0 * step)
    };
    let richardson = |step: f64| (4.0 * central(0.5 * step) - central(step)) / 3.0;
    let mut step = 0.05;
    let mut prev = richardson(step);
    let mut prev_change = f64::INFINITY;
    for _ in 0..20 {
        step *= 0.5;
        let next = richardson(step);
        let change = (next - prev).abs();
        if change >= prev_change {
            return Ok(prev);
        }
        if change <= 1e-12 * next.abs() {
            return Ok(next);
        }
        prev = next;
        prev_change = change;
    }
    Ok(prev)
}

/// dν/dB from the analytic Breit–Rabi derivative.
pub fn basis_sensitivity_analytic(consts: &AtomicConstants, basis: QubitBasis, field_gauss: f64) -> Result<f64> {
    check_field(field_gauss)?;
    let [(f0, m0), (f1, m1)] = basis.levels();
    Ok(slope_raw(consts, f1, m1, field_gauss) - slope_raw(consts, f0, m0, field_gauss))
}

/// χ(B): field sensitivity of the initial basis over that of the memory basis.
pub fn suppression_factor(consts: &AtomicConstants, field_gauss: f64) -> Result<f64> {
    let ratio = basis_sensitivity(consts, QubitBasis::Initial, field_gauss)?
        / basis_sensitivity(consts, QubitBasis::Memory, field_gauss)?;
    Ok(ratio)
}

pub fn suppression_factor_analytic(consts: &AtomicConstants, field_gauss: f64) -> Result<f64> {
    Ok(basis_sensitivity_analytic(consts, QubitBasis::Initial, field_gauss)?
        / basis_sensitivity_analytic(consts, QubitBasis::Memory, field_gauss)?)
}

/// Larmor frequency (kHz) of a superposition in `basis` at field `field_gauss`.
///
/// The initial basis precesses at its Zeeman splitting; the memory basis at
/// that rate divided by χ(B).
pub fn larmor_frequency_khz(consts: &AtomicConstants, basis: QubitBasis, field_gauss: f64) -> Result<f64> {
    let initial = transition_frequency(consts, QubitBasis::Initial, field_gauss)?.abs() * 1e3;
    match basis {
        QubitBasis::Initial => Ok(initial),
        QubitBasis::Memory if field_gauss == 0.0 => Ok(0.0),
        QubitBasis::Memory => Ok(initial / suppression_factor(consts, field_gauss)?),
    }
}
