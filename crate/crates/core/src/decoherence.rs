//! Storage-time evolution of the atomic qubit: Larmor precession in the bias
//! field plus a lumped visibility decay with time constant T2.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::qstate::{
    apply_dephasing, apply_larmor, ideal_entangled_state, joint_probabilities, AtomOutcome, AtomPhotonState,
    MeasurementSetting, PhotonPort,
};
use crate::zeeman::{larmor_frequency_khz, AtomicConstants, QubitBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayShape {
    #[default]
    Exponential,
    Gaussian,
}

/// Per-basis coherence parameters as they appear in a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceParams {
    pub t2_us: f64,
    pub v0: f64,
    #[serde(default)]
    pub shape: DecayShape,
}

impl CoherenceParams {
    pub fn initial_default() -> Self {
        Self {
            t2_us: 322.5,
            v0: 0.88,
            shape: DecayShape::Exponential,
        }
    }

    pub fn memory_default() -> Self {
        Self {
            t2_us: 6910.0,
            v0: 0.85,
            shape: DecayShape::Exponential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceModel {
    pub basis: QubitBasis,
    pub t2_us: f64,
    pub v0: f64,
    pub larmor_khz: f64,
    pub shape: DecayShape,
}

impl CoherenceModel {
    /// Builds the model with the precession frequency taken from the
    /// Breit–Rabi structure at `field_gauss`.
    pub fn new(
        basis: QubitBasis,
        params: CoherenceParams,
        constants: &AtomicConstants,
        field_gauss: f64,
    ) -> Result<Self> {
        let larmor_khz = larmor_frequency_khz(constants, basis, field_gauss)?;
        Self::with_larmor(basis, params, larmor_khz)
    }

    pub fn with_larmor(basis: QubitBasis, params: CoherenceParams, larmor_khz: f64) -> Result<Self> {
        if !(params.t2_us > 0.0) {
            return Err(Error::param("t2_us", params.t2_us, "must be > 0"));
        }
        check_unit("v0", params.v0)?;
        if !larmor_khz.is_finite() {
            return Err(Error::param("larmor_khz", larmor_khz, "must be finite"));
        }
        Ok(Self {
            basis,
            t2_us: params.t2_us,
            v0: params.v0,
            larmor_khz,
            shape: params.shape,
        })
    }

    /// Decay factor relative to V0.
    pub fn decay_factor(&self, t_us: f64) -> Result<f64> {
        check_non_negative("t_us", t_us)?;
        let x = t_us / self.t2_us;
        Ok(match self.shape {
            DecayShape::Exponential => (-x).exp(),
            DecayShape::Gaussian => (-x * x).exp(),
        })
    }

    pub fn visibility_at(&self, t_us: f64) -> Result<f64> {
        Ok(self.v0 * self.decay_factor(t_us)?)
    }

    pub fn precession_phase(&self, t_us: f64) -> Result<f64> {
        check_non_negative("t_us", t_us)?;
        Ok(TAU * self.larmor_khz * 1e-3 * t_us)
    }

    /// Dephasing by V(t)/V0 followed by the Larmor rotation.
    pub fn evolve(&self, state: &AtomPhotonState, t_us: f64) -> Result<AtomPhotonState> {
        let dephased = apply_dephasing(state, self.decay_factor(t_us)?)?;
        Ok(apply_larmor(&dephased, self.precession_phase(t_us)?))
    }

    /// Ideal state degraded to the model's zero-delay visibility.
    pub fn initial_state(&self) -> Result<AtomPhotonState> {
        apply_dephasing(&ideal_entangled_state(), self.v0)
    }
}

/// One point of a delayed-readout fringe: the photon was found in the H
/// port and the atom read out at `angle_rad` after `delay_us`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FringeSample {
    pub delay_us: f64,
    pub angle_rad: f64,
    pub shots: u64,
    pub plus_counts: u64,
}

impl FringeSample {
    pub fn probability(&self) -> f64 {
        if self.shots == 0 {
            0.0
        } else {
            self.plus_counts as f64 / self.shots as f64
        }
    }
}

/// p(atom "+" at `angle` | photon in H) for the evolved state.
pub fn conditional_plus_probability(state: &AtomPhotonState, angle_rad: f64) -> f64 {
    let p = joint_probabilities(state, &MeasurementSetting::linear(0.0, angle_rad));
    let port: f64 = [AtomOutcome::Plus, AtomOutcome::Minus, AtomOutcome::Leak]
        .into_iter()
        .map(|a| p.get(PhotonPort::Plus, a))
        .sum();
    if port > 0.0 {
        p.get(PhotonPort::Plus, AtomOutcome::Plus) / port
    } else {
        0.0
    }
}

/// Binomially sampled delayed-readout fringes, one per delay, each over the
/// given analysis angles.
pub fn synthetic_coherence_scan<R: Rng + ?Sized>(
    model: &CoherenceModel,
    delays_us: &[f64],
    angles_rad: &[f64],
    shots_per_angle: u64,
    rng: &mut R,
) -> Result<Vec<FringeSample>> {
    let start = model.initial_state()?;
    let mut out = Vec::with_capacity(delays_us.len() * angles_rad.len());
    for &delay_us in delays_us {
        let state = model.evolve(&start, delay_us)?;
        for &angle_rad in angles_rad {
            let p = conditional_plus_probability(&state, angle_rad).clamp(0.0, 1.0);
            let plus_counts = Binomial::new(shots_per_angle, p)
                .map_err(|_| Error::param("p", p, "invalid binomial probability"))?
                .sample(rng);
            out.push(FringeSample {
                delay_us,
                angle_rad,
                shots: shots_per_angle,
                plus_counts,
            });
        }
    }
    Ok(out)
}
