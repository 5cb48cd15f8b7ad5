//! Seeded Monte-Carlo of the experimental sequence: cooling, bursts of
//! entanglement attempts, heralding clicks, and delayed atomic readout.
//!
//! Attempts that produce no click are never simulated one by one. The number
//! of failed attempts before the next click is drawn from a geometric
//! distribution and the timeline is advanced arithmetically over whole
//! bursts, so a campaign costs O(events) rather than O(attempts).

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::analysis::{
    chsh_from_counts, fidelity_lower_bound, fit_sinusoid, ChshResult, ErrorBudget, FringeFit, SettingCounts,
};
use crate::decoherence::CoherenceModel;
use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::link::{ClickBreakdown, LinkParams};
use crate::qstate::{
    add_leakage, apply_dephasing, depolarize_atom, ideal_entangled_state, joint_probabilities, mix_uncorrelated_noise,
    AtomBasis, AtomOutcome, AtomPhotonState, JointProbabilities, MeasurementSetting, PhotonBasis, PhotonPort,
};
use crate::rate::TimingBudget;

pub const GENERATOR: &str = "ChaCha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhotonChoice {
    Lr,
    Hv,
    Da,
}

impl PhotonChoice {
    pub fn basis(self) -> PhotonBasis {
        match self {
            PhotonChoice::Lr => PhotonBasis::Circular,
            PhotonChoice::Hv => PhotonBasis::HV,
            PhotonChoice::Da => PhotonBasis::DA,
        }
    }

    /// Names of the "+" and "−" ports.
    pub fn port_names(self) -> [&'static str; 2] {
        match self {
            PhotonChoice::Lr => ["L", "R"],
            PhotonChoice::Hv => ["H", "V"],
            PhotonChoice::Da => ["D", "A"],
        }
    }
}

/// One measurement setting of the schedule. Without `atom_angle_deg` the
/// atom is read out along z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub label: String,
    pub photon: PhotonChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_angle_deg: Option<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl SettingSpec {
    pub fn setting(&self) -> MeasurementSetting {
        let atom = match self.atom_angle_deg {
            Some(d) => AtomBasis::analysis_angle(d.to_radians()),
            None => AtomBasis::z(),
        };
        MeasurementSetting {
            photon: self.photon.basis(),
            atom,
        }
    }
}

/// Fraction of polarisation correlation surviving the analysis in each
/// photon basis; the rest of the clicks land in a random port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotonContrast {
    pub lr: f64,
    pub hv: f64,
    pub da: f64,
}

impl Default for PhotonContrast {
    fn default() -> Self {
        Self {
            lr: 1.0,
            hv: 1.0,
            da: 1.0,
        }
    }
}

impl PhotonContrast {
    pub fn get(&self, choice: PhotonChoice) -> f64 {
        match choice {
            PhotonChoice::Lr => self.lr,
            PhotonChoice::Hv => self.hv,
            PhotonChoice::Da => self.da,
        }
    }
}

/// The `[sequence]` section of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceParams {
    pub burst_length: u32,
    pub pgc_us: f64,
    pub ramp_down_us: f64,
    pub field_stabilization_us: f64,
    pub ramp_back_us: f64,
    pub readout_us: f64,
    pub pump_efficiency: f64,
    pub excitation_efficiency: f64,
    pub excited_lifetime_ns: f64,
    /// Per Raman pulse; a failed transfer leaves an unpolarised qubit.
    pub raman_transfer_efficiency: f64,
    /// Probability that a ± readout reports the right result.
    pub readout_fidelity: f64,
    /// Population left in m_F = 0 by pumping and excitation.
    pub generation_leakage: f64,
    /// RMS timing error of the readout against the Larmor precession.
    pub readout_timing_jitter_ns: f64,
    /// Static depolarisation standing in for slow experimental drifts.
    pub drift_depolarization: f64,
    #[serde(default)]
    pub photon_contrast: PhotonContrast,
    pub duty_cycle: f64,
    pub seed: u64,
    pub settings: Vec<SettingSpec>,
    /// Labels of the four settings entering S = |E₁ + E₂ + E₃ − E₄|.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh: Option<[String; 4]>,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self {
            burst_length: 11,
            pgc_us: 1000.0,
            ramp_down_us: 1500.0,
            field_stabilization_us: 4000.0,
            ramp_back_us: 500.0,
            readout_us: 1.0,
            pump_efficiency: 0.80,
            excitation_efficiency: 0.90,
            excited_lifetime_ns: 26.24,
            raman_transfer_efficiency: 0.975,
            readout_fidelity: 0.9765,
            generation_leakage: 0.0055,
            readout_timing_jitter_ns: 58.7,
            drift_depolarization: 0.04,
            photon_contrast: PhotonContrast::default(),
            duty_cycle: 0.5,
            seed: 1,
            settings: three_basis_schedule(),
            chsh: None,
        }
    }
}

/// Photon in {L,R}, {H,V}, {D,A} with the atom along z, X and Y.
pub fn three_basis_schedule() -> Vec<SettingSpec> {
    vec![
        SettingSpec {
            label: "Z".into(),
            photon: PhotonChoice::Lr,
            atom_angle_deg: None,
            weight: 1.0,
        },
        SettingSpec {
            label: "X".into(),
            photon: PhotonChoice::Hv,
            atom_angle_deg: Some(0.0),
            weight: 1.0,
        },
        SettingSpec {
            label: "Y".into(),
            photon: PhotonChoice::Da,
            atom_angle_deg: Some(45.0),
            weight: 1.0,
        },
    ]
}

/// {H,V} and {D,A} photon bases, each with the atomic analysis angle stepped
/// through 0°..157.5° in 22.5° steps.
pub fn fringe_schedule() -> Vec<SettingSpec> {
    let mut out = Vec::new();
    for (name, photon) in [("HV", PhotonChoice::Hv), ("DA", PhotonChoice::Da)] {
        for k in 0..8 {
            let deg = 22.5 * k as f64;
            out.push(SettingSpec {
                label: format!("{name}@{deg}"),
                photon,
                atom_angle_deg: Some(deg),
                weight: 1.0,
            });
        }
    }
    out
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        if self.burst_length == 0 {
            return Err(Error::param("burst_length", 0.0, "must be >= 1"));
        }
        for (name, v) in [
            ("pgc_us", self.pgc_us),
            ("ramp_down_us", self.ramp_down_us),
            ("field_stabilization_us", self.field_stabilization_us),
            ("ramp_back_us", self.ramp_back_us),
            ("readout_us", self.readout_us),
            ("excited_lifetime_ns", self.excited_lifetime_ns),
            ("readout_timing_jitter_ns", self.readout_timing_jitter_ns),
        ] {
            check_non_negative(name, v)?;
        }
        for (name, v) in [
            ("pump_efficiency", self.pump_efficiency),
            ("excitation_efficiency", self.excitation_efficiency),
            ("raman_transfer_efficiency", self.raman_transfer_efficiency),
            ("readout_fidelity", self.readout_fidelity),
            ("generation_leakage", self.generation_leakage),
            ("drift_depolarization", self.drift_depolarization),
            ("photon_contrast.lr", self.photon_contrast.lr),
            ("photon_contrast.hv", self.photon_contrast.hv),
            ("photon_contrast.da", self.photon_contrast.da),
            ("duty_cycle", self.duty_cycle),
        ] {
            check_unit(name, v)?;
        }
        if self.duty_cycle == 0.0 {
            return Err(Error::param("duty_cycle", 0.0, "must be > 0"));
        }
        if self.settings.is_empty() {
            return Err(Error::config("sequence.settings", "schedule is empty"));
        }
        for s in &self.settings {
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(Error::config(
                    format!("sequence.settings.{}", s.label),
                    "weight must be finite and >= 0",
                ));
            }
            if s.atom_angle_deg.is_some_and(|a| !a.is_finite()) {
                return Err(Error::config(
                    format!("sequence.settings.{}", s.label),
                    "angle must be finite",
                ));
            }
        }
        if self.settings.iter().all(|s| s.weight == 0.0) {
            return Err(Error::config("sequence.settings", "all weights are zero"));
        }
        let mut labels: Vec<&str> = self.settings.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("sequence.settings", "labels must be unique"));
        }
        if let Some(chsh) = &self.chsh {
            for l in chsh {
                if !self.settings.iter().any(|s| &s.label == l) {
                    return Err(Error::config("sequence.chsh", format!("unknown setting label `{l}`")));
                }
            }
        }
        Ok(())
    }

    pub fn cooling_us(&self) -> f64 {
        self.pgc_us + self.ramp_down_us + self.field_stabilization_us
    }

    pub fn emission_probability(&self) -> f64 {
        self.pump_efficiency * self.excitation_efficiency
    }
}

/// Everything a campaign needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceConfig {
    pub link: LinkParams,
    pub timing: TimingBudget,
    pub sequence: SequenceParams,
    /// Storage between the two Raman transfers.
    pub memory: CoherenceModel,
    /// Precession after the transfer back, seen by readout timing errors.
    pub initial: CoherenceModel,
}

/// Which imperfections are active; used for error-budget attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub generation: bool,
    pub raman: bool,
    pub decoherence: bool,
    pub readout_timing: bool,
    pub drifts: bool,
    pub noise: bool,
    pub readout: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        generation: true,
        raman: true,
        decoherence: true,
        readout_timing: true,
        drifts: true,
        noise: true,
        readout: true,
    };
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.timing.validate()?;
        self.sequence.validate()?;
        let p = self.link.signal_click_probability()?;
        if p > self.sequence.emission_probability() {
            return Err(Error::param(
                "collection_efficiency",
                p,
                "herald probability exceeds pump x excitation efficiency",
            ));
        }
        if (self.sequence.cooling_us() - self.timing.cooling_us).abs() > 1e-6 {
            log::warn!(
                "sequence cooling stages sum to {} us but the rate budget amortises {} us",
                self.sequence.cooling_us(),
                self.timing.cooling_us
            );
        }
        if self.sequence.burst_length != self.timing.attempts_per_cooling {
            log::warn!(
                "burst length {} differs from attempts_per_cooling {}",
                self.sequence.burst_length,
                self.timing.attempts_per_cooling
            );
        }
        Ok(())
    }

    pub fn storage_time_us(&self) -> Result<f64> {
        self.link.travel_time_us()
    }

    /// Atom-photon state at readout for a heralded signal photon, before
    /// photon analysis and readout errors.
    pub fn signal_state(&self, ch: Channels) -> Result<AtomPhotonState> {
        let s = &self.sequence;
        let raman_loss = if ch.raman {
            1.0 - s.raman_transfer_efficiency
        } else {
            0.0
        };
        let mut state = ideal_entangled_state();
        if ch.generation {
            state = add_leakage(&state, s.generation_leakage)?;
        }
        state = depolarize_atom(&state, raman_loss)?;
        if ch.decoherence {
            state = apply_dephasing(&state, self.memory.decay_factor(self.storage_time_us()?)?)?;
        }
        state = depolarize_atom(&state, raman_loss)?;
        if ch.readout_timing {
            let sigma_phase = TAU * self.initial.larmor_khz * 1e-3 * s.readout_timing_jitter_ns * 1e-3;
            state = apply_dephasing(&state, (-0.5 * sigma_phase * sigma_phase).exp())?;
        }
        if ch.drifts {
            state = depolarize_atom(&state, s.drift_depolarization)?;
        }
        Ok(state)
    }

    fn readout_flip(&self, ch: Channels) -> f64 {
        if ch.readout {
            1.0 - self.sequence.readout_fidelity
        } else {
            0.0
        }
    }

    fn contrast(&self, choice: PhotonChoice, ch: Channels) -> f64 {
        if ch.drifts {
            self.sequence.photon_contrast.get(choice)
        } else {
            1.0
        }
    }

    /// Outcome distribution of a signal click in `spec`.
    pub fn signal_outcomes(&self, spec: &SettingSpec, ch: Channels) -> Result<JointProbabilities> {
        let state = self.signal_state(ch)?;
        let analysed = mix_uncorrelated_noise(&state, 1.0 - self.contrast(spec.photon, ch))?;
        Ok(flip_atom(
            joint_probabilities(&analysed, &spec.setting()),
            self.readout_flip(ch),
        ))
    }

    /// Outcome distribution of a noise click: random port, atom read out from
    /// its own marginal.
    pub fn noise_outcomes(&self, spec: &SettingSpec, ch: Channels) -> Result<JointProbabilities> {
        let noise = mix_uncorrelated_noise(&self.signal_state(ch)?, 1.0)?;
        Ok(flip_atom(
            joint_probabilities(&noise, &spec.setting()),
            self.readout_flip(ch),
        ))
    }

    /// Per-attempt click probabilities.
    pub fn clicks(&self) -> Result<ClickBreakdown> {
        self.link.click_breakdown()
    }

    /// Correlator expected in `spec`, averaging signal and noise clicks.
    pub fn expected_correlator(&self, spec: &SettingSpec, ch: Channels) -> Result<f64> {
        let sig = self.signal_outcomes(spec, ch)?.correlator();
        if !ch.noise {
            return Ok(sig);
        }
        let b = self.clicks()?;
        let total = b.total();
        if total == 0.0 {
            return Ok(sig);
        }
        let noise = self.noise_outcomes(spec, ch)?.correlator();
        Ok((b.p_signal * sig + b.noise() * noise) / total)
    }

    /// Mean of the X, Y and Z correlators (photon {H,V}, {D,A}, {L,R}).
    pub fn expected_mean_visibility(&self, ch: Channels) -> Result<f64> {
        let mut sum = 0.0;
        for spec in three_basis_schedule() {
            sum += self.expected_correlator(&spec, ch)?;
        }
        Ok(sum / 3.0)
    }

    /// Visibility loss of each mechanism, measured by switching it off and
    /// comparing the expected mean visibility.
    pub fn error_budget(&self) -> Result<ErrorBudget> {
        let full = self.expected_mean_visibility(Channels::ALL)?;
        let loss = |ch: Channels| -> Result<f64> { Ok((1.0 - full / self.expected_mean_visibility(ch)?).max(0.0)) };
        let all = Channels::ALL;
        Ok(ErrorBudget {
            snr_readout: loss(Channels { noise: false, ..all })?,
            decoherence: loss(Channels {
                decoherence: false,
                ..all
            })?,
            raman_transfers: loss(Channels { raman: false, ..all })?,
            readout: loss(Channels { readout: false, ..all })?,
            entanglement_generation: loss(Channels {
                generation: false,
                ..all
            })?,
            readout_timing: loss(Channels {
                readout_timing: false,
                ..all
            })?,
            drifts: loss(Channels { drifts: false, ..all })?,
        })
    }

    /// Mean active time per attempt in the simulated timeline, including the
    /// amortised cooling and ramp-back of each burst (µs).
    pub fn mean_attempt_time_us(&self) -> Result<f64> {
        let s = &self.sequence;
        Ok(self.attempt_time_us()? + (s.cooling_us() + s.ramp_back_us) / s.burst_length as f64)
    }

    fn attempt_time_us(&self) -> Result<f64> {
        Ok(self.timing.prep_us + self.timing.entangle_us + self.timing.raman_us + self.link.travel_time_us()?)
    }

    /// Expected heralds per wall-clock hour for p ≪ 1.
    pub fn expected_events_per_hour(&self) -> Result<f64> {
        let p = self.clicks()?.total();
        Ok(p * self.sequence.duty_cycle / self.mean_attempt_time_us()? * 3.6e9)
    }
}

fn flip_atom(probs: JointProbabilities, flip: f64) -> JointProbabilities {
    let mut out = probs;
    for port in 0..2 {
        out.0[port][0] = (1.0 - flip) * probs.0[port][0] + flip * probs.0[port][1];
        out.0[port][1] = (1.0 - flip) * probs.0[port][1] + flip * probs.0[port][0];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthTag {
    Signal,
    Qfc,
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Detector click on the active (duty-cycle-free) timeline.
    pub time_us: f64,
    pub attempt_idx: u64,
    pub setting: String,
    pub photon_port: String,
    pub atom_outcome: AtomOutcomeTag,
    pub truth_tag: TruthTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtomOutcomeTag {
    Plus,
    Minus,
    Leak,
}

impl From<AtomOutcome> for AtomOutcomeTag {
    fn from(a: AtomOutcome) -> Self {
        match a {
            AtomOutcome::Plus => AtomOutcomeTag::Plus,
            AtomOutcome::Minus => AtomOutcomeTag::Minus,
            AtomOutcome::Leak => AtomOutcomeTag::Leak,
        }
    }
}

impl From<AtomOutcomeTag> for AtomOutcome {
    fn from(a: AtomOutcomeTag) -> Self {
        match a {
            AtomOutcomeTag::Plus => AtomOutcome::Plus,
            AtomOutcomeTag::Minus => AtomOutcome::Minus,
            AtomOutcomeTag::Leak => AtomOutcome::Leak,
        }
    }
}

/// Coincidence counts of one setting, indexed `[port][atom]` with atom
/// outcomes ordered (+, −, leak).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingTally {
    pub label: String,
    pub counts: [[u64; 3]; 2],
}

impl SettingTally {
    pub fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            counts: [[0; 3]; 2],
        }
    }

    pub fn add(&mut self, port: PhotonPort, atom: AtomOutcome) {
        self.counts[port as usize][atom as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn same_different(&self) -> SettingCounts {
        let same = self.counts[0][0] + self.counts[1][1];
        SettingCounts {
            label: self.label.clone(),
            same,
            different: self.total() - same,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub generator: String,
    pub events: u64,
    pub signal_events: u64,
    pub qfc_events: u64,
    pub dark_events: u64,
    pub total_attempts: u64,
    pub cooling_cycles: u64,
    pub active_time_us: f64,
    pub duty_cycle: f64,
    pub wall_time_hours: f64,
    pub tallies: Vec<SettingTally>,
}

impl RunSummary {
    pub fn noise_fraction(&self) -> f64 {
        if self.events == 0 {
            0.0
        } else {
            (self.qfc_events + self.dark_events) as f64 / self.events as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    Events(u64),
    WallHours(f64),
}

/// Position in the cooling/burst cycle.
#[derive(Debug, Clone, Copy)]
struct Timeline {
    time_us: f64,
    pos: u32,
    cooled: bool,
    attempts: u64,
    cycles: u64,
}

struct Durations {
    attempt: f64,
    cooling: f64,
    ramp_back: f64,
    burst: u32,
}

impl Timeline {
    fn new() -> Self {
        Self {
            time_us: 0.0,
            pos: 0,
            cooled: false,
            attempts: 0,
            cycles: 0,
        }
    }

    fn cool_if_needed(&mut self, durations: &Durations) {
        if !self.cooled {
            self.time_us += durations.cooling;
            self.cooled = true;
            self.cycles += 1;
        }
    }

    /// Runs `k` attempts that all fail.
    fn fail(&mut self, mut count: u64, durations: &Durations) {
        let burst = durations.burst as u64;
        if count == 0 {
            return;
        }
        if self.cooled {
            let left = burst - self.pos as u64;
            if count < left {
                self.time_us += count as f64 * durations.attempt;
                self.pos += count as u32;
                self.attempts += count;
                return;
            }
            self.time_us += left as f64 * durations.attempt + durations.ramp_back;
            self.attempts += left;
            count -= left;
            self.pos = 0;
            self.cooled = false;
        }
        let full = count / burst;
        self.time_us += full as f64 * (durations.cooling + burst as f64 * durations.attempt + durations.ramp_back);
        self.attempts += full * burst;
        self.cycles += full;
        count -= full * burst;
        if count > 0 {
            self.cool_if_needed(durations);
            self.time_us += count as f64 * durations.attempt;
            self.pos = count as u32;
            self.attempts += count;
        }
    }
}

/// Precomputed outcome tables and click probabilities.
pub struct Simulator {
    config: SequenceConfig,
    clicks: ClickBreakdown,
    emission: f64,
    signal: Vec<[f64; 6]>,
    noise: Vec<[f64; 6]>,
    choose_setting: WeightedIndex<f64>,
    durations: Durations,
    travel_us: f64,
    emission_delay: Exp<f64>,
}

const OUTCOMES: [(PhotonPort, AtomOutcome); 6] = [
    (PhotonPort::Plus, AtomOutcome::Plus),
    (PhotonPort::Plus, AtomOutcome::Minus),
    (PhotonPort::Plus, AtomOutcome::Leak),
    (PhotonPort::Minus, AtomOutcome::Plus),
    (PhotonPort::Minus, AtomOutcome::Minus),
    (PhotonPort::Minus, AtomOutcome::Leak),
];

fn table(p: &JointProbabilities) -> [f64; 6] {
    let mut t = [0.0; 6];
    for (i, (port, atom)) in OUTCOMES.iter().enumerate() {
        t[i] = p.get(*port, *atom).max(0.0);
    }
    t
}

fn sample_outcome<R: Rng + ?Sized>(rng: &mut R, t: &[f64; 6]) -> (PhotonPort, AtomOutcome) {
    let total: f64 = t.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in t.iter().enumerate() {
        if u < *p {
            return OUTCOMES[i];
        }
        u -= p;
    }
    OUTCOMES[5]
}

impl Simulator {
    pub fn new(config: &SequenceConfig) -> Result<Self> {
        config.validate()?;
        let ch = Channels::ALL;
        let mut signal = Vec::new();
        let mut noise = Vec::new();
        for spec in &config.sequence.settings {
            signal.push(table(&config.signal_outcomes(spec, ch)?));
            noise.push(table(&config.noise_outcomes(spec, ch)?));
        }
        let weights: Vec<f64> = config.sequence.settings.iter().map(|s| s.weight).collect();
        let choose_setting =
            WeightedIndex::new(&weights).map_err(|e| Error::config("sequence.settings", e.to_string()))?;
        let s = &config.sequence;
        let durations = Durations {
            attempt: config.attempt_time_us()?,
            cooling: s.cooling_us(),
            ramp_back: s.ramp_back_us,
            burst: s.burst_length,
        };
        let lifetime_us = s.excited_lifetime_ns * 1e-3;
        let emission_delay = Exp::new(if lifetime_us > 0.0 {
            1.0 / lifetime_us
        } else {
            f64::INFINITY
        })
        .map_err(|_| Error::param("excited_lifetime_ns", s.excited_lifetime_ns, "invalid lifetime"))?;
        Ok(Self {
            clicks: config.clicks()?,
            emission: s.emission_probability(),
            signal,
            noise,
            choose_setting,
            durations,
            travel_us: config.link.travel_time_us()?,
            emission_delay,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.config
    }

    fn sample_click<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        tag: TruthTag,
        attempt_start: f64,
        attempt_idx: u64,
    ) -> DetectionRecord {
        let k = self.choose_setting.sample(rng);
        let spec = &self.config.sequence.settings[k];
        let tables = if tag == TruthTag::Signal {
            &self.signal
        } else {
            &self.noise
        };
        let (port, atom) = sample_outcome(rng, &tables[k]);
        let t = &self.config.timing;
        let emitted = attempt_start + t.prep_us + t.entangle_us;
        let time_us = match tag {
            TruthTag::Signal => emitted + self.emission_delay.sample(rng) + self.travel_us,
            _ => emitted + self.travel_us + rng.random::<f64>() * self.config.link.window_ns * 1e-3,
        };
        DetectionRecord {
            time_us,
            attempt_idx,
            setting: spec.label.clone(),
            photon_port: spec.photon.port_names()[port as usize].to_string(),
            atom_outcome: atom.into(),
            truth_tag: tag,
        }
    }

    /// One attempt simulated directly: the photon is emitted with the pump
    /// and excitation efficiencies and then heralded with the remaining link
    /// probability; otherwise a noise click may still fire.
    pub fn run_attempt<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        attempt_start: f64,
        attempt_idx: u64,
    ) -> Option<DetectionRecord> {
        let c = &self.clicks;
        if c.p_signal > 0.0 && rng.random::<f64>() < self.emission && rng.random::<f64>() < c.p_signal / self.emission {
            return Some(self.sample_click(rng, TruthTag::Signal, attempt_start, attempt_idx));
        }
        // Noise probabilities are conditioned on the signal not firing.
        let rest = 1.0 - c.p_signal;
        if rest <= 0.0 {
            return None;
        }
        let u = rng.random::<f64>() * rest;
        if u < c.p_qfc {
            Some(self.sample_click(rng, TruthTag::Qfc, attempt_start, attempt_idx))
        } else if u < c.p_qfc + c.p_dc {
            Some(self.sample_click(rng, TruthTag::Dark, attempt_start, attempt_idx))
        } else {
            None
        }
    }

    /// Runs a campaign with a fresh generator seeded from the configuration.
    pub fn run_campaign(&self, stop: StopCondition) -> Result<(RunSummary, Vec<DetectionRecord>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.sequence.seed);
        self.run_campaign_with(&mut rng, stop)
    }

    pub fn run_campaign_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        stop: StopCondition,
    ) -> Result<(RunSummary, Vec<DetectionRecord>)> {
        let s = &self.config.sequence;
        let d = &self.durations;
        let (max_events, max_active_us) = match stop {
            StopCondition::Events(n) => (n, f64::INFINITY),
            StopCondition::WallHours(h) => {
                check_non_negative("max_simulated_hours", h)?;
                (u64::MAX, h * 3.6e9 * s.duty_cycle)
            }
        };
        let p_click = self.clicks.total();
        let mut tl = Timeline::new();
        let mut records = Vec::new();
        let mut tallies: Vec<SettingTally> = s.settings.iter().map(|x| SettingTally::new(&x.label)).collect();
        let (mut n_sig, mut n_qfc, mut n_dc) = (0u64, 0u64, 0u64);

        if p_click > 0.0 && max_events > 0 {
            let geo = Geometric::new(p_click.min(1.0))
                .map_err(|_| Error::param("p_click", p_click, "invalid click probability"))?;
            while (records.len() as u64) < max_events {
                let failures = geo.sample(rng);
                let mut next = tl;
                next.fail(failures, d);
                next.cool_if_needed(d);
                let start = next.time_us;
                if start + d.attempt > max_active_us {
                    // Count only the failures that fit before the limit.
                    tl = self.advance_until(tl, failures, max_active_us);
                    tl.time_us = max_active_us;
                    break;
                }
                tl = next;
                let u = rng.random::<f64>() * p_click;
                let tag = if u < self.clicks.p_signal {
                    TruthTag::Signal
                } else if u < self.clicks.p_signal + self.clicks.p_qfc {
                    TruthTag::Qfc
                } else {
                    TruthTag::Dark
                };
                let rec = self.sample_click(rng, tag, start, tl.attempts);
                match tag {
                    TruthTag::Signal => n_sig += 1,
                    TruthTag::Qfc => n_qfc += 1,
                    TruthTag::Dark => n_dc += 1,
                }
                let k = s.settings.iter().position(|x| x.label == rec.setting).unwrap_or(0);
                let port = if rec.photon_port == s.settings[k].photon.port_names()[0] {
                    PhotonPort::Plus
                } else {
                    PhotonPort::Minus
                };
                tallies[k].add(port, rec.atom_outcome.into());
                records.push(rec);
                // Herald: second transfer, readout, then the trap ramps back.
                tl.attempts += 1;
                tl.time_us = start + d.attempt + self.config.timing.raman_us + s.readout_us + d.ramp_back;
                tl.pos = 0;
                tl.cooled = false;
            }
        } else if max_active_us.is_finite() {
            // Nothing ever clicks: spend the whole budget on attempts.
            tl = self.advance_until(tl, u64::MAX, max_active_us);
            tl.time_us = max_active_us;
        }

        let events = records.len() as u64;
        Ok((
            RunSummary {
                seed: s.seed,
                generator: GENERATOR.to_string(),
                events,
                signal_events: n_sig,
                qfc_events: n_qfc,
                dark_events: n_dc,
                total_attempts: tl.attempts,
                cooling_cycles: tl.cycles,
                active_time_us: tl.time_us,
                duty_cycle: s.duty_cycle,
                wall_time_hours: tl.time_us / s.duty_cycle / 3.6e9,
                tallies,
            },
            records,
        ))
    }

    /// Advances by as many of `max_failures` failed attempts as complete
    /// before `limit_us`.
    fn advance_until(&self, tl: Timeline, max_failures: u64, limit_us: f64) -> Timeline {
        let fits = |k: u64| {
            let mut t = tl;
            t.fail(k, &self.durations);
            t.time_us <= limit_us
        };
        let (mut lo, mut hi) = (0u64, max_failures.min(1 << 52));
        if fits(hi) {
            lo = hi;
        } else {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if fits(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        let mut t = tl;
        t.fail(lo, &self.durations);
        t
    }
}

/// Fringe of one photon port across atomic analysis angles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortFringe {
    pub port: String,
    pub fit: FringeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelatorEstimate {
    pub label: String,
    pub counts: u64,
    pub correlator: f64,
    pub sigma: f64,
}

/// Physics numbers reduced from the per-setting tallies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub correlators: Vec<CorrelatorEstimate>,
    pub fringes: Vec<PortFringe>,
    pub mean_visibility: Option<f64>,
    pub mean_visibility_err: Option<f64>,
    pub fidelity_bound: Option<f64>,
    pub fidelity_bound_err: Option<f64>,
    pub chsh: Option<ChshResult>,
}

impl RunReport {
    /// Fringe visibilities are used when at least one photon basis has four
    /// or more equatorial analysis angles with counts; otherwise the mean of
    /// the setting correlators.
    pub fn from_tallies(
        settings: &[SettingSpec],
        tallies: &[SettingTally],
        chsh: Option<&[String; 4]>,
    ) -> Result<Self> {
        let mut correlators = Vec::new();
        for t in tallies {
            if t.total() == 0 {
                continue;
            }
            let (e, s) = t.same_different().correlator()?;
            correlators.push(CorrelatorEstimate {
                label: t.label.clone(),
                counts: t.total(),
                correlator: e,
                sigma: s,
            });
        }

        let mut fringes = Vec::new();
        for choice in [PhotonChoice::Lr, PhotonChoice::Hv, PhotonChoice::Da] {
            let members: Vec<(f64, &SettingTally)> = settings
                .iter()
                .zip(tallies)
                .filter(|(s, t)| s.photon == choice && t.total() > 0)
                .filter_map(|(s, t)| s.atom_angle_deg.map(|a| (a.to_radians(), t)))
                .collect();
            if members.len() < 4 {
                continue;
            }
            for (k, name) in choice.port_names().into_iter().enumerate() {
                let mut angles = Vec::new();
                let mut probs = Vec::new();
                let mut sig = Vec::new();
                for (a, t) in &members {
                    let n: u64 = t.counts[k].iter().sum();
                    if n == 0 {
                        continue;
                    }
                    let nf = n as f64;
                    let p = t.counts[k][0] as f64 / nf;
                    let pc = p.clamp(0.5 / nf, 1.0 - 0.5 / nf);
                    angles.push(*a);
                    probs.push(p);
                    sig.push((pc * (1.0 - pc) / nf).sqrt());
                }
                if angles.len() < 4 {
                    continue;
                }
                if let Ok(fit) = fit_sinusoid(&angles, &probs, Some(&sig)) {
                    fringes.push(PortFringe {
                        port: name.to_string(),
                        fit,
                    });
                }
            }
        }

        let (mean_visibility, mean_visibility_err) = if !fringes.is_empty() {
            let n = fringes.len() as f64;
            let v = fringes.iter().map(|f| f.fit.visibility).sum::<f64>() / n;
            let e = fringes.iter().map(|f| f.fit.visibility_err.powi(2)).sum::<f64>().sqrt() / n;
            (Some(v), Some(e))
        } else if !correlators.is_empty() {
            let n = correlators.len() as f64;
            let v = correlators.iter().map(|c| c.correlator).sum::<f64>() / n;
            let e = correlators.iter().map(|c| c.sigma.powi(2)).sum::<f64>().sqrt() / n;
            (Some(v), Some(e))
        } else {
            (None, None)
        };

        let chsh = match chsh {
            Some(labels) => {
                let find = |l: &String| {
                    tallies
                        .iter()
                        .find(|t| &t.label == l)
                        .map(|t| t.same_different())
                        .ok_or_else(|| Error::EmptySetting(l.clone()))
                };
                let counts = [
                    find(&labels[0])?,
                    find(&labels[1])?,
                    find(&labels[2])?,
                    find(&labels[3])?,
                ];
                if counts.iter().any(|c| c.total() == 0) {
                    None
                } else {
                    Some(chsh_from_counts(&counts)?)
                }
            }
            None => None,
        };

        Ok(Self {
            correlators,
            fringes,
            fidelity_bound: mean_visibility.map(fidelity_lower_bound),
            fidelity_bound_err: mean_visibility_err.map(|e| 5.0 / 6.0 * e),
            mean_visibility,
            mean_visibility_err,
            chsh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoherence::CoherenceParams;
    use crate::zeeman::{AtomicConstants, QubitBasis};

    pub(crate) fn config(length_km: f64) -> SequenceConfig {
        let k = AtomicConstants::default();
        SequenceConfig {
            link: LinkParams::default().at_length(length_km),
            timing: TimingBudget::default(),
            sequence: SequenceParams::default(),
            memory: CoherenceModel::new(QubitBasis::Memory, CoherenceParams::memory_default(), &k, 0.2445).unwrap(),
            initial: CoherenceModel::new(QubitBasis::Initial, CoherenceParams::initial_default(), &k, 0.2445).unwrap(),
        }
    }

    #[test]
    fn timeline_matches_step_by_step() {
        let d = Durations {
            attempt: 3.0,
            cooling: 100.0,
            ramp_back: 7.0,
            burst: 4,
        };
        for start_pos in 0..4u32 {
            for k in 0..30u64 {
                let mut fast = Timeline::new();
                fast.fail(start_pos as u64, &d);
                let mut slow = fast;
                fast.fail(k, &d);
                for _ in 0..k {
                    slow.fail(1, &d);
                }
                assert!((fast.time_us - slow.time_us).abs() < 1e-9, "pos {start_pos} k {k}");
                assert_eq!(fast.attempts, slow.attempts);
                assert_eq!(fast.cycles, slow.cycles);
            }
        }
    }

    #[test]
    fn ideal_channels_perfect_z_correlation() {
        let mut cfg = config(0.0);
        cfg.sequence.generation_leakage = 0.0;
        cfg.sequence.raman_transfer_efficiency = 1.0;
        cfg.sequence.readout_fidelity = 1.0;
        cfg.sequence.drift_depolarization = 0.0;
        let z = &three_basis_schedule()[0];
        let p = cfg.signal_outcomes(z, Channels::ALL).unwrap();
        assert!((p.correlator() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_clicks_no_records() {
        let mut cfg = config(50.0);
        cfg.link.collection_efficiency = 0.0;
        cfg.link.dark_count_rate_cps = 0.0;
        cfg.link.conversion_background_cps = 0.0;
        let sim = Simulator::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..1000 {
            assert!(sim.run_attempt(&mut rng, 0.0, i).is_none());
        }
        let (summary, records) = sim.run_campaign(StopCondition::WallHours(0.01)).unwrap();
        assert!(records.is_empty());
        assert!(summary.total_attempts > 0);
        assert!((summary.wall_time_hours - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_event_stop() {
        let sim = Simulator::new(&config(101.0)).unwrap();
        let (summary, records) = sim.run_campaign(StopCondition::Events(0)).unwrap();
        assert!(records.is_empty());
        assert_eq!(summary.events, 0);
    }

    #[test]
    fn tallies_sum_to_records() {
        let sim = Simulator::new(&config(50.0)).unwrap();
        let (summary, records) = sim.run_campaign(StopCondition::Events(300)).unwrap();
        let total: u64 = summary.tallies.iter().map(|t| t.total()).sum();
        assert_eq!(total, records.len() as u64);
        assert_eq!(
            summary.signal_events + summary.qfc_events + summary.dark_events,
            summary.events
        );
        assert!(records.windows(2).all(|w| w[0].time_us < w[1].time_us));
        assert!(records.windows(2).all(|w| w[0].attempt_idx < w[1].attempt_idx));
    }

    #[test]
    fn wall_hour_stop_respects_limit() {
        let sim = Simulator::new(&config(50.0)).unwrap();
        let (summary, _) = sim.run_campaign(StopCondition::WallHours(0.5)).unwrap();
        assert!((summary.wall_time_hours - 0.5).abs() < 1e-9);
        assert!(summary.events > 0);
    }

    #[test]
    fn rejects_impossible_herald_probability() {
        let mut cfg = config(0.0);
        cfg.link.collection_efficiency = 1.0;
        cfg.link.switch_efficiency = 1.0;
        cfg.link.conversion_efficiency = 1.0;
        cfg.link.filter_efficiency = 1.0;
        cfg.link.projection_efficiency = 1.0;
        cfg.link.connector_efficiency = 1.0;
        cfg.link.detector_efficiency = 1.0;
        cfg.link.window_fraction = 1.0;
        assert!(Simulator::new(&cfg).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut p = SequenceParams::default();
        p.settings.push(p.settings[0].clone());
        assert!(p.validate().is_err());
        let p = SequenceParams {
            chsh: Some(["Z".into(), "X".into(), "Y".into(), "W".into()]),
            ..SequenceParams::default()
        };
        assert!(p.validate().is_err());
        let mut p = SequenceParams::default();
        p.settings.clear();
        assert!(p.validate().is_err());
    }
}
