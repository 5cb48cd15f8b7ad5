//! Atom–photon density matrices and the channels that degrade them.
//!
//! The atom is a qutrit spanning the F=1 ground triplet and the photon a
//! polarisation qubit. Basis ordering is fixed so that matrices are
//! comparable across runs and implementations:
//!
//! | index | atom                     | photon |
//! |-------|--------------------------|--------|
//! | 0     | m_F = −1  (`|↓⟩_z`)      | `|L⟩`  |
//! | 1     | m_F = −1  (`|↓⟩_z`)      | `|R⟩`  |
//! | 2     | m_F = +1  (`|↑⟩_z`)      | `|L⟩`  |
//! | 3     | m_F = +1  (`|↑⟩_z`)      | `|R⟩`  |
//! | 4     | m_F = 0   (leakage)      | `|L⟩`  |
//! | 5     | m_F = 0   (leakage)      | `|R⟩`  |
//!
//! Measurement conventions: the photon "+" port of a linear basis at angle
//! θ_p is `(|L⟩ + e^{2iθ_p}|R⟩)/√2` (θ_p = 0 is H, 45° is D), the circular
//! basis "+" port is `|L⟩`. The atom "+" outcome along Bloch direction
//! (polar ϑ, azimuth β) is `cos(ϑ/2)|↓⟩ + e^{-iβ} sin(ϑ/2)|↑⟩`; ϑ = 0 is the
//! z basis with `|↓⟩` as "+". With these choices the ideal state gives
//! E = cos(2θ_p − β) on the equator and E_Z = +1.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{check_unit, Error, Result};

pub const DIM: usize = 6;

pub type Rho = SMatrix<Complex64, DIM, DIM>;
type Ket = SVector<Complex64, DIM>;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomLevel {
    Down = 0,
    Up = 1,
    Leak = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    L = 0,
    R = 1,
}

#[inline]
pub fn index(atom: AtomLevel, photon: Polarization) -> usize {
    2 * atom as usize + photon as usize
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Joint atom ⊗ photon density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomPhotonState {
    rho: Rho,
}

impl AtomPhotonState {
    /// Wraps a matrix after checking hermiticity, unit trace and positivity.
    pub fn new(rho: Rho) -> Result<Self> {
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    pub fn from_ket(ket: &[Complex64; DIM]) -> Result<Self> {
        let v = Ket::from_column_slice(ket);
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::State("zero or non-finite ket".into()));
        }
        let v = v / c(norm);
        Ok(Self { rho: v * v.adjoint() })
    }

    pub fn rho(&self) -> &Rho {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.rho - self.rho.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        // Symmetrise first so tiny anti-Hermitian round-off cannot leak in.
        let h = (self.rho + self.rho.adjoint()) * c(0.5);
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::State("non-finite matrix element".into()));
        }
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::State(format!("not Hermitian (max deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::State(format!("trace {tr} != 1")));
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::State(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Reduced atom state over (↓, ↑, 0).
    pub fn atom_marginal(&self) -> Matrix3<Complex64> {
        Matrix3::from_fn(|a, b| self.rho[(2 * a, 2 * b)] + self.rho[(2 * a + 1, 2 * b + 1)])
    }

    /// Reduced photon state over (L, R).
    pub fn photon_marginal(&self) -> Matrix2<Complex64> {
        Matrix2::from_fn(|p, q| (0..3).map(|a| self.rho[(2 * a + p, 2 * a + q)]).sum())
    }

    pub fn leakage_population(&self) -> f64 {
        self.atom_marginal()[(2, 2)].re
    }

    /// Overlap Tr(ρσ); equals the fidelity when either state is pure.
    pub fn overlap(&self, other: &AtomPhotonState) -> f64 {
        (self.rho * other.rho).trace().re
    }

    /// ⟨Ψ|ρ|Ψ⟩ for the ideal entangled state.
    pub fn fidelity_to_ideal(&self) -> f64 {
        self.overlap(&ideal_entangled_state())
    }

    /// Convex combination `w·self + (1−w)·other`.
    pub fn mix(&self, other: &AtomPhotonState, weight: f64) -> Result<Self> {
        let w = check_unit("weight", weight)?;
        Ok(Self {
            rho: self.rho * c(w) + other.rho * c(1.0 - w),
        })
    }

    /// Outer product of an atom state (3×3) and a photon state (2×2).
    pub fn product(atom: &Matrix3<Complex64>, photon: &Matrix2<Complex64>) -> Self {
        Self {
            rho: Rho::from_fn(|i, j| atom[(i / 2, j / 2)] * photon[(i % 2, j % 2)]),
        }
    }
}

/// `(|↓L⟩ + |↑R⟩)/√2`, with nothing in m_F = 0.
pub fn ideal_entangled_state() -> AtomPhotonState {
    let mut ket = [Complex64::new(0.0, 0.0); DIM];
    ket[index(AtomLevel::Down, Polarization::L)] = c(FRAC_1_SQRT_2);
    ket[index(AtomLevel::Up, Polarization::R)] = c(FRAC_1_SQRT_2);
    let v = Ket::from_column_slice(&ket);
    AtomPhotonState { rho: v * v.adjoint() }
}

/// Multiplies the coherences between different atomic levels by `v`.
///
/// The ↓/↑ coherences carry the physics; the coherences with the leakage
/// level are scaled by the same factor, which keeps the Schur multiplier
/// `[[1,v,v],[v,1,v],[v,v,1]]` positive and the channel completely positive.
pub fn apply_dephasing(state: &AtomPhotonState, visibility_factor: f64) -> Result<AtomPhotonState> {
    let visibility_factor = check_unit("visibility_factor", visibility_factor)?;
    let rho = Rho::from_fn(|i, j| {
        if i / 2 == j / 2 {
            state.rho[(i, j)]
        } else {
            state.rho[(i, j)] * visibility_factor
        }
    });
    Ok(AtomPhotonState { rho })
}

/// Applies the phase `e^{iφ}` to `|↑⟩_z` relative to `|↓⟩_z`.
pub fn apply_larmor(state: &AtomPhotonState, angle_rad: f64) -> AtomPhotonState {
    let phase = Complex64::from_polar(1.0, angle_rad);
    let diag = |i: usize| if i / 2 == AtomLevel::Up as usize { phase } else { c(1.0) };
    let rho = Rho::from_fn(|i, j| diag(i) * state.rho[(i, j)] * diag(j).conj());
    AtomPhotonState { rho }
}

/// `(1−p)ρ + p·(ρ_atom ⊗ I/2)`: a false herald with an unpolarised photon.
pub fn mix_uncorrelated_noise(state: &AtomPhotonState, probability: f64) -> Result<AtomPhotonState> {
    let probability = check_unit("p_noise", probability)?;
    let noise = AtomPhotonState::product(&state.atom_marginal(), &(Matrix2::identity() * c(0.5)));
    state.mix(&noise, 1.0 - probability)
}

/// `(1−p)ρ + p·(𝟙_qubit/2 ⊗ ρ_photon)`: the atomic qubit is replaced by a
/// fully mixed ↓/↑ state. Used for imperfect Raman transfers and lumped
/// residual visibility loss.
pub fn depolarize_atom(state: &AtomPhotonState, probability: f64) -> Result<AtomPhotonState> {
    let probability = check_unit("p_depolarize", probability)?;
    let mixed = Matrix3::from_diagonal(&nalgebra::Vector3::new(c(0.5), c(0.5), c(0.0)));
    let noise = AtomPhotonState::product(&mixed, &state.photon_marginal());
    state.mix(&noise, 1.0 - probability)
}

/// `(1−p)ρ + p·(|0⟩⟨0| ⊗ ρ_photon)`: population ends up in m_F = 0.
pub fn add_leakage(state: &AtomPhotonState, probability: f64) -> Result<AtomPhotonState> {
    let probability = check_unit("p_leak", probability)?;
    let mut leak = Matrix3::zeros();
    leak[(2, 2)] = c(1.0);
    let noise = AtomPhotonState::product(&leak, &state.photon_marginal());
    state.mix(&noise, 1.0 - probability)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonBasis {
    /// {L, R}; the "+" port is L.
    Circular,
    /// Linear polarisation basis; `angle` (rad) is the "+" port angle from H.
    Linear { angle: f64 },
}

impl PhotonBasis {
    pub const HV: PhotonBasis = PhotonBasis::Linear { angle: 0.0 };
    pub const DA: PhotonBasis = PhotonBasis::Linear {
        angle: std::f64::consts::FRAC_PI_4,
    };

    /// Amplitudes over (L, R) of the "+" and "−" ports.
    fn ports(&self) -> [[Complex64; 2]; 2] {
        match *self {
            PhotonBasis::Circular => [[c(1.0), c(0.0)], [c(0.0), c(1.0)]],
            PhotonBasis::Linear { angle } => {
                let e = Complex64::from_polar(FRAC_1_SQRT_2, 2.0 * angle);
                [[c(FRAC_1_SQRT_2), e], [c(FRAC_1_SQRT_2), -e]]
            }
        }
    }
}

/// Atomic analysis direction on the ↓/↑ Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomBasis {
    pub polar: f64,
    pub azimuth: f64,
}

impl AtomBasis {
    pub fn z() -> Self {
        Self {
            polar: 0.0,
            azimuth: 0.0,
        }
    }

    /// Equatorial direction for a readout analysis angle θ; the Bloch
    /// azimuth is 2θ, so 22.5° steps walk X → Y → −X → −Y → X over 180°.
    pub fn analysis_angle(theta: f64) -> Self {
        Self {
            polar: std::f64::consts::FRAC_PI_2,
            azimuth: 2.0 * theta,
        }
    }

    fn outcomes(&self) -> [[Complex64; 2]; 2] {
        let (s, co) = (0.5 * self.polar).sin_cos();
        let e = Complex64::from_polar(1.0, -self.azimuth);
        [[c(co), e * s], [c(s), -e * co]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSetting {
    pub photon: PhotonBasis,
    pub atom: AtomBasis,
}

impl MeasurementSetting {
    pub fn new(photon: PhotonBasis, atom: AtomBasis) -> Result<Self> {
        let angles = [
            atom.polar,
            atom.azimuth,
            match photon {
                PhotonBasis::Linear { angle } => angle,
                PhotonBasis::Circular => 0.0,
            },
        ];
        if let Some(&bad) = angles.iter().find(|a| !a.is_finite()) {
            return Err(Error::param("measurement angle", bad, "must be finite"));
        }
        Ok(Self { photon, atom })
    }

    /// Photon {L,R} with atom z.
    pub fn z() -> Self {
        Self {
            photon: PhotonBasis::Circular,
            atom: AtomBasis::z(),
        }
    }

    /// Photon {H,V} with atom X.
    pub fn x() -> Self {
        Self {
            photon: PhotonBasis::HV,
            atom: AtomBasis::analysis_angle(0.0),
        }
    }

    /// Photon {D,A} with atom Y.
    pub fn y() -> Self {
        Self {
            photon: PhotonBasis::DA,
            atom: AtomBasis::analysis_angle(std::f64::consts::FRAC_PI_4),
        }
    }

    /// Linear photon basis at `photon_angle` with equatorial atom analysis
    /// angle `atom_angle` (both rad).
    pub fn linear(photon_angle: f64, atom_angle: f64) -> Self {
        Self {
            photon: PhotonBasis::Linear { angle: photon_angle },
            atom: AtomBasis::analysis_angle(atom_angle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhotonPort {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomOutcome {
    Plus,
    Minus,
    Leak,
}

impl AtomOutcome {
    /// Whether this atom result agrees with the photon port. Leakage never
    /// agrees.
    pub fn matches(self, port: PhotonPort) -> bool {
        matches!(
            (self, port),
            (AtomOutcome::Plus, PhotonPort::Plus) | (AtomOutcome::Minus, PhotonPort::Minus)
        )
    }
}

/// Joint outcome distribution, indexed `[photon port][atom outcome]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointProbabilities(pub [[f64; 3]; 2]);

impl JointProbabilities {
    pub fn get(&self, port: PhotonPort, atom: AtomOutcome) -> f64 {
        self.0[port as usize][atom as usize]
    }

    pub fn p_same(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn correlator(&self) -> f64 {
        let total: f64 = self.0.iter().flatten().sum();
        2.0 * self.p_same() - total
    }

    /// Outcomes in a fixed order, for sampling.
    pub fn outcomes(&self) -> [((PhotonPort, AtomOutcome), f64); 6] {
        let mut out = [((PhotonPort::Plus, AtomOutcome::Plus), 0.0); 6];
        for (k, port) in [PhotonPort::Plus, PhotonPort::Minus].into_iter().enumerate() {
            for (m, atom) in [AtomOutcome::Plus, AtomOutcome::Minus, AtomOutcome::Leak]
                .into_iter()
                .enumerate()
            {
                out[3 * k + m] = ((port, atom), self.0[k][m]);
            }
        }
        out
    }
}

pub fn joint_probabilities(state: &AtomPhotonState, setting: &MeasurementSetting) -> JointProbabilities {
    let ports = setting.photon.ports();
    let atoms = setting.atom.outcomes();
    let mut out = [[0.0; 3]; 2];
    for (k, port) in ports.iter().enumerate() {
        for m in 0..3 {
            let mut ket = Ket::zeros();
            for p in 0..2 {
                if m < 2 {
                    for a in 0..2 {
                        ket[2 * a + p] = atoms[m][a] * port[p];
                    }
                } else {
                    ket[4 + p] = port[p];
                }
            }
            out[k][m] = (ket.adjoint() * state.rho * ket)[(0, 0)].re.max(0.0);
        }
    }
    JointProbabilities(out)
}

/// E = p(same) − p(different); leakage counts as different.
pub fn correlator(state: &AtomPhotonState, setting: &MeasurementSetting) -> f64 {
    joint_probabilities(state, setting).correlator()
}

/// |E₁ + E₂ + E₃ − E₄|.
pub fn chsh_s(state: &AtomPhotonState, settings: &[MeasurementSetting; 4]) -> f64 {
    let e: Vec<f64> = settings.iter().map(|s| correlator(state, s)).collect();
    (e[0] + e[1] + e[2] - e[3]).abs()
}

/// Settings reaching 2√2 on the ideal state: photon H/V and D/A, atom
/// analysis angles ±22.5°.
pub fn chsh_optimal_settings() -> [MeasurementSetting; 4] {
    use std::f64::consts::FRAC_PI_4;
    let b = FRAC_PI_4 / 2.0;
    [
        MeasurementSetting::linear(0.0, b),
        MeasurementSetting::linear(0.0, -b),
        MeasurementSetting::linear(FRAC_PI_4, b),
        MeasurementSetting::linear(FRAC_PI_4, -b),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn max_diff(a: &AtomPhotonState, b: &AtomPhotonState) -> f64 {
        (a.rho() - b.rho()).camax()
    }

    #[test]
    fn ideal_state_is_pure_and_correlated() {
        let s = ideal_entangled_state();
        s.validate().unwrap();
        assert_close(s.trace(), 1.0, 1e-15);
        assert_close(s.purity(), 1.0, 1e-15);
        assert_close(s.fidelity_to_ideal(), 1.0, 1e-15);
        assert_close(s.leakage_population(), 0.0, 0.0);
        assert_close(correlator(&s, &MeasurementSetting::z()), 1.0, 1e-15);
        assert_close(correlator(&s, &MeasurementSetting::x()), 1.0, 1e-15);
        assert_close(correlator(&s, &MeasurementSetting::y()), 1.0, 1e-15);
    }

    #[test]
    fn dephasing_examples() {
        let s = ideal_entangled_state();
        assert_eq!(apply_dephasing(&s, 1.0).unwrap(), s);

        let full = apply_dephasing(&s, 0.0).unwrap();
        assert_close(correlator(&full, &MeasurementSetting::z()), 1.0, 1e-15);
        assert_close(correlator(&full, &MeasurementSetting::x()), 0.0, 1e-15);
        assert_close(correlator(&full, &MeasurementSetting::y()), 0.0, 1e-15);

        let part = apply_dephasing(&s, 0.818).unwrap();
        assert_close(correlator(&part, &MeasurementSetting::x()), 0.818, 1e-14);
        assert_close(correlator(&part, &MeasurementSetting::y()), 0.818, 1e-14);
        assert_close(correlator(&part, &MeasurementSetting::z()), 1.0, 1e-14);

        assert!(apply_dephasing(&s, 1.2).is_err());
        assert!(apply_dephasing(&s, -0.1).is_err());
    }

    #[test]
    fn larmor_examples() {
        let s = ideal_entangled_state();
        assert!(max_diff(&apply_larmor(&s, 0.0), &s) < 1e-15);
        let flipped = apply_larmor(&s, PI);
        assert_close(correlator(&flipped, &MeasurementSetting::x()), -1.0, 1e-12);
        assert_close(correlator(&flipped, &MeasurementSetting::z()), 1.0, 1e-12);
        assert!(max_diff(&apply_larmor(&s, 2.0 * PI), &s) < 1e-12);
        assert_close(apply_larmor(&s, 0.7).purity(), 1.0, 1e-12);
    }

    #[test]
    fn noise_examples() {
        let s = ideal_entangled_state();
        assert_eq!(mix_uncorrelated_noise(&s, 0.0).unwrap(), s);
        let full = mix_uncorrelated_noise(&s, 1.0).unwrap();
        for setting in [
            MeasurementSetting::x(),
            MeasurementSetting::y(),
            MeasurementSetting::z(),
        ] {
            assert_close(correlator(&full, &setting), 0.0, 1e-15);
        }
        let p = 1.0 / (1.0 + 11.8);
        let noisy = mix_uncorrelated_noise(&s, p).unwrap();
        let e = correlator(&noisy, &MeasurementSetting::x());
        assert_close(e, 1.0 - p, 1e-14);
        assert_close(e, 0.922, 5e-4);
        assert!(mix_uncorrelated_noise(&s, 1.5).is_err());
    }

    #[test]
    fn fringe_follows_cos_two_theta() {
        let s = ideal_entangled_state();
        for k in 0..=16 {
            let theta = k as f64 * PI / 8.0;
            let e = correlator(&s, &MeasurementSetting::linear(0.0, theta));
            assert_close(e, (2.0 * theta).cos(), 1e-12);
        }
        let e45 = correlator(&s, &MeasurementSetting::linear(0.0, FRAC_PI_4));
        assert_close(e45, 0.0, 1e-12);
    }

    #[test]
    fn dephased_average_gives_fidelity_bound_input() {
        let s = apply_dephasing(&ideal_entangled_state(), 0.65).unwrap();
        let s = depolarize_atom(&s, 0.0).unwrap();
        let ex = correlator(&s, &MeasurementSetting::x());
        let ey = correlator(&s, &MeasurementSetting::y());
        assert_close(ex, 0.65, 1e-12);
        assert_close(ey, 0.65, 1e-12);
        // Depolarise instead so that Z is degraded equally.
        let s = depolarize_atom(&ideal_entangled_state(), 0.35).unwrap();
        let vbar = [
            MeasurementSetting::x(),
            MeasurementSetting::y(),
            MeasurementSetting::z(),
        ]
        .iter()
        .map(|m| correlator(&s, m))
        .sum::<f64>()
            / 3.0;
        assert_close(vbar, 0.65, 1e-12);
        assert_close(1.0 / 6.0 + 5.0 / 6.0 * vbar, 0.708, 5e-4);
    }

    #[test]
    fn chsh_examples() {
        let settings = chsh_optimal_settings();
        let s = ideal_entangled_state();
        assert_close(chsh_s(&s, &settings), 2.0 * 2f64.sqrt(), 1e-9);
        let dephased = apply_dephasing(&s, 0.0).unwrap();
        assert!(chsh_s(&dephased, &settings) <= 2.0 + 1e-12);
        let v = 0.80;
        let partial = apply_dephasing(&s, v).unwrap();
        assert_close(chsh_s(&partial, &settings), 2.259, 0.05);
    }

    #[test]
    fn leakage_counts_as_different() {
        let s = add_leakage(&ideal_entangled_state(), 0.2).unwrap();
        s.validate().unwrap();
        assert_close(s.leakage_population(), 0.2, 1e-15);
        assert_close(correlator(&s, &MeasurementSetting::z()), 0.8 - 0.2, 1e-14);
        let jp = joint_probabilities(&s, &MeasurementSetting::x());
        let total: f64 = jp.0.iter().flatten().sum();
        assert_close(total, 1.0, 1e-14);
    }

    #[test]
    fn marginals_of_ideal_state() {
        let s = ideal_entangled_state();
        let a = s.atom_marginal();
        assert_close(a[(0, 0)].re, 0.5, 1e-15);
        assert_close(a[(1, 1)].re, 0.5, 1e-15);
        assert_close(a[(0, 1)].norm(), 0.0, 1e-15);
        let p = s.photon_marginal();
        assert_close(p[(0, 0)].re, 0.5, 1e-15);
        assert_close(p[(0, 1)].norm(), 0.0, 1e-15);
    }

    #[test]
    fn invalid_states_rejected() {
        let mut rho = *ideal_entangled_state().rho();
        rho[(0, 0)] += c(0.1);
        assert!(AtomPhotonState::new(rho).is_err());
        let mut rho = Rho::zeros();
        rho[(0, 0)] = c(1.5);
        rho[(1, 1)] = c(-0.5);
        assert!(AtomPhotonState::new(rho).is_err());
        assert!(MeasurementSetting::new(
            PhotonBasis::Circular,
            AtomBasis {
                polar: f64::NAN,
                azimuth: 0.0
            }
        )
        .is_err());
        let _ = FRAC_PI_2;
    }
}
