//! Reduction of counts to visibilities, coherence times, fidelity bounds and
//! CHSH values.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::decoherence::FringeSample;
use crate::error::{check_unit, Error, Result};
use crate::fit::levenberg_marquardt;

/// p(θ) = offset + amplitude·cos(2(θ − phase)), amplitude ≥ 0,
/// phase ∈ [0, π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub offset: f64,
    pub phase: f64,
    pub visibility: f64,
    pub amplitude_err: f64,
    pub offset_err: f64,
    pub phase_err: f64,
    pub visibility_err: f64,
    pub chi2: f64,
}

impl FringeFit {
    pub fn eval(&self, theta: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * (theta - self.phase)).cos()
    }
}

/// v(t) = v0·exp(−t/T2). A non-decaying data set gives `t2_us = +∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub t2_us: f64,
    pub v0: f64,
    pub t2_err: f64,
    pub v0_err: f64,
    pub decaying: bool,
}

fn sigma(var: f64) -> f64 {
    if var.is_finite() && var >= 0.0 {
        var.sqrt()
    } else {
        f64::NAN
    }
}

/// Least-squares sinusoid through `(angle, p)` points. `sigmas` weights the
/// points when given.
pub fn fit_sinusoid(angles: &[f64], values: &[f64], sigmas: Option<&[f64]>) -> Result<FringeFit> {
    if angles.len() != values.len() {
        return Err(Error::Fit("angles and values differ in length".into()));
    }
    if angles.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", angles.len())));
    }
    if angles.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input".into()));
    }
    let lo = angles.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = angles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // The fringe period in θ is π; require at least half of it.
    if hi - lo < FRAC_PI_2 - 1e-12 {
        return Err(Error::Fit(format!("angles span {:.4} rad, need at least π/2", hi - lo)));
    }

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (imax, vmax) = values.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
    );
    let vmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let p0 = DVector::from_vec(vec![mean, 0.5 * (vmax - vmin), angles[imax]]);

    let model = |theta: f64, p: &[f64], g: &mut [f64]| {
        let arg = 2.0 * (theta - p[2]);
        let (s, c) = arg.sin_cos();
        g[0] = 1.0;
        g[1] = c;
        g[2] = 2.0 * p[1] * s;
        p[0] + p[1] * c
    };
    let fit = levenberg_marquardt(&model, angles, values, sigmas, p0)?;
    let (offset, mut amplitude, mut phase) = (fit.params[0], fit.params[1], fit.params[2]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += FRAC_PI_2;
    }
    phase = phase.rem_euclid(PI);

    let cov = &fit.covariance;
    let (var_o, var_a, var_p, cov_oa) = (cov[(0, 0)], cov[(1, 1)], cov[(2, 2)], cov[(0, 1)]);
    let visibility = if offset != 0.0 { amplitude / offset } else { f64::NAN };
    let visibility_err = if amplitude > 0.0 && offset != 0.0 {
        let rel = var_a / (amplitude * amplitude) + var_o / (offset * offset) - 2.0 * cov_oa / (amplitude * offset);
        visibility.abs() * sigma(rel.max(0.0))
    } else {
        sigma(var_a) / offset.abs()
    };
    Ok(FringeFit {
        amplitude,
        offset,
        phase,
        visibility,
        amplitude_err: sigma(var_a),
        offset_err: sigma(var_o),
        phase_err: sigma(var_p),
        visibility_err,
        chi2: fit.chi2,
    })
}

/// Least-squares exponential decay through `(t, v)` points with strictly
/// increasing `t`.
pub fn fit_exponential(times_us: &[f64], values: &[f64], sigmas: Option<&[f64]>) -> Result<DecayFit> {
    if times_us.len() != values.len() {
        return Err(Error::Fit("times and values differ in length".into()));
    }
    if times_us.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", times_us.len())));
    }
    if times_us.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Fit("times must be strictly increasing".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input".into()));
    }

    // Two-point log slope between the first and last positive values.
    let positive: Vec<(f64, f64)> = times_us
        .iter()
        .cloned()
        .zip(values.iter().cloned())
        .filter(|p| p.1 > 0.0)
        .collect();
    let (v0_init, rate_init) = match (positive.first(), positive.last()) {
        (Some(&(t0, v0)), Some(&(t1, v1))) if t1 > t0 => {
            let k = (v0 / v1).ln() / (t1 - t0);
            (v0 * (k * t0).exp(), k)
        }
        _ => (values[0], 0.0),
    };

    let model = |t: f64, p: &[f64], g: &mut [f64]| {
        let e = (-p[1] * t).exp();
        g[0] = e;
        g[1] = -p[0] * t * e;
        p[0] * e
    };
    let fit = levenberg_marquardt(
        &model,
        times_us,
        values,
        sigmas,
        DVector::from_vec(vec![v0_init, rate_init]),
    )?;
    let (v0, rate) = (fit.params[0], fit.params[1]);
    let v0_err = sigma(fit.covariance[(0, 0)]);
    if rate <= 0.0 {
        log::warn!("coherence data do not decay (rate {rate:.3e} /µs); reporting T2 = inf");
        return Ok(DecayFit {
            t2_us: f64::INFINITY,
            v0,
            t2_err: f64::INFINITY,
            v0_err,
            decaying: false,
        });
    }
    let t2_us = 1.0 / rate;
    Ok(DecayFit {
        t2_us,
        v0,
        t2_err: sigma(fit.covariance[(1, 1)]) * t2_us * t2_us,
        v0_err,
        decaying: true,
    })
}

/// Visibility of one delay in a coherence scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityPoint {
    pub delay_us: f64,
    pub visibility: f64,
    pub visibility_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceFit {
    pub points: Vec<VisibilityPoint>,
    pub decay: DecayFit,
}

/// Fits a sinusoid per delay, then an exponential through the visibilities.
pub fn fit_coherence_scan(samples: &[FringeSample]) -> Result<CoherenceFit> {
    let mut delays: Vec<f64> = samples.iter().map(|s| s.delay_us).collect();
    delays.sort_by(f64::total_cmp);
    delays.dedup();
    let mut points = Vec::with_capacity(delays.len());
    for &d in &delays {
        let group: Vec<&FringeSample> = samples.iter().filter(|s| s.delay_us == d).collect();
        let angles: Vec<f64> = group.iter().map(|s| s.angle_rad).collect();
        let probs: Vec<f64> = group.iter().map(|s| s.probability()).collect();
        let sig: Vec<f64> = group
            .iter()
            .map(|s| {
                let n = s.shots.max(1) as f64;
                let p = s.probability().clamp(0.5 / n, 1.0 - 0.5 / n);
                (p * (1.0 - p) / n).sqrt()
            })
            .collect();
        let fit = fit_sinusoid(&angles, &probs, Some(&sig))?;
        points.push(VisibilityPoint {
            delay_us: d,
            visibility: fit.visibility,
            visibility_err: fit.visibility_err,
        });
    }
    let t: Vec<f64> = points.iter().map(|p| p.delay_us).collect();
    let v: Vec<f64> = points.iter().map(|p| p.visibility).collect();
    let s: Vec<f64> = points.iter().map(|p| p.visibility_err.max(1e-6)).collect();
    let decay = fit_exponential(&t, &v, Some(&s))?;
    Ok(CoherenceFit { points, decay })
}

/// F ≥ 1/6 + 5/6·V̄, clamped to [0, 1].
pub fn fidelity_lower_bound(mean_visibility: f64) -> f64 {
    (1.0 / 6.0 + 5.0 / 6.0 * mean_visibility).clamp(0.0, 1.0)
}

/// Coincidences in one setting, split into equal and opposite outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub label: String,
    pub same: u64,
    pub different: u64,
}

impl SettingCounts {
    pub fn total(&self) -> u64 {
        self.same + self.different
    }

    /// (E, σ_E) with σ_E² = (1 − E²)/N.
    pub fn correlator(&self) -> Result<(f64, f64)> {
        let n = self.total();
        if n == 0 {
            return Err(Error::EmptySetting(self.label.clone()));
        }
        let n = n as f64;
        let e = (self.same as f64 - self.different as f64) / n;
        Ok((e, ((1.0 - e * e) / n).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChshResult {
    pub s: f64,
    pub sigma: f64,
    pub correlators: [f64; 4],
    pub correlator_errs: [f64; 4],
}

/// S = |E₁ + E₂ + E₃ − E₄| with independent binomial errors.
pub fn chsh_from_counts(counts: &[SettingCounts; 4]) -> Result<ChshResult> {
    let mut correlators = [0.0; 4];
    let mut correlator_errs = [0.0; 4];
    for (i, c) in counts.iter().enumerate() {
        (correlators[i], correlator_errs[i]) = c.correlator()?;
    }
    Ok(ChshResult {
        s: chsh_from_correlators(&correlators),
        sigma: correlator_errs.iter().map(|s| s * s).sum::<f64>().sqrt(),
        correlators,
        correlator_errs,
    })
}

pub fn chsh_from_correlators(correlators: &[f64; 4]) -> f64 {
    (correlators[0] + correlators[1] + correlators[2] - correlators[3]).abs()
}

/// Fractional visibility losses by mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBudget {
    pub snr_readout: f64,
    pub decoherence: f64,
    pub raman_transfers: f64,
    pub readout: f64,
    pub entanglement_generation: f64,
    pub readout_timing: f64,
    pub drifts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    /// V̄ = ∏(1 − eᵢ)
    #[default]
    Multiplicative,
    /// V̄ = 1 − Σeᵢ
    Additive,
}

impl ErrorBudget {
    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("snr_readout", self.snr_readout),
            ("decoherence", self.decoherence),
            ("raman_transfers", self.raman_transfers),
            ("readout", self.readout),
            ("entanglement_generation", self.entanglement_generation),
            ("readout_timing", self.readout_timing),
            ("drifts", self.drifts),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.terms() {
            check_unit(name, v)?;
        }
        Ok(())
    }

    pub fn predicted_visibility(&self, rule: Composition) -> f64 {
        let terms = self.terms().map(|t| t.1);
        match rule {
            Composition::Multiplicative => terms.iter().map(|e| 1.0 - e).product(),
            Composition::Additive => 1.0 - terms.iter().sum::<f64>(),
        }
    }
}

/// Fidelity bound implied by the budget under the chosen composition rule.
pub fn compose_error_budget(budget: &ErrorBudget, rule: Composition) -> Result<f64> {
    budget.validate()?;
    Ok(fidelity_lower_bound(budget.predicted_visibility(rule)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, span: f64) -> Vec<f64> {
        (0..n).map(|i| span * i as f64 / n as f64).collect()
    }

    #[test]
    fn sinusoid_exact_recovery() {
        let angles = grid(8, PI);
        let (o, a, ph) = (0.47, 0.31, 0.6);
        let vals: Vec<f64> = angles.iter().map(|t| o + a * (2.0 * (t - ph)).cos()).collect();
        let f = fit_sinusoid(&angles, &vals, None).unwrap();
        assert!((f.offset - o).abs() < 1e-9 * o);
        assert!((f.amplitude - a).abs() < 1e-9 * a);
        assert!((f.phase - ph).abs() < 1e-9);
        assert!((f.visibility - a / o).abs() < 1e-9);
    }

    #[test]
    fn sinusoid_constant_data() {
        let angles = grid(8, PI);
        let f = fit_sinusoid(&angles, &[0.5; 8], None).unwrap();
        assert!(f.amplitude.abs() < 1e-9 && f.visibility.abs() < 1e-9);
    }

    #[test]
    fn sinusoid_scale_invariance() {
        let angles = grid(8, PI);
        let vals = [0.91, 0.8, 0.52, 0.2, 0.08, 0.22, 0.49, 0.77];
        let a = fit_sinusoid(&angles, &vals, None).unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| v * 37.0).collect();
        let b = fit_sinusoid(&angles, &scaled, None).unwrap();
        assert!((a.visibility - b.visibility).abs() < 1e-9);
        assert!((a.phase - b.phase).abs() < 1e-9);
    }

    #[test]
    fn sinusoid_rejects_degenerate_input() {
        assert!(fit_sinusoid(&[0.0, 0.1, 0.2], &[0.1, 0.2, 0.3], None).is_err());
        let narrow = grid(8, 1.0);
        assert!(fit_sinusoid(&narrow, &[0.5; 8], None).is_err());
    }

    #[test]
    fn exponential_exact_recovery() {
        let t: Vec<f64> = (0..10).map(|i| 150.0 * i as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| 0.84 * (-t / 450.0).exp()).collect();
        let f = fit_exponential(&t, &v, None).unwrap();
        assert!((f.t2_us / 450.0 - 1.0).abs() < 1e-9);
        assert!((f.v0 / 0.84 - 1.0).abs() < 1e-9);
        assert!(f.decaying);
    }

    #[test]
    fn exponential_non_decaying() {
        let f = fit_exponential(&[0.0, 1.0, 2.0, 3.0], &[0.5, 0.52, 0.55, 0.56], None).unwrap();
        assert!(f.t2_us.is_infinite() && !f.decaying);
        assert!(fit_exponential(&[0.0, 1.0], &[0.5, 0.4], None).is_err());
        assert!(fit_exponential(&[0.0, 1.0, 1.0], &[0.5, 0.4, 0.3], None).is_err());
    }

    #[test]
    fn fidelity_bound_examples() {
        assert!((fidelity_lower_bound(0.818) - 0.848).abs() < 5e-4);
        assert!((fidelity_lower_bound(0.650) - 0.708).abs() < 5e-4);
        assert_eq!(fidelity_lower_bound(1.0), 1.0);
        assert_eq!(fidelity_lower_bound(-1.0), 0.0);
    }

    #[test]
    fn chsh_matches_correlators() {
        let counts = [
            SettingCounts {
                label: "a".into(),
                same: 90,
                different: 10,
            },
            SettingCounts {
                label: "b".into(),
                same: 80,
                different: 20,
            },
            SettingCounts {
                label: "c".into(),
                same: 85,
                different: 15,
            },
            SettingCounts {
                label: "d".into(),
                same: 15,
                different: 85,
            },
        ];
        let r = chsh_from_counts(&counts).unwrap();
        assert_eq!(r.s, chsh_from_correlators(&r.correlators));
        assert!((r.s - (0.8 + 0.6 + 0.7 + 0.7)).abs() < 1e-12);
        let mut empty = counts.clone();
        empty[2] = SettingCounts {
            label: "c".into(),
            same: 0,
            different: 0,
        };
        assert!(matches!(chsh_from_counts(&empty), Err(Error::EmptySetting(_))));
    }

    #[test]
    fn budget_composition() {
        assert_eq!(
            compose_error_budget(&ErrorBudget::default(), Composition::Multiplicative).unwrap(),
            1.0
        );
        let one = ErrorBudget {
            drifts: 0.04,
            ..Default::default()
        };
        let f = compose_error_budget(&one, Composition::Multiplicative).unwrap();
        assert!((f - (1.0 / 6.0 + 5.0 / 6.0 * 0.96)).abs() < 1e-15);
        assert_eq!(f, compose_error_budget(&one, Composition::Additive).unwrap());
        assert!(compose_error_budget(
            &ErrorBudget {
                readout: 1.5,
                ..Default::default()
            },
            Composition::Additive
        )
        .is_err());
    }

    #[test]
    fn reported_loss_terms() {
        let b = ErrorBudget {
            snr_readout: 0.066,
            decoherence: 0.050,
            raman_transfers: 0.049,
            readout: 0.047,
            entanglement_generation: 0.011,
            readout_timing: 0.008,
            drifts: 0.040,
        };
        let mult = compose_error_budget(&b, Composition::Multiplicative).unwrap();
        let add = compose_error_budget(&b, Composition::Additive).unwrap();
        assert!((mult - 0.7978).abs() < 5e-4, "{mult}");
        assert!((add - 0.7742).abs() < 5e-4, "{add}");
        assert!(add < mult);
    }
}
