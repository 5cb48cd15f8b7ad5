//! Strategies and property checks shared by the property suites and the
//! acceptance run.
#![allow(dead_code)]

use atomlink::config::ScenarioConfig;
use atomlink::link::LinkParams;
use atomlink::qstate::*;
use atomlink::rate::{entanglement_rate, TimingBudget};
use atomlink::seqsim::{Channels, SequenceConfig, Simulator, StopCondition};
use num_complex::Complex64;
use proptest::prelude::*;

pub const TOL: f64 = 1e-10;

/// ρ = AA†/Tr(AA†) for a random complex A; covers mixed and near-pure states.
pub fn arb_state() -> impl Strategy<Value = AtomPhotonState> {
    prop::collection::vec(-1.0f64..1.0, 2 * DIM * DIM).prop_filter_map("degenerate", |xs| {
        let a = Rho::from_fn(|i, j| Complex64::new(xs[2 * (i * DIM + j)], xs[2 * (i * DIM + j) + 1]));
        let m = a * a.adjoint();
        let tr = m.trace().re;
        (tr > 1e-6)
            .then(|| AtomPhotonState::new(m / Complex64::new(tr, 0.0)).ok())
            .flatten()
    })
}

pub fn assert_physical(s: &AtomPhotonState) -> Result<(), TestCaseError> {
    prop_assert!((s.trace() - 1.0).abs() < TOL, "trace {}", s.trace());
    prop_assert!(s.hermiticity_error() < TOL);
    prop_assert!(s.min_eigenvalue() > -TOL, "eigenvalue {}", s.min_eigenvalue());
    Ok(())
}

pub fn distance(a: &AtomPhotonState, b: &AtomPhotonState) -> f64 {
    (a.rho() - b.rho()).norm()
}

pub fn check_channels_physical(s: &AtomPhotonState, p: f64, phi: f64) -> Result<(), TestCaseError> {
    assert_physical(&apply_dephasing(s, p).unwrap())?;
    assert_physical(&apply_larmor(s, phi))?;
    assert_physical(&mix_uncorrelated_noise(s, p).unwrap())?;
    assert_physical(&depolarize_atom(s, p).unwrap())?;
    assert_physical(&add_leakage(s, p).unwrap())?;
    Ok(())
}

pub fn check_semigroups(s: &AtomPhotonState, a: f64, b: f64, x: f64, y: f64) -> Result<(), TestCaseError> {
    let twice = apply_dephasing(&apply_dephasing(s, a).unwrap(), b).unwrap();
    prop_assert!(distance(&twice, &apply_dephasing(s, a * b).unwrap()) < TOL);

    let twice = apply_larmor(&apply_larmor(s, x), y);
    prop_assert!(distance(&twice, &apply_larmor(s, x + y)) < TOL);

    let joint = 1.0 - (1.0 - a) * (1.0 - b);
    let twice = depolarize_atom(&depolarize_atom(s, a).unwrap(), b).unwrap();
    prop_assert!(distance(&twice, &depolarize_atom(s, joint).unwrap()) < TOL);

    let twice = mix_uncorrelated_noise(&mix_uncorrelated_noise(s, a).unwrap(), b).unwrap();
    prop_assert!(distance(&twice, &mix_uncorrelated_noise(s, joint).unwrap()) < TOL);

    let twice = add_leakage(&add_leakage(s, a).unwrap(), b).unwrap();
    prop_assert!(distance(&twice, &add_leakage(s, joint).unwrap()) < TOL);
    Ok(())
}

pub fn arb_link() -> impl Strategy<Value = LinkParams> {
    (
        0.01f64..1.0,
        0.01f64..1.0,
        0.05f64..0.5,
        0.0f64..20.0,
        0.0f64..2000.0,
        1.0f64..200.0,
        1u32..5,
    )
        .prop_map(
            |(collection, conversion, attenuation, dark, background, window, detectors)| LinkParams {
                collection_efficiency: collection,
                conversion_efficiency: conversion,
                attenuation_db_per_km: attenuation,
                dark_count_rate_cps: dark,
                conversion_background_cps: background,
                window_ns: window,
                n_detectors: detectors,
                ..LinkParams::default()
            },
        )
}

pub fn check_link_monotone(link: &LinkParams, short: f64, extra: f64) -> Result<(), TestCaseError> {
    let near = link.at_length(short);
    let far = link.at_length(short + extra);
    prop_assert!(far.transmission().unwrap() <= near.transmission().unwrap());
    prop_assert!(far.signal_click_probability().unwrap() <= near.signal_click_probability().unwrap());
    let (qfc_near, dc_near) = near.noise_click_probabilities().unwrap();
    let (qfc_far, dc_far) = far.noise_click_probabilities().unwrap();
    prop_assert!(qfc_far <= qfc_near);
    prop_assert_eq!(dc_far, dc_near);
    prop_assert!(far.snr().unwrap() <= near.snr().unwrap() * (1.0 + 1e-12));
    prop_assert!(far.travel_time_us().unwrap() >= near.travel_time_us().unwrap());
    let budget = TimingBudget::default();
    let r_near = entanglement_rate(&budget, &near, 0.5).unwrap();
    let r_far = entanglement_rate(&budget, &far, 0.5).unwrap();
    prop_assert!(r_far.attempt_period_us >= r_near.attempt_period_us);
    prop_assert!(r_far.rate_per_s <= r_near.rate_per_s);
    Ok(())
}

pub fn scenario(length_km: f64, dark_cps: f64, seed: u64) -> SequenceConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.link.length_km = length_km;
    cfg.link.dark_count_rate_cps = dark_cps;
    cfg.sequence.seed = seed;
    cfg.sequence_config().unwrap()
}

/// Analytic probability that a click lands in a same-outcome cell, averaged
/// over the schedule weights and the signal/noise mix.
pub fn expected_same_fraction(cfg: &SequenceConfig) -> f64 {
    let clicks = cfg.clicks().unwrap();
    let specs = &cfg.sequence.settings;
    let total_weight: f64 = specs.iter().map(|s| s.weight).sum();
    specs
        .iter()
        .map(|s| {
            let sig = cfg.signal_outcomes(s, Channels::ALL).unwrap().p_same();
            let noise = cfg.noise_outcomes(s, Channels::ALL).unwrap().p_same();
            s.weight / total_weight * (clicks.p_signal * sig + clicks.noise() * noise) / clicks.total()
        })
        .sum()
}

pub fn within_sigmas(observed: f64, expected: f64, n: f64, sigmas: f64) -> bool {
    let sd = (expected * (1.0 - expected) / n).sqrt();
    (observed - expected).abs() <= sigmas * sd + 1e-12
}

pub fn check_determinism(length: f64, seed: u64, events: u64) -> Result<(), TestCaseError> {
    let cfg = scenario(length, 5.24, seed);
    let sim = Simulator::new(&cfg).unwrap();
    let a = sim.run_campaign(StopCondition::Events(events)).unwrap();
    let b = sim.run_campaign(StopCondition::Events(events)).unwrap();
    prop_assert_eq!(&a.0, &b.0);
    prop_assert_eq!(&a.1, &b.1);
    prop_assert_eq!(a.1.len() as u64, events);
    prop_assert!(a
        .1
        .windows(2)
        .all(|w| w[0].time_us <= w[1].time_us && w[0].attempt_idx < w[1].attempt_idx));
    Ok(())
}

/// Noise fraction, same-outcome fraction and attempt count of a 400-event
/// campaign against their analytic values, at 5σ.
pub fn check_convergence(length: f64, dark: f64, seed: u64) -> Result<(), TestCaseError> {
    let cfg = scenario(length, dark, seed);
    let sim = Simulator::new(&cfg).unwrap();
    let n = 400u64;
    let (summary, records) = sim.run_campaign(StopCondition::Events(n)).unwrap();
    let clicks = cfg.clicks().unwrap();
    let nf = n as f64;

    let noise_expected = clicks.noise() / clicks.total();
    prop_assert!(
        within_sigmas(summary.noise_fraction(), noise_expected, nf, 5.0),
        "noise fraction {} vs {}",
        summary.noise_fraction(),
        noise_expected
    );

    let same = summary.tallies.iter().map(|t| t.same_different().same).sum::<u64>() as f64 / nf;
    let same_expected = expected_same_fraction(&cfg);
    prop_assert!(
        within_sigmas(same, same_expected, nf, 5.0),
        "same fraction {} vs {}",
        same,
        same_expected
    );

    // Attempts until n clicks: negative binomial with mean n/p.
    let p = clicks.total();
    let mean = nf / p;
    let sd = (nf * (1.0 - p)).sqrt() / p;
    prop_assert!(
        (summary.total_attempts as f64 - mean).abs() <= 5.0 * sd,
        "attempts {} vs {}",
        summary.total_attempts,
        mean
    );
    prop_assert_eq!(records.len() as u64, n);
    Ok(())
}
