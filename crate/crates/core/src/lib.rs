//! Simulation and link-budget engine for entanglement distribution between a
//! single trapped ⁸⁷Rb atom and a frequency-converted telecom photon.
//!
//! The crate is organised bottom-up:
//!
//! - [`qstate`]: 6×6 atom-qutrit ⊗ photon-polarisation density matrices, noise
//!   channels, correlators and CHSH.
//! - [`zeeman`]: Breit–Rabi ground-state energies and qubit field sensitivities.
//! - [`raman`]: Zeeman-state-selective Raman transfer (closed-form effective
//!   two-level model plus an exact full-level propagator).
//! - [`decoherence`]: visibility decay and Larmor precession of the stored qubit.
//! - [`link`]: fibre, conversion and detection budget; noise and SNR.
//! - [`rate`]: attempt period, repetition rate and event rate.
//! - [`seqsim`]: seeded Monte-Carlo of the cooling / burst / readout sequence.
//! - [`analysis`]: fringe and decay fits, fidelity bound, CHSH, error budgets.
//! - [`config`]: TOML scenario documents and shipped presets.
//! - [`cli`]: the command implementations behind the `atomlink` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod decoherence;
pub mod error;
mod fit;
pub mod link;
pub mod qstate;
pub mod raman;
pub mod rate;
pub mod seqsim;
pub mod zeeman;

pub use error::{Error, Result};
