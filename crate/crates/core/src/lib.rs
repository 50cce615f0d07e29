//! Quadratic-coupled spin-bath (QCSB) model of an entropic spring.
//!
//! An oscillator couples through x² to N identical two-level systems held
//! at inverse temperature β. The crate provides:
//!
//! - [`statespace`]: truncated oscillator basis and the permutation-symmetric
//!   sector representation of the joint state;
//! - [`dynamics`]: the dissipative block master equation, observables and a
//!   full-space reference solver for small N;
//! - [`thermo`]: closed-form thermodynamics (effective frequency, entropic
//!   force, flip rate, entropic spring parameter);
//! - [`glass`]: the entropic spring parameter of phonon modes in amorphous
//!   solids from the tunneling-model TLS distribution;
//! - [`analysis`]: fits for damping rate, frequency and dephasing slope.
//!
//! Units: ħ = k_B = 1 everywhere except [`glass`], which is SI.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod glass;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod params;
pub mod quadrature;
pub mod statespace;
pub mod thermo;

pub use dynamics::{
    brute_force_evolve, evolve, BathSpectrum, BlockGenerator, EvolveOptions, ObservableRecord, Trajectory,
};
pub use error::{QcsbError, Result};
pub use params::QcsbParams;
pub use statespace::{block_state_init, build_oscillator_space, BlockState, OscillatorSpace, SectorWeights};
