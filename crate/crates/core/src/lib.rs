//! Many-body echo simulations for collective Ising magnets.
//!
//! The crate evaluates the time-reversal (Loschmidt echo) protocol used to
//! measure out-of-time-order correlators in trapped-ion quantum simulators:
//!
//! * [`collective`]: Dicke-basis states, Wigner rotations and Ising phases.
//! * [`protocol`]: fidelity and magnetization sweeps and their Fourier spectra.
//! * [`lindblad`]: permutation-symmetric master equation with local decay and
//!   dephasing, propagated block by block.
//! * [`phonon`]: closed-form spin-phonon propagator, thermal averages and noise.
//! * [`bruteforce`]: exponential-cost reference implementations for small systems.
//! * [`detect`]: photon-count statistics and fidelity estimation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binom;
pub mod bruteforce;
pub mod collective;
pub mod detect;
pub mod error;
pub mod lindblad;
pub mod ode;
pub mod phonon;
pub mod protocol;
pub mod quadrature;
pub mod wigner;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub use collective::{Axis, Basis, DickeVector, IsingParams};
pub use protocol::{CorrelationSpectrum, EchoSequence, MqcSpectrum};
pub use wigner::{RotationConvention, WignerDMatrix};
