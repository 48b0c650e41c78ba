//! Simulation and analysis toolkit for a two-node surface-acoustic-wave
//! quantum network: device Hamiltonian and master-equation dynamics, pulse
//! protocols for phonon Bell and N00N states, displaced-parity style
//! resonator tomography, qubit readout correction, SAW resonator and IDT
//! transfer-matrix models, and a reproducible experiment runner.

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hilbert;
pub mod pulses;
pub mod readout;
pub mod rng;
pub mod sawcom;
pub mod tomography;

pub use error::{Error, Result};
