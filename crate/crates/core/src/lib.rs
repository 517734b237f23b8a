//! Simulation core for quantum PUF and quantum token authentication.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantum_core`] dense state-vector / density-matrix algebra, noise
//!   channels, Haar sampling, fidelity and single-qubit tomography.
//! * [`qrpuf`] the quantum read-out PUF: enrollment into a classical
//!   challenge-response table and shifter-based verification.
//! * [`uupuf`] the unknown-unitary PUF with its SWAP-test based testing
//!   algorithm and Monte-Carlo property estimators.
//! * [`hmp4`] the hidden-matching multi-factor token protocol.
//! * [`harness`] a deterministic discrete-event network with noisy quantum
//!   channels, adversaries and scenario execution.
//!
//! Qubit ordering is fixed crate-wide: in every tensor product qubit 0 is the
//! most significant bit of the basis index.

pub mod bits;
pub mod harness;
pub mod hmp4;
pub mod qrpuf;
pub mod quantum_core;
pub mod responder;
pub mod uupuf;

pub use bits::BitString;
pub use quantum_core::{
    DensityMatrix, NoiseParams, QError, QuantumState, RngStream, StateVector, UnitaryOp,
};
