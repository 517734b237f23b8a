//! Dense complex linear algebra for small quantum registers.
//!
//! Everything here is pure given an explicit [`RngStream`]; values are
//! immutable once built. Tolerances: `1e-10` for algebraic identities
//! (normalisation, unitarity, hermiticity), `-1e-9` as the floor on density
//! matrix eigenvalues.

mod error;
mod fidelity;
mod haar;
mod measure;
mod noise;
mod ops;
mod rng;
mod state;
mod tomography;

pub use error::QError;
pub use fidelity::{fidelity, state_fidelity, trace_distance_pure};
pub use haar::{haar_state, haar_unitary};
pub use measure::{measure_computational, measure_in_basis, sample_index, Measurement};
pub use noise::{
    calibrate_t2, dephase, dephase_qubits, dephasing_flip_probability, depolarize,
    depolarize_qubit, flip_readout, NoiseParams, DEFAULT_T2_US, DEVICE_IDLE_ERROR, DEVICE_READOUT_ERROR,
};
pub use ops::{apply_unitary, tensor_ops, UnitaryOp};
pub use rng::RngStream;
pub use state::{make_single_qubit_state, tensor_states, DensityMatrix, QuantumState, StateVector};
pub use tomography::{tomography_single_qubit, Tomography};

pub use num_complex::Complex64;

/// Tolerance used for algebraic identities.
pub const TOL: f64 = 1e-10;
/// Lowest eigenvalue accepted for a positive semidefinite matrix.
pub const PSD_TOL: f64 = 1e-9;

pub(crate) fn is_power_of_two(n: usize) -> bool {
    n >= 1 && n & (n - 1) == 0
}

pub(crate) fn qubit_count(dim: usize) -> usize {
    dim.trailing_zeros() as usize
}

/// Applies a 2×2 gate to qubit `k` of an `n`-qubit amplitude vector in place.
pub(crate) fn apply_1q_in_place(amps: &mut [Complex64], n: usize, k: usize, g: [[Complex64; 2]; 2]) {
    let stride = 1usize << (n - 1 - k);
    let dim = amps.len();
    let mut base = 0;
    while base < dim {
        for off in 0..stride {
            let i0 = base + off;
            let i1 = i0 + stride;
            let a0 = amps[i0];
            let a1 = amps[i1];
            amps[i0] = g[0][0] * a0 + g[0][1] * a1;
            amps[i1] = g[1][0] * a0 + g[1][1] * a1;
        }
        base += 2 * stride;
    }
}
