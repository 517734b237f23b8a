use num_complex::Complex64;

use super::{measure_in_basis, QError, RngStream, StateVector, UnitaryOp};

/// Result of single-qubit Pauli tomography.
#[derive(Clone, Debug, PartialEq)]
pub struct Tomography {
    /// Empirical `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)`.
    pub bloch: [f64; 3],
    /// Pure state along the normalised Bloch direction.
    pub pure_state_estimate: StateVector,
}

/// Estimates a single-qubit state from `shots` fresh preparations, split
/// evenly over the X, Y and Z bases.
pub fn tomography_single_qubit(
    mut prepare: impl FnMut() -> StateVector,
    shots: usize,
    rng: &mut RngStream,
) -> Result<Tomography, QError> {
    if shots < 3 {
        return Err(QError::domain(format!("tomography needs at least 3 shots, got {shots}")));
    }
    let per_axis = shots / 3;
    let bases = [UnitaryOp::hadamard(), UnitaryOp::y_basis(), UnitaryOp::identity(2)];
    let mut bloch = [0.0; 3];
    for (axis, basis) in bases.iter().enumerate() {
        let mut sum = 0i64;
        for _ in 0..per_axis {
            let s = prepare();
            QError::check_dim(2, s.dim())?;
            let m = measure_in_basis(&s, basis, rng)?;
            sum += if m.index == 0 { 1 } else { -1 };
        }
        bloch[axis] = sum as f64 / per_axis as f64;
    }
    Ok(Tomography {
        bloch,
        pure_state_estimate: bloch_to_state(bloch),
    })
}

/// Pure state in the direction of `bloch`; the origin maps to `|0⟩`.
pub(crate) fn bloch_to_state(bloch: [f64; 3]) -> StateVector {
    let [x, y, z] = bloch;
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return StateVector::zeros(1);
    }
    let polar = (z / r).clamp(-1.0, 1.0).acos();
    let azimuth = y.atan2(x);
    StateVector::from_raw(vec![
        Complex64::new((polar / 2.0).cos(), 0.0),
        Complex64::from_polar((polar / 2.0).sin(), azimuth),
    ])
}
