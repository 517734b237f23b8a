use super::{apply_unitary, QError, RngStream, StateVector, UnitaryOp};
use crate::bits::BitString;

/// Outcome of a projective measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub outcome: BitString,
    pub index: usize,
    pub collapsed: StateVector,
}

/// Draws an index from a (possibly slightly unnormalised) distribution.
pub fn sample_index(probs: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Born-rule measurement in the computational basis.
pub fn measure_computational(s: &StateVector, rng: &mut RngStream) -> Measurement {
    let index = sample_index(&s.probabilities(), rng);
    Measurement {
        outcome: BitString::from_index(index, s.num_qubits()),
        index,
        collapsed: StateVector::basis(s.dim(), index).expect("index within dimension"),
    }
}

/// Measures in the orthonormal basis given by the columns of `basis`.
///
/// The state is rotated by `basis†` and measured computationally; the
/// collapsed state is reported in the original frame (a column of `basis`).
pub fn measure_in_basis(
    s: &StateVector,
    basis: &UnitaryOp,
    rng: &mut RngStream,
) -> Result<Measurement, QError> {
    let rotated = apply_unitary(&basis.dagger(), s)?;
    let m = measure_computational(&rotated, rng);
    Ok(Measurement {
        collapsed: apply_unitary(basis, &m.collapsed)?,
        ..m
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::tensor_states;

    fn zero_freq(s: &StateVector, basis: Option<&UnitaryOp>, shots: usize, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, 0);
        let zeros = (0..shots)
            .filter(|_| {
                let m = match basis {
                    Some(b) => measure_in_basis(s, b, &mut rng).unwrap(),
                    None => measure_computational(s, &mut rng),
                };
                m.index == 0
            })
            .count();
        zeros as f64 / shots as f64
    }

    #[test]
    fn deterministic_outcomes() {
        let mut rng = RngStream::new(0, 0);
        let z = StateVector::basis(2, 0).unwrap();
        for _ in 0..100 {
            assert_eq!(measure_computational(&z, &mut rng).outcome.to_string(), "0");
        }
        let s01 = tensor_states(&[z, StateVector::basis(2, 1).unwrap()]).unwrap();
        let m = measure_computational(&s01, &mut rng);
        assert_eq!(m.outcome.to_string(), "01");
        assert_eq!(m.collapsed, s01);

        let one = StateVector::basis(2, 1).unwrap();
        let m = measure_in_basis(&one, &UnitaryOp::identity(2), &mut rng).unwrap();
        assert_eq!(m.outcome.to_string(), "1");
        let m = measure_in_basis(&StateVector::plus(), &UnitaryOp::hadamard(), &mut rng).unwrap();
        assert_eq!(m.outcome.to_string(), "0");
    }

    #[test]
    fn born_frequencies() {
        let f = zero_freq(&StateVector::plus(), None, 100_000, 11);
        assert!((f - 0.5).abs() < 0.005, "{f}");
        let z = StateVector::basis(2, 0).unwrap();
        let f = zero_freq(&z, Some(&UnitaryOp::hadamard()), 100_000, 12);
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn collapsed_state_in_original_frame() {
        let mut rng = RngStream::new(1, 0);
        let z = StateVector::basis(2, 0).unwrap();
        let m = measure_in_basis(&z, &UnitaryOp::hadamard(), &mut rng).unwrap();
        let expected = if m.index == 0 { StateVector::plus() } else { StateVector::minus() };
        assert!((m.collapsed.inner(&expected).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
    }
}
