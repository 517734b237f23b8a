use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{apply_1q_in_place, is_power_of_two, qubit_count, QError, UnitaryOp, PSD_TOL, TOL};

/// A pure state on `2^n` amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Complex64>", into = "Vec<Complex64>")]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl TryFrom<Vec<Complex64>> for StateVector {
    type Error = QError;

    fn try_from(amplitudes: Vec<Complex64>) -> Result<Self, QError> {
        StateVector::new(amplitudes)
    }
}

impl From<StateVector> for Vec<Complex64> {
    fn from(s: StateVector) -> Self {
        s.amplitudes
    }
}

impl StateVector {
    /// Validates dimension and normalisation (within `1e-10`).
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self, QError> {
        if !is_power_of_two(amplitudes.len()) {
            return Err(QError::domain(format!(
                "state dimension {} is not a power of two",
                amplitudes.len()
            )));
        }
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm2 - 1.0).abs() > TOL {
            return Err(QError::NotNormalized(norm2));
        }
        Ok(StateVector { amplitudes })
    }

    /// Rescales to unit norm before validating.
    pub fn normalized(amplitudes: Vec<Complex64>) -> Result<Self, QError> {
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(QError::NotNormalized(norm * norm));
        }
        StateVector::new(amplitudes.into_iter().map(|a| a / norm).collect())
    }

    pub(crate) fn from_raw(amplitudes: Vec<Complex64>) -> Self {
        debug_assert!(is_power_of_two(amplitudes.len()));
        StateVector { amplitudes }
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self, QError> {
        if !is_power_of_two(dim) || index >= dim {
            return Err(QError::domain(format!("basis state {index} of dimension {dim}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(StateVector { amplitudes: amps })
    }

    /// `|0…0⟩` on `n` qubits.
    pub fn zeros(n: usize) -> Self {
        StateVector::basis(1 << n, 0).expect("valid basis state")
    }

    pub fn plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_raw(vec![Complex64::new(h, 0.0), Complex64::new(h, 0.0)])
    }

    pub fn minus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_raw(vec![Complex64::new(h, 0.0), Complex64::new(-h, 0.0)])
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn num_qubits(&self) -> usize {
        qubit_count(self.dim())
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64, QError> {
        QError::check_dim(self.dim(), other.dim())?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn to_density(&self) -> DensityMatrix {
        let v = nalgebra::DVector::from_column_slice(&self.amplitudes);
        DensityMatrix::from_raw(&v * v.adjoint())
    }

    /// Applies a single-qubit gate to qubit `k` (0 = most significant).
    pub fn apply_on_qubit(&self, k: usize, gate: &UnitaryOp) -> Result<StateVector, QError> {
        QError::check_dim(2, gate.dim())?;
        let n = self.num_qubits();
        if k >= n {
            return Err(QError::domain(format!("qubit {k} out of range for {n} qubits")));
        }
        let mut amps = self.amplitudes.clone();
        apply_1q_in_place(&mut amps, n, k, gate.as_2x2());
        Ok(StateVector { amplitudes: amps })
    }

    /// Reduced single-qubit pure state of a product state, or `None` when
    /// qubit `k` is entangled with the rest.
    pub fn qubit_marginal_pure(&self, k: usize) -> Option<StateVector> {
        let rho = self.to_density().reduce_to_qubit(k).ok()?;
        if rho.purity() < 1.0 - 1e-9 {
            return None;
        }
        rho.dominant_vector()
    }
}

/// Single-qubit state `cos θ|0⟩ + e^{iφ} sin θ|1⟩`.
///
/// Angles follow the literal ranges `θ ∈ [0, π]`, `φ ∈ [0, 2π]`, so
/// `(θ, φ)` and `(π − θ, φ + π)` give the same ray.
pub fn make_single_qubit_state(theta: f64, phi: f64) -> Result<StateVector, QError> {
    use std::f64::consts::PI;
    if !(0.0..=PI).contains(&theta) || !(0.0..=2.0 * PI).contains(&phi) {
        return Err(QError::domain(format!(
            "angles out of range: theta={theta}, phi={phi}"
        )));
    }
    Ok(StateVector::from_raw(vec![
        Complex64::new(theta.cos(), 0.0),
        Complex64::from_polar(theta.sin(), phi),
    ]))
}

/// Kronecker product in list order; index 0 ends up most significant.
pub fn tensor_states(parts: &[StateVector]) -> Result<StateVector, QError> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| QError::domain("cannot tensor an empty list of states"))?;
    let mut acc = first.amplitudes.clone();
    for p in rest {
        acc = acc
            .iter()
            .flat_map(|a| p.amplitudes.iter().map(move |b| a * b))
            .collect();
    }
    Ok(StateVector::from_raw(acc))
}

/// A mixed state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates hermiticity, unit trace and positivity.
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self, QError> {
        let rho = DensityMatrix { matrix };
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_raw(matrix: DMatrix<Complex64>) -> Self {
        DensityMatrix { matrix }
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self, QError> {
        if !is_power_of_two(dim) {
            return Err(QError::domain(format!("dimension {dim} is not a power of two")));
        }
        Ok(DensityMatrix {
            matrix: DMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0),
        })
    }

    pub fn validate(&self) -> Result<(), QError> {
        let m = &self.matrix;
        if !m.is_square() || !is_power_of_two(m.nrows()) {
            return Err(QError::InvalidDensity(format!(
                "shape {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let herm = (m - m.adjoint()).norm();
        if herm > TOL {
            return Err(QError::InvalidDensity(format!("not Hermitian ({herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TOL {
            return Err(QError::InvalidDensity(format!("trace {tr}")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            return Err(QError::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_qubits(&self) -> usize {
        qubit_count(self.dim())
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().collect()
    }

    /// Eigenvector of the largest eigenvalue.
    pub(crate) fn dominant_vector(&self) -> Option<StateVector> {
        let herm = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let (idx, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        StateVector::normalized(eig.eigenvectors.column(idx).iter().copied().collect()).ok()
    }

    /// Computational-basis populations.
    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re.max(0.0)).collect()
    }

    /// `⟨v|ρ|v⟩`.
    pub fn expectation(&self, v: &StateVector) -> Result<f64, QError> {
        QError::check_dim(self.dim(), v.dim())?;
        let a = v.amplitudes();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..a.len() {
            for j in 0..a.len() {
                acc += a[i].conj() * self.matrix[(i, j)] * a[j];
            }
        }
        Ok(acc.re)
    }

    pub fn apply_unitary(&self, u: &UnitaryOp) -> Result<DensityMatrix, QError> {
        QError::check_dim(self.dim(), u.dim())?;
        Ok(DensityMatrix {
            matrix: u.matrix() * &self.matrix * u.matrix().adjoint(),
        })
    }

    /// `G_k ρ G_k†` for a single-qubit gate on qubit `k`.
    pub fn apply_on_qubit(&self, k: usize, gate: &UnitaryOp) -> Result<DensityMatrix, QError> {
        QError::check_dim(2, gate.dim())?;
        let n = self.num_qubits();
        if k >= n {
            return Err(QError::domain(format!("qubit {k} out of range for {n} qubits")));
        }
        let g = gate.as_2x2();
        let mut m = self.matrix.clone();
        for mut col in m.column_iter_mut() {
            apply_1q_in_place(col.as_mut_slice(), n, k, g);
        }
        let mut m = m.adjoint();
        for mut col in m.column_iter_mut() {
            apply_1q_in_place(col.as_mut_slice(), n, k, g);
        }
        Ok(DensityMatrix {
            matrix: m.adjoint(),
        })
    }

    /// Partial trace down to qubit `k`.
    pub fn reduce_to_qubit(&self, k: usize) -> Result<DensityMatrix, QError> {
        let n = self.num_qubits();
        if k >= n {
            return Err(QError::domain(format!("qubit {k} out of range for {n} qubits")));
        }
        let shift = n - 1 - k;
        let mut out = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                // other qubits must agree
                if (i ^ j) & !(1 << shift) != 0 {
                    continue;
                }
                out[((i >> shift) & 1, (j >> shift) & 1)] += self.matrix[(i, j)];
            }
        }
        Ok(DensityMatrix { matrix: out })
    }

    pub(crate) fn mix(&self, other: &DensityMatrix, weight_other: f64) -> DensityMatrix {
        DensityMatrix {
            matrix: &self.matrix * Complex64::new(1.0 - weight_other, 0.0)
                + &other.matrix * Complex64::new(weight_other, 0.0),
        }
    }
}

/// Either representation, as carried by channels and responders.
#[derive(Clone, Debug, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn dim(&self) -> usize {
        match self {
            QuantumState::Pure(s) => s.dim(),
            QuantumState::Mixed(r) => r.dim(),
        }
    }

    pub fn num_qubits(&self) -> usize {
        qubit_count(self.dim())
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(s) => s.to_density(),
            QuantumState::Mixed(r) => r.clone(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            QuantumState::Pure(s) => s.probabilities(),
            QuantumState::Mixed(r) => r.probabilities(),
        }
    }

    /// `⟨v|state|v⟩`.
    pub fn overlap_with(&self, v: &StateVector) -> Result<f64, QError> {
        match self {
            QuantumState::Pure(s) => Ok(s.inner(v)?.norm_sqr()),
            QuantumState::Mixed(r) => r.expectation(v),
        }
    }

    pub fn apply_unitary(&self, u: &UnitaryOp) -> Result<QuantumState, QError> {
        Ok(match self {
            QuantumState::Pure(s) => QuantumState::Pure(super::apply_unitary(u, s)?),
            QuantumState::Mixed(r) => QuantumState::Mixed(r.apply_unitary(u)?),
        })
    }

    pub fn apply_on_qubit(&self, k: usize, gate: &UnitaryOp) -> Result<QuantumState, QError> {
        Ok(match self {
            QuantumState::Pure(s) => QuantumState::Pure(s.apply_on_qubit(k, gate)?),
            QuantumState::Mixed(r) => QuantumState::Mixed(r.apply_on_qubit(k, gate)?),
        })
    }
}

impl From<StateVector> for QuantumState {
    fn from(s: StateVector) -> Self {
        QuantumState::Pure(s)
    }
}

impl From<DensityMatrix> for QuantumState {
    fn from(r: DensityMatrix) -> Self {
        QuantumState::Mixed(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &StateVector, b: &[Complex64]) -> bool {
        a.amplitudes().iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    #[test]
    fn single_qubit_parameterization() {
        assert!(close(&make_single_qubit_state(0.0, 0.0).unwrap(), &[c(1., 0.), c(0., 0.)]));
        assert!(close(&make_single_qubit_state(PI / 2.0, 0.0).unwrap(), &[c(0., 0.), c(1., 0.)]));
        assert!(close(
            &make_single_qubit_state(PI / 4.0, PI / 2.0).unwrap(),
            &[c(FRAC_1_SQRT_2, 0.), c(0., FRAC_1_SQRT_2)]
        ));
    }

    #[test]
    fn single_qubit_rejects_out_of_range() {
        assert!(matches!(make_single_qubit_state(-0.1, 0.0), Err(QError::Domain(_))));
        assert!(matches!(make_single_qubit_state(0.0, 7.0), Err(QError::Domain(_))));
    }

    #[test]
    fn tensor_ordering_is_msb_first() {
        let z = StateVector::basis(2, 0).unwrap();
        let o = StateVector::basis(2, 1).unwrap();
        assert!(close(&tensor_states(&[z.clone(), z.clone()]).unwrap(), &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]));
        assert!(close(&tensor_states(&[z, o]).unwrap(), &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]));
        let p = StateVector::plus();
        assert!(close(&tensor_states(&[p.clone(), p]).unwrap(), &[c(0.5, 0.); 4]));
        assert!(tensor_states(&[]).is_err());
    }

    #[test]
    fn rejects_unnormalized_and_odd_dims() {
        assert!(matches!(
            StateVector::new(vec![c(1., 0.), c(1., 0.)]),
            Err(QError::NotNormalized(_))
        ));
        assert!(matches!(StateVector::new(vec![c(1., 0.); 3]), Err(QError::Domain(_))));
    }

    #[test]
    fn density_validation() {
        let mut m = DMatrix::from_element(2, 2, c(0., 0.));
        m[(0, 0)] = c(1.5, 0.);
        m[(1, 1)] = c(-0.5, 0.);
        assert!(DensityMatrix::new(m).is_err());
        assert!(DensityMatrix::new(StateVector::plus().to_density().matrix().clone()).is_ok());
    }

    #[test]
    fn reduce_product_state() {
        let s = tensor_states(&[StateVector::plus(), StateVector::basis(2, 1).unwrap()]).unwrap();
        let q0 = s.qubit_marginal_pure(0).unwrap();
        assert!((q0.inner(&StateVector::plus()).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
        let q1 = s.qubit_marginal_pure(1).unwrap();
        assert!((q1.probabilities()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qubit_gate_matches_full_operator() {
        let s = tensor_states(&[StateVector::plus(), make_single_qubit_state(0.3, 1.1).unwrap()]).unwrap();
        let h = UnitaryOp::hadamard();
        let full = super::super::tensor_ops(&[UnitaryOp::identity(2), h.clone()]).unwrap();
        let a = s.apply_on_qubit(1, &h).unwrap();
        let b = super::super::apply_unitary(&full, &s).unwrap();
        assert!(close(&a, b.amplitudes()));
        let ra = s.to_density().apply_on_qubit(1, &h).unwrap();
        let rb = s.to_density().apply_unitary(&full).unwrap();
        assert!((ra.matrix() - rb.matrix()).norm() < 1e-12);
    }
}
