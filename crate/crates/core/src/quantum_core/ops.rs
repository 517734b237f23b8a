use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{is_power_of_two, QError, StateVector, TOL};

/// A unitary operator; `U†U = I` holds within `1e-10` (Frobenius).
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryOp {
    matrix: DMatrix<Complex64>,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

impl UnitaryOp {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self, QError> {
        if !matrix.is_square() || !is_power_of_two(matrix.nrows()) {
            return Err(QError::domain(format!(
                "operator shape {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = (matrix.adjoint() * &matrix - DMatrix::identity(matrix.nrows(), matrix.ncols())).norm();
        if dev > TOL {
            return Err(QError::NotUnitary(dev));
        }
        Ok(UnitaryOp { matrix })
    }

    pub(crate) fn from_raw(matrix: DMatrix<Complex64>) -> Self {
        UnitaryOp { matrix }
    }

    pub fn from_2x2(m: [[Complex64; 2]; 2]) -> Result<Self, QError> {
        UnitaryOp::new(DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]))
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryOp {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn pauli_x() -> Self {
        UnitaryOp::from_raw(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
    }

    pub fn pauli_y() -> Self {
        let i = Complex64::new(0.0, 1.0);
        UnitaryOp::from_raw(DMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO]))
    }

    pub fn pauli_z() -> Self {
        UnitaryOp::from_raw(DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]))
    }

    pub fn hadamard() -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        UnitaryOp::from_raw(DMatrix::from_row_slice(2, 2, &[h, h, h, -h]))
    }

    /// Basis change whose columns are `|+i⟩` and `|−i⟩`.
    pub fn y_basis() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = Complex64::new(h, 0.0);
        let b = Complex64::new(0.0, h);
        UnitaryOp::from_raw(DMatrix::from_row_slice(2, 2, &[a, a, b, -b]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dagger(&self) -> UnitaryOp {
        UnitaryOp {
            matrix: self.matrix.adjoint(),
        }
    }

    /// Matrix product `self · rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &UnitaryOp) -> Result<UnitaryOp, QError> {
        QError::check_dim(self.dim(), rhs.dim())?;
        Ok(UnitaryOp {
            matrix: &self.matrix * &rhs.matrix,
        })
    }

    pub fn scaled_by_phase(&self, gamma: f64) -> UnitaryOp {
        UnitaryOp {
            matrix: &self.matrix * Complex64::from_polar(1.0, gamma),
        }
    }

    /// Frobenius distance from unitarity.
    pub fn unitarity_defect(&self) -> f64 {
        (self.matrix.adjoint() * &self.matrix - DMatrix::identity(self.dim(), self.dim())).norm()
    }

    pub(crate) fn as_2x2(&self) -> [[Complex64; 2]; 2] {
        let m = &self.matrix;
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
    }
}

/// Kronecker product of operators in list order.
pub fn tensor_ops(parts: &[UnitaryOp]) -> Result<UnitaryOp, QError> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| QError::domain("cannot tensor an empty list of operators"))?;
    let mut acc = first.matrix.clone();
    for p in rest {
        acc = acc.kronecker(&p.matrix);
    }
    Ok(UnitaryOp { matrix: acc })
}

pub fn apply_unitary(u: &UnitaryOp, s: &StateVector) -> Result<StateVector, QError> {
    QError::check_dim(u.dim(), s.dim())?;
    let amps = s.amplitudes();
    let out = (0..u.dim())
        .map(|i| {
            u.matrix
                .row(i)
                .iter()
                .zip(amps)
                .map(|(m, a)| m * a)
                .sum::<Complex64>()
        })
        .collect();
    Ok(StateVector::from_raw(out))
}
