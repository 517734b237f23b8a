use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{DensityMatrix, QError, StateVector, PSD_TOL};

const PURITY_TOL: f64 = 1e-12;
// eigenvalues below this are round-off on a rank-deficient state
const EIGEN_CLIP: f64 = 1e-12;

/// Squared Uhlmann fidelity `(tr √(√ρ σ √ρ))²`.
///
/// When either argument is pure this reduces to `⟨ψ|σ|ψ⟩`, which is used
/// directly. Otherwise the fidelity is the squared nuclear norm of `√ρ√σ`,
/// which is symmetric in its arguments by construction.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64, QError> {
    QError::check_dim(a.dim(), b.dim())?;
    if a.purity() > 1.0 - PURITY_TOL {
        if let Some(psi) = a.dominant_vector() {
            return Ok(b.expectation(&psi)?.clamp(0.0, 1.0));
        }
    }
    if b.purity() > 1.0 - PURITY_TOL {
        if let Some(psi) = b.dominant_vector() {
            return Ok(a.expectation(&psi)?.clamp(0.0, 1.0));
        }
    }
    let sa = psd_sqrt(a)?;
    let sb = psd_sqrt(b)?;
    let nuclear: f64 = (sa * sb).singular_values().iter().sum();
    Ok((nuclear * nuclear).clamp(0.0, 1.0))
}

/// `|⟨a|b⟩|²`.
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64, QError> {
    Ok(a.inner(b)?.norm_sqr().min(1.0))
}

/// Trace distance between two pure states, `√(1 − |⟨a|b⟩|²)`.
///
/// `1 − |⟨a|b⟩|²` is evaluated through Lagrange's identity
/// `½ Σ_{ij} |a_i b_j − a_j b_i|²`, which is exactly zero for identical
/// inputs instead of leaving cancellation noise.
pub fn trace_distance_pure(a: &StateVector, b: &StateVector) -> Result<f64, QError> {
    QError::check_dim(a.dim(), b.dim())?;
    let (x, y) = (a.amplitudes(), b.amplitudes());
    let mut acc = 0.0;
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            acc += (x[i] * y[j] - x[j] * y[i]).norm_sqr();
        }
    }
    // both inputs have unit norm, so the identity needs no rescaling
    Ok(acc.sqrt().min(1.0))
}

fn psd_sqrt(rho: &DensityMatrix) -> Result<DMatrix<Complex64>, QError> {
    let herm = (rho.matrix() + rho.matrix().adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL {
        return Err(QError::InvalidDensity(format!("negative eigenvalue {min:e}")));
    }
    let roots = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(if l < EIGEN_CLIP { 0.0 } else { l.sqrt() }, 0.0)));
    Ok(&eig.eigenvectors * roots * eig.eigenvectors.adjoint())
}
