use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{RngStream, StateVector, UnitaryOp};

fn complex_gaussian(rng: &mut RngStream) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-distributed unitary: QR of a complex Ginibre matrix with the phases
/// of `diag(R)` pushed back into `Q`.
pub fn haar_unitary(dim: usize, rng: &mut RngStream) -> UnitaryOp {
    assert!(dim >= 1, "dimension must be positive");
    let ginibre = DMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
    let qr = ginibre.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let n = d.norm();
        let phase = if n > 0.0 { d / n } else { Complex64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    UnitaryOp::from_raw(q)
}

/// Haar-random pure state (normalised complex Gaussian vector).
pub fn haar_state(dim: usize, rng: &mut RngStream) -> StateVector {
    loop {
        let v: Vec<Complex64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
        if let Ok(s) = StateVector::normalized(v) {
            return s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Kolmogorov-Smirnov statistic of `samples` against the CDF `cdf`.
    fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn dim_one_is_a_phase() {
        let u = haar_unitary(1, &mut RngStream::new(3, 0));
        assert!((u.matrix()[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_within_tolerance() {
        let mut rng = RngStream::new(42, 0);
        for dim in [2, 4, 8, 16] {
            assert!(haar_unitary(dim, &mut rng).unitarity_defect() < 1e-10);
        }
    }

    #[test]
    fn reproducible_for_fixed_stream() {
        let a = haar_unitary(4, &mut RngStream::new(5, 9));
        let b = haar_unitary(4, &mut RngStream::new(5, 9));
        assert_eq!(a, b);
    }

    // Haar marginal: P(|U00|^2 > x) = (1-x)^(d-1).
    #[test]
    fn dim2_marginal_is_uniform() {
        let mut rng = RngStream::new(2024, 1);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| haar_unitary(2, &mut rng).matrix()[(0, 0)].norm_sqr())
            .collect();
        let ks = ks_statistic(xs, |x| x);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn dim4_marginal_matches_beta_law() {
        let mut rng = RngStream::new(77, 2);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| haar_unitary(4, &mut rng).matrix()[(0, 0)].norm_sqr())
            .collect();
        let ks = ks_statistic(xs, |x| 1.0 - (1.0 - x).powi(3));
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn haar_state_is_normalized() {
        let s = haar_state(8, &mut RngStream::new(1, 1));
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }
}
