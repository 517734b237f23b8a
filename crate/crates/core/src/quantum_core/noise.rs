use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DensityMatrix, QError, RngStream, UnitaryOp};

/// Average readout error of the reference superconducting backend.
pub const DEVICE_READOUT_ERROR: f64 = 1.581e-2;
/// Average idle error per gate time of the reference backend.
pub const DEVICE_IDLE_ERROR: f64 = 3.654e-4;
/// T₂ reproducing a 4.4 % |+⟩→|−⟩ flip after a 10 μs dwell.
pub const DEFAULT_T2_US: f64 = 108.6;

/// Memory / channel noise parameters. Times are in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoise")]
pub struct NoiseParams {
    pub t2_us: f64,
    pub readout_flip_prob: f64,
    pub idle_depolarize_prob: f64,
}

#[derive(Deserialize)]
struct RawNoise {
    #[serde(default = "default_t2")]
    t2_us: f64,
    #[serde(default)]
    readout_flip_prob: f64,
    #[serde(default)]
    idle_depolarize_prob: f64,
}

fn default_t2() -> f64 {
    DEFAULT_T2_US
}

impl TryFrom<RawNoise> for NoiseParams {
    type Error = QError;

    fn try_from(r: RawNoise) -> Result<Self, QError> {
        NoiseParams::new(r.t2_us, r.readout_flip_prob, r.idle_depolarize_prob)
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            t2_us: DEFAULT_T2_US,
            readout_flip_prob: DEVICE_READOUT_ERROR,
            idle_depolarize_prob: DEVICE_IDLE_ERROR,
        }
    }
}

impl NoiseParams {
    pub fn new(t2_us: f64, readout_flip_prob: f64, idle_depolarize_prob: f64) -> Result<Self, QError> {
        if !(t2_us > 0.0) {
            return Err(QError::domain(format!("t2_us must be positive, got {t2_us}")));
        }
        for (name, p) in [
            ("readout_flip_prob", readout_flip_prob),
            ("idle_depolarize_prob", idle_depolarize_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(QError::domain(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        Ok(NoiseParams {
            t2_us,
            readout_flip_prob,
            idle_depolarize_prob,
        })
    }

    /// Pure dephasing only, no readout or idle error.
    pub fn dephasing_only(t2_us: f64) -> Result<Self, QError> {
        NoiseParams::new(t2_us, 0.0, 0.0)
    }
}

/// `p(t) = (1 − e^{−t/T₂}) / 2`, the X-basis flip probability of |+⟩.
pub fn dephasing_flip_probability(dwell_us: f64, t2_us: f64) -> f64 {
    0.5 * (1.0 - (-dwell_us / t2_us).exp())
}

/// Inverts the flip law: the T₂ giving flip probability `p` after `dwell_us`.
pub fn calibrate_t2(dwell_us: f64, p: f64) -> Result<f64, QError> {
    if !(dwell_us > 0.0) || !(0.0 < p && p < 0.5) {
        return Err(QError::domain(format!(
            "cannot calibrate T2 from dwell={dwell_us}, p={p}"
        )));
    }
    Ok(-dwell_us / (1.0 - 2.0 * p).ln())
}

fn check_dephase_args(dwell_us: f64, t2_us: f64) -> Result<(), QError> {
    if !(dwell_us >= 0.0) {
        return Err(QError::domain(format!("negative dwell time {dwell_us}")));
    }
    if !(t2_us > 0.0) {
        return Err(QError::domain(format!("t2_us must be positive, got {t2_us}")));
    }
    Ok(())
}

/// Single-qubit phase damping: off-diagonals scaled by `e^{−t/T₂}`.
pub fn dephase(rho: &DensityMatrix, dwell_us: f64, t2_us: f64) -> Result<DensityMatrix, QError> {
    QError::check_dim(2, rho.dim())?;
    dephase_qubits(rho, dwell_us, t2_us)
}

/// Independent dephasing on every qubit of a register: element `(i, j)` is
/// scaled by `e^{−t/T₂}` once per qubit on which `i` and `j` differ.
pub fn dephase_qubits(rho: &DensityMatrix, dwell_us: f64, t2_us: f64) -> Result<DensityMatrix, QError> {
    check_dephase_args(dwell_us, t2_us)?;
    let decay = (-dwell_us / t2_us).exp();
    let mut m = rho.matrix().clone();
    for ((i, j), z) in m.iter_mut().enumerate().map(|(idx, z)| ((idx % rho.dim(), idx / rho.dim()), z)) {
        let flips = (i ^ j).count_ones() as i32;
        if flips > 0 {
            *z *= decay.powi(flips);
        }
    }
    Ok(DensityMatrix::from_raw(m))
}

fn check_prob(p: f64) -> Result<(), QError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(QError::domain(format!("probability {p} outside [0,1]")))
    }
}

/// Global depolarising channel `(1 − p)ρ + p·I/dim`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix, QError> {
    check_prob(p)?;
    Ok(rho.mix(&DensityMatrix::maximally_mixed(rho.dim())?, p))
}

/// Depolarises qubit `k` only: `(1 − p)ρ + p·(I/2 ⊗ tr_k ρ)`.
pub fn depolarize_qubit(rho: &DensityMatrix, k: usize, p: f64) -> Result<DensityMatrix, QError> {
    check_prob(p)?;
    if p == 0.0 {
        return Ok(rho.clone());
    }
    let mut twirled = rho.matrix() * Complex64::new(0.25, 0.0);
    for pauli in [UnitaryOp::pauli_x(), UnitaryOp::pauli_y(), UnitaryOp::pauli_z()] {
        twirled += rho.apply_on_qubit(k, &pauli)?.matrix() * Complex64::new(0.25, 0.0);
    }
    Ok(rho.mix(&DensityMatrix::from_raw(twirled), p))
}

/// Classical readout error: flips `bit` with probability `prob`.
pub fn flip_readout(bit: bool, prob: f64, rng: &mut RngStream) -> bool {
    if prob <= 0.0 {
        return bit;
    }
    bit ^ rng.bernoulli(prob)
}
