//! Unknown-unitary quantum PUF.
//!
//! The device is a Haar-random unitary on `D = 2^λ` dimensions. The
//! verifier keeps a quantum CRT of challenge/response states and decides
//! equality with a SWAP-test based testing algorithm: `r = min(k₁, k₂)`
//! independent SWAP tests, the estimator `f̂ = max(0, 2·accepts/r − 1)` and
//! acceptance when `f̂ ≥ τ`.
//!
//! The property estimators report empirical rates over explicit sample
//! sizes; they make no asymptotic claims.

use serde::Serialize;

use crate::quantum_core::{
    dephase_qubits, fidelity, haar_state, haar_unitary, trace_distance_pure, Complex64,
    DensityMatrix, QError, QuantumState, RngStream, StateVector, UnitaryOp,
};
pub use crate::responder::{FnResponder, Responder};

pub const MAX_LAMBDA: usize = 12;
pub const DEFAULT_TAU: f64 = 0.9;
const FIDELITY_SLACK: f64 = 1e-9;
const CALIBRATION_ATTEMPTS: usize = 64;

/// A generated qPUF instance.
#[derive(Clone, Debug, PartialEq)]
pub struct UuPuf {
    lambda: usize,
    hidden_unitary: UnitaryOp,
    id: String,
}

impl UuPuf {
    /// Wraps a known unitary, e.g. a test double.
    pub fn from_unitary(unitary: UnitaryOp, id: impl Into<String>) -> Result<Self, QError> {
        let defect = unitary.unitarity_defect();
        if defect > crate::quantum_core::TOL {
            return Err(QError::NotUnitary(defect));
        }
        Ok(UuPuf {
            lambda: unitary.dim().trailing_zeros() as usize,
            hidden_unitary: unitary,
            id: id.into(),
        })
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.hidden_unitary.dim()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Exposes the hidden operator. Only adversaries that are granted
    /// knowledge of the device (emulation) should call this.
    pub fn hidden_unitary(&self) -> &UnitaryOp {
        &self.hidden_unitary
    }

    pub fn eval_pure(&self, s: &StateVector) -> Result<StateVector, QError> {
        crate::quantum_core::apply_unitary(&self.hidden_unitary, s)
    }
}

/// `QGen(λ)`: a Haar-random device with an identifier tied to the stream.
pub fn qgen_uu(lambda: usize, rng: &mut RngStream) -> Result<UuPuf, QError> {
    if !(1..=MAX_LAMBDA).contains(&lambda) {
        return Err(QError::domain(format!("lambda must be in 1..={MAX_LAMBDA}, got {lambda}")));
    }
    let tag = rand::RngCore::next_u64(rng);
    let id = format!("qpuf-{:016x}-{:016x}-{:016x}", rng.seed(), rng.stream_id(), tag);
    Ok(UuPuf {
        lambda,
        hidden_unitary: haar_unitary(1 << lambda, rng),
        id,
    })
}

/// `QEval`: `ρ ↦ UρU†`.
pub fn qeval(puf: &UuPuf, rho_in: &DensityMatrix) -> Result<DensityMatrix, QError> {
    rho_in.apply_unitary(&puf.hidden_unitary)
}

/// A channel the property estimators can probe.
pub trait PufChannel {
    fn dim(&self) -> usize;
    fn eval(&self, rho: &DensityMatrix) -> Result<DensityMatrix, QError>;
}

impl PufChannel for UuPuf {
    fn dim(&self) -> usize {
        UuPuf::dim(self)
    }

    fn eval(&self, rho: &DensityMatrix) -> Result<DensityMatrix, QError> {
        qeval(self, rho)
    }
}

/// The contractive part `Ẽ` of a perturbed device.
#[derive(Clone, Debug, PartialEq)]
pub enum ContractiveChannel {
    /// Full depolarisation to `I/D`.
    Depolarize,
    /// Replacement by a fixed pure state.
    ReplaceWith(StateVector),
}

impl ContractiveChannel {
    fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix, QError> {
        match self {
            ContractiveChannel::Depolarize => DensityMatrix::maximally_mixed(rho.dim()),
            ContractiveChannel::ReplaceWith(s) => {
                QError::check_dim(rho.dim(), s.dim())?;
                Ok(s.to_density())
            }
        }
    }

    fn sample(&self, dim: usize, rng: &mut RngStream) -> Result<StateVector, QError> {
        match self {
            ContractiveChannel::Depolarize => StateVector::basis(dim, rng.below(dim)),
            ContractiveChannel::ReplaceWith(s) => Ok(s.clone()),
        }
    }
}

/// `E(ρ) = (1 − ε) UρU† + ε Ẽ(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedPuf {
    pub base: UuPuf,
    epsilon: f64,
    pub contractive_channel: ContractiveChannel,
}

impl PerturbedPuf {
    pub fn new(base: UuPuf, epsilon: f64, contractive_channel: ContractiveChannel) -> Result<Self, QError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(QError::domain(format!("epsilon must be in [0,1], got {epsilon}")));
        }
        Ok(PerturbedPuf {
            base,
            epsilon,
            contractive_channel,
        })
    }

    pub fn depolarizing(base: UuPuf, epsilon: f64) -> Result<Self, QError> {
        PerturbedPuf::new(base, epsilon, ContractiveChannel::Depolarize)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// One quantum trajectory of the channel on a pure input: the unitary
    /// branch with probability `1 − ε`, otherwise a draw from `Ẽ`.
    pub fn sample_trajectory(&self, s: &StateVector, rng: &mut RngStream) -> Result<StateVector, QError> {
        QError::check_dim(self.base.dim(), s.dim())?;
        if rng.bernoulli(self.epsilon) {
            self.contractive_channel.sample(s.dim(), rng)
        } else {
            self.base.eval_pure(s)
        }
    }
}

impl PufChannel for PerturbedPuf {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, rho: &DensityMatrix) -> Result<DensityMatrix, QError> {
        let unitary_part = qeval(&self.base, rho)?;
        Ok(unitary_part.mix(&self.contractive_channel.apply(rho)?, self.epsilon))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Exact density-matrix mixture.
    Matrix,
    /// Sampled trajectory, returned as a pure state.
    Trajectory,
}

/// Applies a perturbed device. `rng` is only consumed in trajectory mode,
/// which requires a pure input.
pub fn perturbed_eval(
    p: &PerturbedPuf,
    rho: &QuantumState,
    mode: EvalMode,
    rng: &mut RngStream,
) -> Result<QuantumState, QError> {
    match (mode, rho) {
        (EvalMode::Matrix, _) => Ok(QuantumState::Mixed(p.eval(&rho.to_density())?)),
        (EvalMode::Trajectory, QuantumState::Pure(s)) => Ok(QuantumState::Pure(p.sample_trajectory(s, rng)?)),
        (EvalMode::Trajectory, QuantumState::Mixed(_)) => {
            Err(QError::domain("trajectory mode needs a pure input"))
        }
    }
}

/// `tr(ρσ)`; equals the fidelity whenever one side is pure.
pub fn overlap(a: &QuantumState, b: &QuantumState) -> Result<f64, QError> {
    QError::check_dim(a.dim(), b.dim())?;
    match (a, b) {
        (QuantumState::Pure(x), other) | (other, QuantumState::Pure(x)) => other.overlap_with(x),
        (QuantumState::Mixed(x), QuantumState::Mixed(y)) => {
            Ok((x.matrix() * y.matrix()).trace().re)
        }
    }
}

/// SWAP-test acceptance probability `(1 + tr ρσ) / 2`.
pub fn swap_accept_probability(a: &QuantumState, b: &QuantumState) -> Result<f64, QError> {
    Ok(((1.0 + overlap(a, b)?) / 2.0).clamp(0.5, 1.0))
}

/// One SWAP test between pure states; accepts with probability `(1 + F)/2`.
pub fn swap_test(psi: &StateVector, phi: &StateVector, rng: &mut RngStream) -> Result<bool, QError> {
    swap_test_states(&psi.clone().into(), &phi.clone().into(), rng)
}

pub fn swap_test_states(a: &QuantumState, b: &QuantumState, rng: &mut RngStream) -> Result<bool, QError> {
    let p = swap_accept_probability(a, b)?;
    Ok(rng.bernoulli(p))
}

/// Outcome of the testing algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestResult {
    pub accept: bool,
    pub f_hat: f64,
    pub k1: usize,
    pub k2: usize,
    pub accept_count: usize,
    /// Set when the responder produced something untestable.
    pub error: Option<String>,
}

impl TestResult {
    fn rejected(k1: usize, k2: usize, error: String) -> Self {
        TestResult {
            accept: false,
            f_hat: 0.0,
            k1,
            k2,
            accept_count: 0,
            error: Some(error),
        }
    }
}

fn check_copies(k1: usize, k2: usize, tau: f64) -> Result<(), QError> {
    if k1 == 0 || k2 == 0 {
        return Err(QError::domain("k1 and k2 must be positive"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(QError::domain(format!("tau must be in [0,1], got {tau}")));
    }
    Ok(())
}

/// Scores `accept_count` SWAP successes out of `r` tests.
pub fn score(accept_count: usize, r: usize, tau: f64) -> (f64, bool) {
    let f_hat = (2.0 * accept_count as f64 / r as f64 - 1.0).max(0.0);
    // the slack keeps f̂ = τ from failing on rounding of 2c/r
    (f_hat, f_hat + 1e-12 >= tau)
}

/// Testing algorithm on `k₁` response copies against `k₂` reference copies.
pub fn test_algorithm(
    response: &StateVector,
    reference: &StateVector,
    k1: usize,
    k2: usize,
    tau: f64,
    rng: &mut RngStream,
) -> Result<TestResult, QError> {
    let responses = vec![QuantumState::Pure(response.clone()); k1];
    test_copies(&responses, &QuantumState::Pure(reference.clone()), k2, tau, rng)
}

/// Testing algorithm on explicitly supplied response copies; the number of
/// copies is `k₁`.
pub fn test_copies(
    responses: &[QuantumState],
    reference: &QuantumState,
    k2: usize,
    tau: f64,
    rng: &mut RngStream,
) -> Result<TestResult, QError> {
    let k1 = responses.len();
    check_copies(k1, k2, tau)?;
    let r = k1.min(k2);
    let mut accept_count = 0;
    for resp in &responses[..r] {
        if swap_test_states(resp, reference, rng)? {
            accept_count += 1;
        }
    }
    let (f_hat, accept) = score(accept_count, r, tau);
    Ok(TestResult {
        accept,
        f_hat,
        k1,
        k2,
        accept_count,
        error: None,
    })
}

/// Exact acceptance probability of the testing algorithm for pure states at
/// fidelity `f`: `P[Binomial(r, (1+f)/2) ≥ c*]` where `c*` is the smallest
/// count scoring at least `τ`.
pub fn acceptance_probability(r: usize, f: f64, tau: f64) -> f64 {
    let p = (1.0 + f) / 2.0;
    let threshold = (0..=r).find(|&c| score(c, r, tau).1).unwrap_or(r + 1);
    (threshold..=r).map(|c| binomial_pmf(r, c, p)).sum()
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose: f64 = (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum();
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// Haar-random pair of pure states with `|⟨ψ|φ⟩|² = f` exactly.
pub fn pair_with_fidelity(dim: usize, f: f64, rng: &mut RngStream) -> Result<(StateVector, StateVector), QError> {
    if !(0.0..=1.0).contains(&f) {
        return Err(QError::domain(format!("fidelity {f} outside [0,1]")));
    }
    let psi = haar_state(dim, rng);
    if f == 1.0 {
        return Ok((psi.clone(), psi));
    }
    if dim < 2 {
        return Err(QError::domain("a one-dimensional space has no distinct states"));
    }
    for _ in 0..CALIBRATION_ATTEMPTS {
        // Gram-Schmidt a random direction against ψ
        let v = haar_state(dim, rng);
        let proj = psi.inner(&v)?;
        let chi: Vec<Complex64> = v
            .amplitudes()
            .iter()
            .zip(psi.amplitudes())
            .map(|(a, p)| a - p * proj)
            .collect();
        let norm = chi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        let (a, b) = (f.sqrt(), (1.0 - f).sqrt());
        let phi = StateVector::normalized(
            psi.amplitudes()
                .iter()
                .zip(&chi)
                .map(|(p, c)| p * a + c * (b / norm))
                .collect(),
        )?;
        return Ok((psi, phi));
    }
    Err(QError::domain("failed to calibrate an input pair"))
}

fn output_fidelity(puf: &dyn PufChannel, a: &StateVector, b: &StateVector) -> Result<f64, QError> {
    fidelity(&puf.eval(&a.to_density())?, &puf.eval(&b.to_density())?)
}

fn check_threshold(name: &str, delta: f64) -> Result<(), QError> {
    if (0.0..=1.0).contains(&delta) {
        Ok(())
    } else {
        Err(QError::domain(format!("{name} must be in [0,1], got {delta}")))
    }
}

/// Fraction of `δ_r`-indistinguishable input pairs (input fidelity drawn
/// uniformly from `[δ_r, 1]`) whose outputs are still `δ_r`-indistinguishable.
pub fn estimate_robustness(
    puf: &dyn PufChannel,
    delta_r: f64,
    trials: usize,
    rng: &mut RngStream,
) -> Result<f64, QError> {
    check_threshold("delta_r", delta_r)?;
    if trials == 0 {
        return Err(QError::domain("trials must be positive"));
    }
    let mut ok = 0;
    for _ in 0..trials {
        let f_in = delta_r + (1.0 - delta_r) * rng.uniform();
        let (a, b) = pair_with_fidelity(puf.dim(), f_in, rng)?;
        if output_fidelity(puf, &a, &b)? >= delta_r - FIDELITY_SLACK {
            ok += 1;
        }
    }
    Ok(ok as f64 / trials as f64)
}

/// Fraction of `δ_c`-distinguishable input pairs (input fidelity uniform on
/// `[0, 1 − δ_c]`) whose outputs stay `δ_c`-distinguishable.
pub fn estimate_collision_resistance(
    puf: &dyn PufChannel,
    delta_c: f64,
    trials: usize,
    rng: &mut RngStream,
) -> Result<f64, QError> {
    check_threshold("delta_c", delta_c)?;
    if trials == 0 {
        return Err(QError::domain("trials must be positive"));
    }
    let bound = 1.0 - delta_c;
    let mut ok = 0;
    for _ in 0..trials {
        let f_in = bound * rng.uniform();
        let (a, b) = pair_with_fidelity(puf.dim(), f_in, rng)?;
        if output_fidelity(puf, &a, &b)? <= bound + FIDELITY_SLACK {
            ok += 1;
        }
    }
    Ok(ok as f64 / trials as f64)
}

/// Haar-averaged output trace distance `½‖UρU† − VρV†‖₁` over pure inputs.
///
/// This stands in for the diamond-norm distance between the two devices
/// and lower-bounds it.
pub fn estimate_uniqueness(a: &UuPuf, b: &UuPuf, trials: usize, rng: &mut RngStream) -> Result<f64, QError> {
    QError::check_dim(a.dim(), b.dim())?;
    if trials == 0 {
        return Err(QError::domain("trials must be positive"));
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let psi = haar_state(a.dim(), rng);
        total += trace_distance_pure(&a.eval_pure(&psi)?, &b.eval_pure(&psi)?)?;
    }
    Ok(total / trials as f64)
}

/// One row of an estimator sweep, as written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub lambda: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub rate: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Robustness,
    CollisionResistance,
}

/// Sweeps `ε` for one base device. Every grid point reuses the same input
/// pairs (the stream is restarted), so differences between points come
/// from the channel alone.
pub fn epsilon_sweep(
    property: Property,
    base: &UuPuf,
    epsilons: &[f64],
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<EstimatorRow>, QError> {
    epsilons
        .iter()
        .map(|&eps| {
            let puf = PerturbedPuf::depolarizing(base.clone(), eps)?;
            let mut rng = RngStream::new(seed, 1);
            let rate = match property {
                Property::Robustness => estimate_robustness(&puf, delta, trials, &mut rng)?,
                Property::CollisionResistance => estimate_collision_resistance(&puf, delta, trials, &mut rng)?,
            };
            Ok(EstimatorRow {
                lambda: base.lambda(),
                epsilon: eps,
                delta,
                trials,
                rate,
                seed,
            })
        })
        .collect()
}

/// Stored challenge and reference response of a quantum CRT.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumCrtEntry {
    pub challenge: StateVector,
    pub response: StateVector,
    /// Number of stored reference copies (`k₂`).
    pub copies: usize,
}

/// Quantum challenge-response table kept in (by default perfect) memory.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumCrt {
    pub entries: Vec<QuantumCrtEntry>,
}

impl QuantumCrt {
    /// Queries `puf` on `count` Haar-random challenges, storing `k2` copies
    /// of each response.
    pub fn enroll(puf: &UuPuf, count: usize, k2: usize, rng: &mut RngStream) -> Result<Self, QError> {
        if count == 0 || k2 == 0 {
            return Err(QError::domain("count and k2 must be positive"));
        }
        let entries = (0..count)
            .map(|_| {
                let challenge = haar_state(puf.dim(), rng);
                let response = puf.eval_pure(&challenge)?;
                Ok(QuantumCrtEntry {
                    challenge,
                    response,
                    copies: k2,
                })
            })
            .collect::<Result<Vec<_>, QError>>()?;
        Ok(QuantumCrt { entries })
    }

    /// Reference state after an optional memory dwell with per-qubit
    /// dephasing `(dwell_us, t2_us)`.
    pub fn reference(&self, entry: usize, memory: Option<(f64, f64)>) -> Result<QuantumState, QError> {
        let e = self
            .entries
            .get(entry)
            .ok_or_else(|| QError::domain(format!("no CRT entry {entry}")))?;
        Ok(match memory {
            None => QuantumState::Pure(e.response.clone()),
            Some((dwell, t2)) => QuantumState::Mixed(dephase_qubits(&e.response.to_density(), dwell, t2)?),
        })
    }
}

/// Sends the stored challenge to the holder `k₁` times and tests the
/// answers against the stored reference copies.
pub fn uu_authenticate(
    puf_holder: &mut dyn Responder,
    crt: &QuantumCrt,
    entry: usize,
    k1: usize,
    tau: f64,
    rng: &mut RngStream,
) -> Result<TestResult, QError> {
    let e = crt
        .entries
        .get(entry)
        .ok_or_else(|| QError::domain(format!("no CRT entry {entry}")))?;
    check_copies(k1, e.copies, tau)?;
    let mut responses = Vec::with_capacity(k1);
    for _ in 0..k1 {
        let r = puf_holder.respond(&e.challenge, rng);
        if r.dim() != e.challenge.dim() {
            return Ok(TestResult::rejected(
                k1,
                e.copies,
                format!("response dimension {} != {}", r.dim(), e.challenge.dim()),
            ));
        }
        responses.push(r);
    }
    test_copies(&responses, &crt.reference(entry, None)?, e.copies, tau, rng)
}

/// The honest holder.
impl Responder for UuPuf {
    fn respond(&mut self, challenge: &StateVector, _rng: &mut RngStream) -> QuantumState {
        match self.eval_pure(challenge) {
            Ok(s) => QuantumState::Pure(s),
            Err(_) => QuantumState::Pure(challenge.clone()),
        }
    }
}
