//! Quantum read-out PUF.
//!
//! A [`QrPuf`] is a product of `λ` hidden single-qubit unitaries. During
//! enrollment the certifier learns every output qubit (exactly, or by
//! tomography), derives a *shifter* rotating it back to `|0⟩`, quantises
//! the shifter into a classical string `w` and records the outcome string
//! `o` obtained after applying it. The table row is `y = w ∥ o`.
//!
//! Verification replays a stored challenge, applies the dequantised
//! shifters to whatever comes back and compares the measured outcome with
//! the stored `o` by Hamming distance.
//!
//! Shifter codes are `b` bits for `θ` followed by `b` bits for `φ`, qubit by
//! qubit starting from qubit 0, each code most significant bit first, so
//! `|w| = 2bλ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
pub use crate::responder::{FnResponder, Responder};
use crate::quantum_core::{
    flip_readout, haar_unitary, make_single_qubit_state, sample_index, state_fidelity,
    tensor_ops, tensor_states, tomography_single_qubit, QError, QuantumState, RngStream,
    StateVector, UnitaryOp,
};

pub const DEFAULT_QUANT_BITS: u32 = 8;
const MAX_QUANT_BITS: u32 = 24;

/// The hidden `λ`-fold product of single-qubit gates.
#[derive(Clone, Debug, PartialEq)]
pub struct QrPuf {
    gates: Vec<UnitaryOp>,
}

impl QrPuf {
    pub fn new(gates: Vec<UnitaryOp>) -> Result<Self, QError> {
        if gates.is_empty() {
            return Err(QError::domain("a QR-PUF needs at least one qubit"));
        }
        for g in &gates {
            QError::check_dim(2, g.dim())?;
            let defect = g.unitarity_defect();
            if defect > crate::quantum_core::TOL {
                return Err(QError::NotUnitary(defect));
            }
        }
        Ok(QrPuf { gates })
    }

    pub fn lambda(&self) -> usize {
        self.gates.len()
    }

    pub fn gates(&self) -> &[UnitaryOp] {
        &self.gates
    }

    /// The full `2^λ`-dimensional operator. Anyone holding this can emulate
    /// the device exactly.
    pub fn full_unitary(&self) -> UnitaryOp {
        tensor_ops(&self.gates).expect("non-empty gate list")
    }

    /// Output qubits `Φ̂_k |ψ_{x_k}⟩` for each position `k`.
    pub fn output_qubits(&self, c: &Challenge) -> Result<Vec<StateVector>, QError> {
        if c.lambda() != self.lambda() {
            return Err(QError::DimensionMismatch {
                expected: self.lambda(),
                found: c.lambda(),
            });
        }
        c.qubit_states()?
            .iter()
            .zip(&self.gates)
            .map(|(s, g)| crate::quantum_core::apply_unitary(g, s))
            .collect()
    }

    /// Applies the device to an arbitrary register state.
    pub fn apply(&self, state: &QuantumState) -> Result<QuantumState, QError> {
        QError::check_dim(1 << self.lambda(), state.dim())?;
        let mut out = state.clone();
        for (k, g) in self.gates.iter().enumerate() {
            out = out.apply_on_qubit(k, g)?;
        }
        Ok(out)
    }
}

/// `λ` independent Haar-random single-qubit gates.
pub fn qgen_qr(lambda: usize, rng: &mut RngStream) -> Result<QrPuf, QError> {
    if lambda == 0 {
        return Err(QError::domain("lambda must be at least 1"));
    }
    QrPuf::new((0..lambda).map(|_| haar_unitary(2, rng)).collect())
}

pub fn evaluate_qr(puf: &QrPuf, c: &Challenge) -> Result<StateVector, QError> {
    tensor_states(&puf.output_qubits(c)?)
}

/// A separable challenge state with its classical label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    pub index: usize,
    /// Per-qubit `(θ, φ)` with `θ ∈ [0, π]`, `φ ∈ [0, 2π]`.
    pub angles: Vec<(f64, f64)>,
    pub label: BitString,
}

impl Challenge {
    pub fn lambda(&self) -> usize {
        self.angles.len()
    }

    pub fn qubit_states(&self) -> Result<Vec<StateVector>, QError> {
        self.angles
            .iter()
            .map(|&(t, p)| make_single_qubit_state(t, p))
            .collect()
    }

    pub fn state(&self) -> Result<StateVector, QError> {
        tensor_states(&self.qubit_states()?)
    }
}

/// Label width for `count` challenges: `⌈log₂ count⌉`, at least one bit.
pub fn label_width(count: usize) -> usize {
    (usize::BITS - count.saturating_sub(1).leading_zeros()).max(1) as usize
}

fn random_angles(lambda: usize, rng: &mut RngStream) -> Vec<(f64, f64)> {
    (0..lambda)
        .map(|_| {
            let cos_theta = 2.0 * rng.uniform() - 1.0;
            (cos_theta.acos(), 2.0 * PI * rng.uniform())
        })
        .collect()
}

/// `count` random separable challenges with pairwise non-orthogonal states.
///
/// Per qubit `cos θ` is uniform on `[−1, 1]` and `φ` uniform on `[0, 2π)`.
/// Labels enumerate `0..count` in binary.
pub fn select_challenges(
    count: usize,
    lambda: usize,
    rng: &mut RngStream,
) -> Result<Vec<Challenge>, QError> {
    if count == 0 {
        return Err(QError::domain("at least one challenge is required"));
    }
    if lambda == 0 {
        return Err(QError::domain("lambda must be at least 1"));
    }
    let width = label_width(count);
    let mut out: Vec<Challenge> = Vec::with_capacity(count);
    let mut states: Vec<StateVector> = Vec::with_capacity(count);
    while out.len() < count {
        let c = Challenge {
            index: out.len(),
            angles: random_angles(lambda, rng),
            label: BitString::from_index(out.len(), width),
        };
        let s = c.state()?;
        // orthogonality has probability zero, but is excluded outright
        let orthogonal = states
            .iter()
            .any(|prev| state_fidelity(prev, &s).map_or(true, |f| f <= 1e-14));
        if orthogonal {
            continue;
        }
        states.push(s);
        out.push(c);
    }
    Ok(out)
}

/// Quantised shifter angles for one qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShifterCode {
    pub theta: u32,
    pub phi: u32,
}

impl ShifterCode {
    fn levels(bits: u32) -> f64 {
        ((1u64 << bits) - 1) as f64
    }

    pub fn quantize(theta: f64, phi: f64, bits: u32) -> ShifterCode {
        let l = Self::levels(bits);
        ShifterCode {
            theta: (theta / PI * l).round().clamp(0.0, l) as u32,
            phi: (phi / (2.0 * PI) * l).round().clamp(0.0, l) as u32,
        }
    }

    pub fn angles(&self, bits: u32) -> (f64, f64) {
        let l = Self::levels(bits);
        (self.theta as f64 / l * PI, self.phi as f64 / l * 2.0 * PI)
    }

    pub fn to_unitary(&self, bits: u32) -> UnitaryOp {
        let (t, p) = self.angles(bits);
        shifter_unitary(t, p)
    }

    pub fn to_bits(&self, bits: u32) -> BitString {
        BitString::from_index(self.theta as usize, bits as usize)
            .concat(&BitString::from_index(self.phi as usize, bits as usize))
    }
}

/// The rotation sending `cos θ|0⟩ + e^{iφ} sin θ|1⟩` to `|0⟩`.
pub fn shifter_unitary(theta: f64, phi: f64) -> UnitaryOp {
    let (c, s) = (theta.cos(), theta.sin());
    let m = [
        [Complex64::new(c, 0.0), Complex64::from_polar(s, -phi)],
        [-Complex64::from_polar(s, phi), Complex64::new(c, 0.0)],
    ];
    UnitaryOp::from_2x2(m).expect("rotation is unitary")
}

/// Canonical angles of a single-qubit ray: `θ ∈ [0, π/2]`, `φ ∈ [0, 2π)`.
pub fn qubit_angles(s: &StateVector) -> Result<(f64, f64), QError> {
    QError::check_dim(2, s.dim())?;
    let norm2 = s.norm_sqr();
    if (norm2 - 1.0).abs() > crate::quantum_core::TOL {
        return Err(QError::NotNormalized(norm2));
    }
    let [a0, a1] = [s.amplitudes()[0], s.amplitudes()[1]];
    let theta = a1.norm().atan2(a0.norm());
    let phi = if a0.norm() < 1e-15 || a1.norm() < 1e-15 {
        0.0
    } else {
        (a1.arg() - a0.arg()).rem_euclid(2.0 * PI)
    };
    // rem_euclid can land on 2π through rounding
    Ok((theta, if phi >= 2.0 * PI { 0.0 } else { phi }))
}

/// A derived shifter: the exact rotation plus its quantised code.
#[derive(Clone, Debug, PartialEq)]
pub struct Shifter {
    pub exact: UnitaryOp,
    pub code: ShifterCode,
}

pub fn derive_shifter(output_qubit: &StateVector, bits: u32) -> Result<Shifter, QError> {
    check_bits(bits)?;
    let (theta, phi) = qubit_angles(output_qubit)?;
    Ok(Shifter {
        exact: shifter_unitary(theta, phi),
        code: ShifterCode::quantize(theta, phi, bits),
    })
}

fn check_bits(bits: u32) -> Result<(), QError> {
    if (1..=MAX_QUANT_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(QError::domain(format!(
            "quantisation bits must be in 1..={MAX_QUANT_BITS}, got {bits}"
        )))
    }
}

/// Shifters for a whole register.
#[derive(Clone, Debug, PartialEq)]
pub struct ShifterConfig {
    pub exact_ops: Vec<UnitaryOp>,
    pub codes: Vec<ShifterCode>,
    pub w: BitString,
}

impl ShifterConfig {
    pub fn from_qubits(qubits: &[StateVector], bits: u32) -> Result<Self, QError> {
        let shifters = qubits
            .iter()
            .map(|q| derive_shifter(q, bits))
            .collect::<Result<Vec<_>, _>>()?;
        let codes: Vec<ShifterCode> = shifters.iter().map(|s| s.code).collect();
        Ok(ShifterConfig {
            exact_ops: shifters.into_iter().map(|s| s.exact).collect(),
            w: encode_w(&codes, bits),
            codes,
        })
    }
}

pub fn encode_w(codes: &[ShifterCode], bits: u32) -> BitString {
    let mut w = BitString::default();
    for c in codes {
        w.extend_from(&c.to_bits(bits));
    }
    w
}

pub fn decode_w(w: &BitString, lambda: usize, bits: u32) -> Result<Vec<ShifterCode>, QError> {
    let b = bits as usize;
    if w.len() != 2 * b * lambda {
        return Err(QError::domain(format!(
            "w has {} bits, expected {}",
            w.len(),
            2 * b * lambda
        )));
    }
    let word = |k: usize| BitString::new(w.bits()[k * b..(k + 1) * b].to_vec()).to_index() as u32;
    Ok((0..lambda)
        .map(|q| ShifterCode {
            theta: word(2 * q),
            phi: word(2 * q + 1),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnrollMode {
    Analytic,
    Tomography,
}

/// One challenge-response row.
#[derive(Clone, Debug, PartialEq)]
pub struct CrtEntry {
    pub challenge: Challenge,
    pub w: BitString,
    pub o: BitString,
    pub y: BitString,
}

/// The classical challenge-response table.
#[derive(Clone, Debug, PartialEq)]
pub struct ChallengeResponseTable {
    pub lambda: usize,
    pub n: usize,
    pub b: u32,
    pub mode: EnrollMode,
    pub entries: Vec<CrtEntry>,
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    index: usize,
    angles: Vec<(f64, f64)>,
    w: BitString,
    o: BitString,
    y: BitString,
}

#[derive(Serialize, Deserialize)]
struct WireCrt {
    lambda: usize,
    n: usize,
    b: u32,
    mode: EnrollMode,
    entries: Vec<WireEntry>,
}

impl ChallengeResponseTable {
    pub fn entry(&self, i: usize) -> Option<&CrtEntry> {
        self.entries.get(i)
    }

    /// Dequantised shifters of entry `i`.
    pub fn shifters(&self, i: usize) -> Result<Vec<UnitaryOp>, QError> {
        let e = self
            .entry(i)
            .ok_or_else(|| QError::domain(format!("no CRT entry {i}")))?;
        Ok(decode_w(&e.w, self.lambda, self.b)?
            .iter()
            .map(|c| c.to_unitary(self.b))
            .collect())
    }

    /// Structural checks: unique indices, consistent lengths, `y = w ∥ o`.
    pub fn validate(&self) -> Result<(), QError> {
        check_bits(self.b)?;
        let mut seen = std::collections::HashSet::new();
        let lw = 2 * self.b as usize * self.lambda;
        for e in &self.entries {
            if !seen.insert(e.challenge.index) {
                return Err(QError::domain(format!("duplicate challenge index {}", e.challenge.index)));
            }
            if e.challenge.lambda() != self.lambda || e.w.len() != lw || e.o.len() != self.lambda {
                return Err(QError::domain(format!("entry {} has inconsistent lengths", e.challenge.index)));
            }
            if e.y != e.w.concat(&e.o) {
                return Err(QError::domain(format!("entry {}: y is not w || o", e.challenge.index)));
            }
            e.challenge.qubit_states()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        let wire = WireCrt {
            lambda: self.lambda,
            n: self.n,
            b: self.b,
            mode: self.mode,
            entries: self
                .entries
                .iter()
                .map(|e| WireEntry {
                    index: e.challenge.index,
                    angles: e.challenge.angles.clone(),
                    w: e.w.clone(),
                    o: e.o.clone(),
                    y: e.y.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&wire)
    }

    pub fn from_json(s: &str) -> Result<Self, QError> {
        let wire: WireCrt =
            serde_json::from_str(s).map_err(|e| QError::domain(format!("bad CRT document: {e}")))?;
        let crt = ChallengeResponseTable {
            lambda: wire.lambda,
            n: wire.n,
            b: wire.b,
            mode: wire.mode,
            entries: wire
                .entries
                .into_iter()
                .map(|e| CrtEntry {
                    challenge: Challenge {
                        index: e.index,
                        angles: e.angles,
                        label: BitString::from_index(e.index, wire.n),
                    },
                    w: e.w,
                    o: e.o,
                    y: e.y,
                })
                .collect(),
        };
        crt.validate()?;
        Ok(crt)
    }
}

/// Majority vote per position; ties resolve to `1`.
pub fn majority(samples: &[BitString]) -> BitString {
    let Some(first) = samples.first() else {
        return BitString::default();
    };
    (0..first.len())
        .map(|k| {
            let ones = samples.iter().filter(|s| s.get(k) == Some(true)).count();
            2 * ones >= samples.len()
        })
        .collect::<Vec<_>>()
        .into()
}

/// Applies dequantised shifters and draws one computational-basis outcome,
/// flipping each read bit with `readout_flip_prob`.
pub fn shifted_readout(
    shifters: &[UnitaryOp],
    response: &QuantumState,
    readout_flip_prob: f64,
    rng: &mut RngStream,
) -> Result<BitString, QError> {
    QError::check_dim(1 << shifters.len(), response.dim())?;
    let mut s = response.clone();
    for (k, g) in shifters.iter().enumerate() {
        s = s.apply_on_qubit(k, g)?;
    }
    let idx = sample_index(&s.probabilities(), rng);
    let bits = BitString::from_index(idx, shifters.len());
    Ok(bits
        .bits()
        .iter()
        .map(|&b| flip_readout(b, readout_flip_prob, rng))
        .collect::<Vec<_>>()
        .into())
}

/// Most likely outcome per qubit after the quantised shifters.
fn most_likely_outcome(qubits: &[StateVector], codes: &[ShifterCode], bits: u32) -> Result<BitString, QError> {
    qubits
        .iter()
        .zip(codes)
        .map(|(q, c)| {
            let shifted = crate::quantum_core::apply_unitary(&c.to_unitary(bits), q)?;
            Ok(shifted.probabilities()[1] > 0.5)
        })
        .collect::<Result<Vec<_>, QError>>()
        .map(BitString::from)
}

/// Builds the table for `challenges` against `puf`.
///
/// Analytic mode reads the exact output qubits and takes the most likely
/// outcome, so a noiseless `o` is exactly `0^λ`. Tomography mode estimates
/// every output qubit from `shots` preparations and fixes each bit of `o`
/// by majority over `shots / 3` measurements of the shifted true output.
pub fn enroll(
    puf: &QrPuf,
    challenges: &[Challenge],
    mode: EnrollMode,
    shots: usize,
    bits: u32,
    rng: &mut RngStream,
) -> Result<ChallengeResponseTable, QError> {
    check_bits(bits)?;
    if mode == EnrollMode::Tomography && shots < 3 {
        return Err(QError::domain(format!("tomography needs at least 3 shots, got {shots}")));
    }
    let n = label_width(challenges.len());
    let mut entries = Vec::with_capacity(challenges.len());
    for c in challenges {
        let truth = puf.output_qubits(c)?;
        let (w, o) = match mode {
            EnrollMode::Analytic => {
                let cfg = ShifterConfig::from_qubits(&truth, bits)?;
                let o = most_likely_outcome(&truth, &cfg.codes, bits)?;
                (cfg.w, o)
            }
            EnrollMode::Tomography => {
                let estimates = truth
                    .iter()
                    .map(|q| tomography_single_qubit(|| q.clone(), shots, rng).map(|t| t.pure_state_estimate))
                    .collect::<Result<Vec<_>, _>>()?;
                let cfg = ShifterConfig::from_qubits(&estimates, bits)?;
                let shifters: Vec<UnitaryOp> = cfg.codes.iter().map(|c| c.to_unitary(bits)).collect();
                let state = QuantumState::Pure(tensor_states(&truth)?);
                let samples = (0..(shots / 3).max(1))
                    .map(|_| shifted_readout(&shifters, &state, 0.0, rng))
                    .collect::<Result<Vec<_>, _>>()?;
                (cfg.w, majority(&samples))
            }
        };
        entries.push(CrtEntry {
            challenge: Challenge {
                label: BitString::from_index(c.index, n),
                ..c.clone()
            },
            y: w.concat(&o),
            w,
            o,
        });
    }
    let crt = ChallengeResponseTable {
        lambda: puf.lambda(),
        n,
        b: bits,
        mode,
        entries,
    };
    crt.validate()?;
    Ok(crt)
}

/// The honest holder.
impl Responder for QrPuf {
    fn respond(&mut self, challenge: &StateVector, _rng: &mut RngStream) -> QuantumState {
        self.apply(&QuantumState::Pure(challenge.clone()))
            .unwrap_or_else(|_| QuantumState::Pure(challenge.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub accept: bool,
    pub observed_o: BitString,
    pub hamming_weight: usize,
    /// Set when the response could not be processed (e.g. wrong dimension).
    pub error: Option<String>,
}

impl VerifyOutcome {
    fn rejected(lambda: usize, error: String) -> Self {
        VerifyOutcome {
            accept: false,
            observed_o: BitString::default(),
            hamming_weight: lambda,
            error: Some(error),
        }
    }
}

/// Decides a response from repeated shifted readouts.
pub fn decide(stored_o: &BitString, samples: &[BitString], hamming_threshold: usize) -> VerifyOutcome {
    let observed_o = majority(samples);
    let hamming_weight = observed_o.hamming_distance(stored_o);
    VerifyOutcome {
        accept: hamming_weight <= hamming_threshold,
        observed_o,
        hamming_weight,
        error: None,
    }
}

/// Challenges `responder` with CRT entry `entry_index`.
///
/// A re-queryable responder is asked `shots_per_qubit` times and each qubit
/// is decided by majority (ties count as `1`); otherwise one shot is used.
/// A wrong-dimension response is a rejection with `error` set, not an `Err`.
pub fn verify(
    crt: &ChallengeResponseTable,
    entry_index: usize,
    responder: &mut dyn Responder,
    hamming_threshold: usize,
    shots_per_qubit: usize,
    rng: &mut RngStream,
) -> Result<VerifyOutcome, QError> {
    let entry = crt
        .entry(entry_index)
        .ok_or_else(|| QError::domain(format!("no CRT entry {entry_index}")))?;
    let shifters = crt.shifters(entry_index)?;
    let challenge = entry.challenge.state()?;
    let shots = if responder.requeryable() { shots_per_qubit.max(1) } else { 1 };
    let mut samples = Vec::with_capacity(shots);
    for _ in 0..shots {
        let response = responder.respond(&challenge, rng);
        if response.dim() != challenge.dim() {
            return Ok(VerifyOutcome::rejected(
                crt.lambda,
                format!("response dimension {} != {}", response.dim(), challenge.dim()),
            ));
        }
        samples.push(shifted_readout(&shifters, &response, 0.0, rng)?);
    }
    Ok(decide(&entry.o, &samples, hamming_threshold))
}

/// Hands out CRT entries uniformly at random, each at most once.
#[derive(Clone, Debug)]
pub struct CrtSession {
    used: Vec<bool>,
}

impl CrtSession {
    pub fn new(crt: &ChallengeResponseTable) -> Self {
        CrtSession {
            used: vec![false; crt.entries.len()],
        }
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }

    pub fn draw(&mut self, rng: &mut RngStream) -> Option<usize> {
        let free: Vec<usize> = (0..self.used.len()).filter(|&i| !self.used[i]).collect();
        if free.is_empty() {
            return None;
        }
        let pick = free[rng.below(free.len())];
        self.used[pick] = true;
        Some(pick)
    }
}
