//! HMP₄ quantum multi-factor authentication.
//!
//! A 4-bit string `x` is stored as the 2-qubit state
//! `½ Σᵢ (−1)^{xᵢ} |i⟩`. A verifier picks a matching `m`; measuring in the
//! matching basis yields `(a, b)` where `a` names the pair and `b` is the
//! parity of `x` on that pair:
//!
//! | m | a = 0  | a = 1  |
//! |---|--------|--------|
//! | 0 | (1, 2) | (3, 4) |
//! | 1 | (1, 3) | (2, 4) |
//!
//! Indices in the table are 1-based; code uses basis indices 0..3.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::quantum_core::{
    dephase_qubits, flip_readout, haar_state, sample_index, tensor_states, Complex64, NoiseParams,
    QError, QuantumState, RngStream, StateVector,
};

pub const TOKEN_ID_BITS: usize = 64;
pub const DEFAULT_REGISTERS: usize = 16;
pub const DEFAULT_T: usize = 12;

/// One of the two pair matchings of `{0, 1, 2, 3}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HmpMatching(u8);

impl HmpMatching {
    pub fn new(m: u8) -> Result<Self, QError> {
        if m > 1 {
            return Err(QError::domain(format!("matching must be 0 or 1, got {m}")));
        }
        Ok(HmpMatching(m))
    }

    pub fn random(rng: &mut RngStream) -> Self {
        HmpMatching(rng.below(2) as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn pairs(self) -> [(usize, usize); 2] {
        if self.0 == 0 {
            [(0, 1), (2, 3)]
        } else {
            [(0, 2), (1, 3)]
        }
    }

    /// The basis vector `(|i⟩ + (−1)^b |j⟩)/√2` for pair `a`.
    pub fn basis_vector(self, a: u8, b: u8) -> StateVector {
        let (i, j) = self.pairs()[a as usize];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::new(0.0, 0.0); 4];
        amps[i] = Complex64::new(h, 0.0);
        amps[j] = Complex64::new(if b == 0 { h } else { -h }, 0.0);
        StateVector::from_raw(amps)
    }
}

fn check_x(x: &BitString) -> Result<(), QError> {
    if x.len() != 4 {
        return Err(QError::domain(format!("HMP4 strings have 4 bits, got {}", x.len())));
    }
    Ok(())
}

/// Encodes `x` as `½ Σᵢ (−1)^{xᵢ} |i⟩`.
pub fn encode_hmp4(x: &BitString) -> Result<StateVector, QError> {
    check_x(x)?;
    let amps = x
        .bits()
        .iter()
        .map(|&bit| Complex64::new(if bit { -0.5 } else { 0.5 }, 0.0))
        .collect();
    Ok(StateVector::from_raw(amps))
}

/// Separable control encoding of the first two bits of `x`:
/// `(|0⟩ + (−1)^{x₁}|1⟩)/√2 ⊗ (|0⟩ + (−1)^{x₂}|1⟩)/√2`.
pub fn encode_control(x: &BitString) -> Result<StateVector, QError> {
    check_x(x)?;
    let q = |bit: bool| if bit { StateVector::minus() } else { StateVector::plus() };
    tensor_states(&[q(x.bits()[0]), q(x.bits()[1])])
}

/// Born probabilities of the four outcomes, indexed `2a + b`.
pub fn outcome_probabilities(state: &QuantumState, m: HmpMatching) -> Result<[f64; 4], QError> {
    QError::check_dim(4, state.dim())?;
    let mut p = [0.0; 4];
    for (k, slot) in p.iter_mut().enumerate() {
        *slot = state.overlap_with(&m.basis_vector((k >> 1) as u8, (k & 1) as u8))?.max(0.0);
    }
    Ok(p)
}

/// Projective measurement in the matching basis.
pub fn measure_hmp4(state: &StateVector, m: HmpMatching, rng: &mut RngStream) -> Result<(u8, u8), QError> {
    measure_hmp4_state(&QuantumState::Pure(state.clone()), m, rng)
}

pub fn measure_hmp4_state(state: &QuantumState, m: HmpMatching, rng: &mut RngStream) -> Result<(u8, u8), QError> {
    let k = sample_index(&outcome_probabilities(state, m)?, rng);
    Ok(((k >> 1) as u8, (k & 1) as u8))
}

/// `b == x₁⊕x_{2+m}` when `a = 0`, else `b == x_{3−m}⊕x₄` (1-based).
pub fn hmp_check(x: &BitString, m: HmpMatching, a: u8, b: u8) -> bool {
    if x.len() != 4 || a > 1 || b > 1 {
        return false;
    }
    let (i, j) = m.pairs()[a as usize];
    let bits = x.bits();
    (bits[i] ^ bits[j]) == (b == 1)
}

/// Exact probability that a state passes the check for string `x` under
/// matching `m`.
pub fn pass_probability(state: &QuantumState, x: &BitString, m: HmpMatching) -> Result<f64, QError> {
    let p = outcome_probabilities(state, m)?;
    Ok((0..4)
        .filter(|&k| hmp_check(x, m, (k >> 1) as u8, (k & 1) as u8))
        .map(|k| p[k])
        .sum())
}

/// Pass probability of `state` averaged over uniform `x` and `m` by
/// enumeration.
pub fn average_pass_probability(state: &QuantumState) -> Result<f64, QError> {
    let mut total = 0.0;
    for xi in 0..16 {
        let x = BitString::from_index(xi, 4);
        for m in 0..2 {
            total += pass_probability(state, &x, HmpMatching(m))?;
        }
    }
    Ok(total / 32.0)
}

/// Per-register pass probability of a holder that measured in a uniformly
/// random matching at issue time and later re-measures the collapsed state
/// in the requested matching, by enumeration over `x`, both matchings and
/// every issue-time outcome.
pub fn token_clone_pass_probability() -> Result<f64, QError> {
    let mut total = 0.0;
    for xi in 0..16 {
        let x = BitString::from_index(xi, 4);
        let honest = QuantumState::Pure(encode_hmp4(&x)?);
        for m_issue in 0..2 {
            let mi = HmpMatching(m_issue);
            let p_issue = outcome_probabilities(&honest, mi)?;
            for m_val in 0..2 {
                let mv = HmpMatching(m_val);
                for (k, &pk) in p_issue.iter().enumerate() {
                    if pk == 0.0 {
                        continue;
                    }
                    let (a, b) = ((k >> 1) as u8, (k & 1) as u8);
                    let pass = if m_issue == m_val {
                        f64::from(u8::from(hmp_check(&x, mv, a, b)))
                    } else {
                        pass_probability(&QuantumState::Pure(mi.basis_vector(a, b)), &x, mv)?
                    };
                    total += pk * pass;
                }
            }
        }
    }
    Ok(total / 64.0)
}

/// Holder-side register: the state and bookkeeping, never `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmpRegister {
    pub state: StateVector,
    pub used: bool,
    pub stored_at_us: f64,
    pub control: bool,
}

/// What the user carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmpToken {
    pub token_id: BitString,
    pub registers: Vec<HmpRegister>,
}

/// Server-side record of an issued token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerRecord {
    pub token_id: BitString,
    pub x: Vec<BitString>,
    pub used: Vec<bool>,
    pub control: Vec<bool>,
    pub stored_at_us: f64,
}

impl ServerRecord {
    /// Indices eligible for validation.
    pub fn unused(&self) -> Vec<usize> {
        (0..self.x.len()).filter(|&i| !self.used[i] && !self.control[i]).collect()
    }
}

/// Issues `r` entangled registers at time 0.
pub fn issue(r: usize, rng: &mut RngStream) -> Result<(ServerRecord, HmpToken), QError> {
    issue_with_controls(r, 0, 0.0, rng)
}

/// Issues `r` registers of which the last `controls` use the separable
/// control encoding. Controls never take part in validation.
pub fn issue_with_controls(
    r: usize,
    controls: usize,
    stored_at_us: f64,
    rng: &mut RngStream,
) -> Result<(ServerRecord, HmpToken), QError> {
    if r == 0 {
        return Err(QError::domain("register count must be positive"));
    }
    if controls > r {
        return Err(QError::domain(format!("{controls} controls exceed {r} registers")));
    }
    if !(stored_at_us.is_finite() && stored_at_us >= 0.0) {
        return Err(QError::domain("storage time must be a nonnegative number"));
    }
    let token_id = BitString::new((0..TOKEN_ID_BITS).map(|_| rng.bernoulli(0.5)).collect());
    let x: Vec<BitString> = (0..r).map(|_| BitString::from_index(rng.below(16), 4)).collect();
    let control: Vec<bool> = (0..r).map(|i| i >= r - controls).collect();
    let registers = x
        .iter()
        .zip(&control)
        .map(|(xi, &c)| {
            Ok(HmpRegister {
                state: if c { encode_control(xi)? } else { encode_hmp4(xi)? },
                used: false,
                stored_at_us,
                control: c,
            })
        })
        .collect::<Result<Vec<_>, QError>>()?;
    Ok((
        ServerRecord {
            token_id: token_id.clone(),
            x,
            used: vec![false; r],
            control,
            stored_at_us,
        },
        HmpToken { token_id, registers },
    ))
}

/// Server → holder message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRequest {
    pub token_id: BitString,
    pub l_s: Vec<usize>,
    pub bases: Vec<HmpMatching>,
    /// Number of registers the holder must answer for.
    pub answer_count: usize,
    pub now_us: f64,
}

/// Holder → server message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReply {
    pub token_id: BitString,
    pub l_d: Vec<usize>,
    pub replies: Vec<(u8, u8)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationTranscript {
    pub l_s: Vec<usize>,
    pub l_d: Vec<usize>,
    pub bases: BTreeMap<usize, HmpMatching>,
    pub replies: BTreeMap<usize, (u8, u8)>,
    pub accept: bool,
    pub error_count: usize,
    pub malformed: Option<String>,
}

/// Anything that can answer a validation request.
pub trait HmpHolder {
    fn answer(&mut self, request: &ValidationRequest, rng: &mut RngStream) -> HolderReply;
}

fn pick_l_d(request: &ValidationRequest, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = rng
        .choose_distinct(request.l_s.len(), request.answer_count.min(request.l_s.len()))
        .into_iter()
        .map(|k| request.l_s[k])
        .collect();
    idx.sort_unstable();
    idx
}

fn basis_for(request: &ValidationRequest, index: usize) -> HmpMatching {
    let pos = request.l_s.iter().position(|&i| i == index).unwrap_or(0);
    request.bases.get(pos).copied().unwrap_or(HmpMatching(0))
}

/// A register as held in the user's memory.
#[derive(Clone, Debug, PartialEq)]
pub struct HeldRegister {
    pub state: QuantumState,
    pub stored_at_us: f64,
    pub used: bool,
}

/// Stores the token in (optionally noisy) memory and measures as asked.
#[derive(Clone, Debug)]
pub struct HonestHolder {
    pub token_id: BitString,
    pub registers: Vec<HeldRegister>,
    pub noise: Option<NoiseParams>,
}

impl HonestHolder {
    pub fn new(token: HmpToken, noise: Option<NoiseParams>) -> Self {
        let registers = token
            .registers
            .into_iter()
            .map(|r| HeldRegister {
                state: QuantumState::Pure(r.state),
                stored_at_us: r.stored_at_us,
                used: r.used,
            })
            .collect();
        HonestHolder {
            token_id: token.token_id,
            registers,
            noise,
        }
    }

    /// A holder whose registers arrived as `states` at `stored_at_us`.
    pub fn from_states(
        token_id: BitString,
        states: Vec<QuantumState>,
        stored_at_us: f64,
        noise: Option<NoiseParams>,
    ) -> Self {
        let registers = states
            .into_iter()
            .map(|state| HeldRegister {
                state,
                stored_at_us,
                used: false,
            })
            .collect();
        HonestHolder {
            token_id,
            registers,
            noise,
        }
    }

    fn stored_state(&self, index: usize, now_us: f64) -> Result<QuantumState, QError> {
        let reg = self
            .registers
            .get(index)
            .ok_or_else(|| QError::domain(format!("no register {index}")))?;
        Ok(match &self.noise {
            None => reg.state.clone(),
            Some(n) => {
                let dwell = (now_us - reg.stored_at_us).max(0.0);
                QuantumState::Mixed(dephase_qubits(&reg.state.to_density(), dwell, n.t2_us)?)
            }
        })
    }
}

impl HmpHolder for HonestHolder {
    fn answer(&mut self, request: &ValidationRequest, rng: &mut RngStream) -> HolderReply {
        let l_d = pick_l_d(request, rng);
        let mut replies = Vec::with_capacity(l_d.len());
        for &i in &l_d {
            let m = basis_for(request, i);
            let outcome = self
                .stored_state(i, request.now_us)
                .and_then(|s| measure_hmp4_state(&s, m, rng));
            let (mut a, mut b) = match outcome {
                Ok(ab) => ab,
                Err(_) => (2, 2),
            };
            if let Some(n) = &self.noise {
                if a <= 1 {
                    a = u8::from(flip_readout(a == 1, n.readout_flip_prob, rng));
                    b = u8::from(flip_readout(b == 1, n.readout_flip_prob, rng));
                }
            }
            if let Some(reg) = self.registers.get_mut(i) {
                reg.used = true;
            }
            replies.push((a, b));
        }
        HolderReply {
            token_id: self.token_id.clone(),
            l_d,
            replies,
        }
    }
}

/// Holds no token; measures fresh Haar-random states.
#[derive(Clone, Debug)]
pub struct RandomGuessHolder {
    pub token_id: BitString,
}

impl HmpHolder for RandomGuessHolder {
    fn answer(&mut self, request: &ValidationRequest, rng: &mut RngStream) -> HolderReply {
        let l_d = pick_l_d(request, rng);
        let replies = l_d
            .iter()
            .map(|&i| {
                let s = haar_state(4, rng);
                measure_hmp4(&s, basis_for(request, i), rng).unwrap_or((2, 2))
            })
            .collect();
        HolderReply {
            token_id: self.token_id.clone(),
            l_d,
            replies,
        }
    }
}

/// Measured every register in a random matching right after issue and
/// keeps only the classical record.
#[derive(Clone, Debug)]
pub struct TokenCloneHolder {
    pub token_id: BitString,
    pub record: Vec<(HmpMatching, u8, u8)>,
}

impl TokenCloneHolder {
    pub fn capture(token: &HmpToken, rng: &mut RngStream) -> Result<Self, QError> {
        let states: Vec<QuantumState> = token.registers.iter().map(|r| r.state.clone().into()).collect();
        TokenCloneHolder::capture_states(token.token_id.clone(), &states, rng)
    }

    pub fn capture_states(token_id: BitString, states: &[QuantumState], rng: &mut RngStream) -> Result<Self, QError> {
        let record = states
            .iter()
            .map(|state| {
                let m = HmpMatching::random(rng);
                let (a, b) = measure_hmp4_state(state, m, rng)?;
                Ok((m, a, b))
            })
            .collect::<Result<Vec<_>, QError>>()?;
        Ok(TokenCloneHolder { token_id, record })
    }
}

impl HmpHolder for TokenCloneHolder {
    fn answer(&mut self, request: &ValidationRequest, rng: &mut RngStream) -> HolderReply {
        let l_d = pick_l_d(request, rng);
        let replies = l_d
            .iter()
            .map(|&i| {
                let m = basis_for(request, i);
                match self.record.get(i) {
                    Some(&(mi, a, b)) if mi == m => (a, b),
                    Some(&(mi, a, b)) => measure_hmp4(&mi.basis_vector(a, b), m, rng).unwrap_or((2, 2)),
                    None => (2, 2),
                }
            })
            .collect();
        HolderReply {
            token_id: self.token_id.clone(),
            l_d,
            replies,
        }
    }
}

/// Draws `L_s` and its bases for a validation round.
pub fn make_request(server: &ServerRecord, t: usize, now_us: f64, rng: &mut RngStream) -> Result<ValidationRequest, QError> {
    if t == 0 || t % 3 != 0 {
        return Err(QError::domain(format!("t must be a positive multiple of 3, got {t}")));
    }
    let unused = server.unused();
    if unused.len() < t {
        return Err(QError::domain(format!("only {} unused registers, need {t}", unused.len())));
    }
    let mut l_s: Vec<usize> = rng
        .choose_distinct(unused.len(), t)
        .into_iter()
        .map(|k| unused[k])
        .collect();
    l_s.sort_unstable();
    let bases = l_s.iter().map(|_| HmpMatching::random(rng)).collect();
    Ok(ValidationRequest {
        token_id: server.token_id.clone(),
        l_s,
        bases,
        answer_count: 2 * t / 3,
        now_us,
    })
}

fn reply_problem(request: &ValidationRequest, reply: &HolderReply) -> Option<String> {
    if reply.token_id != request.token_id {
        return Some("token id mismatch".into());
    }
    if reply.l_d.len() != request.answer_count {
        return Some(format!("expected {} answers, got {}", request.answer_count, reply.l_d.len()));
    }
    if reply.replies.len() != reply.l_d.len() {
        return Some("reply count does not match L_d".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for &i in &reply.l_d {
        if !request.l_s.contains(&i) {
            return Some(format!("index {i} not in L_s"));
        }
        if !seen.insert(i) {
            return Some(format!("index {i} repeated"));
        }
    }
    if reply.replies.iter().any(|&(a, b)| a > 1 || b > 1) {
        return Some("outcome bits must be 0 or 1".into());
    }
    None
}

/// Scores a reply and marks every index of `L_s` used.
pub fn finish_validation(
    server: &mut ServerRecord,
    request: &ValidationRequest,
    reply: &HolderReply,
    error_tolerance: usize,
) -> ValidationTranscript {
    let bases: BTreeMap<usize, HmpMatching> = request.l_s.iter().copied().zip(request.bases.iter().copied()).collect();
    let reused = request.l_s.iter().find(|&&i| server.used.get(i).copied().unwrap_or(true));
    let malformed = match reused {
        Some(i) => Some(format!("register {i} already used")),
        None => reply_problem(request, reply),
    };
    for &i in &request.l_s {
        if let Some(u) = server.used.get_mut(i) {
            *u = true;
        }
    }
    let replies: BTreeMap<usize, (u8, u8)> = reply.l_d.iter().copied().zip(reply.replies.iter().copied()).collect();
    let error_count = if malformed.is_some() {
        reply.l_d.len()
    } else {
        replies
            .iter()
            .filter(|(i, &(a, b))| !hmp_check(&server.x[**i], bases[*i], a, b))
            .count()
    };
    ValidationTranscript {
        l_s: request.l_s.clone(),
        l_d: reply.l_d.clone(),
        bases,
        replies,
        accept: malformed.is_none() && error_count <= error_tolerance,
        error_count,
        malformed,
    }
}

/// One complete validation round.
pub fn validate(
    server: &mut ServerRecord,
    holder: &mut dyn HmpHolder,
    t: usize,
    error_tolerance: usize,
    now_us: f64,
    rng: &mut RngStream,
) -> Result<ValidationTranscript, QError> {
    let request = make_request(server, t, now_us, rng)?;
    let reply = holder.answer(&request, rng);
    Ok(finish_validation(server, &request, &reply, error_tolerance))
}

/// Probability that `n` independent registers each passing with
/// probability `p` produce at most `tolerance` errors.
pub fn session_accept_probability(p: f64, n: usize, tolerance: usize) -> f64 {
    (0..=tolerance.min(n))
        .map(|e| {
            let ln_choose: f64 = (0..e).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum();
            ln_choose.exp() * p.powi((n - e) as i32) * (1.0 - p).powi(e as i32)
        })
        .sum()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn encode_examples() {
        let s = encode_hmp4(&bits("0000")).unwrap();
        assert!(s.amplitudes().iter().all(|a| (a.re - 0.5).abs() < 1e-15 && a.im == 0.0));
        let s = encode_hmp4(&bits("1000")).unwrap();
        assert_eq!(s.amplitudes()[0].re, -0.5);
        let f = crate::quantum_core::state_fidelity(&encode_hmp4(&bits("0000")).unwrap(), &encode_hmp4(&bits("1111")).unwrap());
        assert!((f.unwrap() - 1.0).abs() < 1e-15);
        assert!(encode_hmp4(&bits("101")).is_err());
    }

    #[test]
    fn matching_bases_are_orthonormal() {
        for m in 0..2 {
            let m = HmpMatching(m);
            let vs: Vec<_> = (0..4).map(|k| m.basis_vector(k >> 1, k & 1)).collect();
            for (i, u) in vs.iter().enumerate() {
                for (j, v) in vs.iter().enumerate() {
                    let ip = u.inner(v).unwrap().norm();
                    assert!((ip - f64::from(u8::from(i == j))).abs() < 1e-15);
                }
            }
        }
        assert!(HmpMatching::new(2).is_err());
    }

    #[test]
    fn check_examples() {
        for m in 0..2 {
            for a in 0..2 {
                assert!(hmp_check(&bits("0000"), HmpMatching(m), a, 0));
            }
        }
        assert!(hmp_check(&bits("1010"), HmpMatching(1), 0, 0));
        assert!(!hmp_check(&bits("1010"), HmpMatching(0), 0, 0));
    }

    /// Direct transcription of the verification relation, 1-based.
    fn relation(x: &BitString, m: u8, a: u8, b: u8) -> bool {
        let xb = |i: usize| u8::from(x.bits()[i - 1]);
        let expected = if a == 0 { xb(1) ^ xb(2 + m as usize) } else { xb(3 - m as usize) ^ xb(4) };
        b == expected
    }

    #[test]
    fn check_matches_relation_everywhere() {
        for xi in 0..16 {
            let x = BitString::from_index(xi, 4);
            for m in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        assert_eq!(hmp_check(&x, HmpMatching(m), a, b), relation(&x, m, a, b));
                    }
                }
            }
        }
    }

    #[test]
    fn exhaustive_completeness() {
        for xi in 0..16 {
            let x = BitString::from_index(xi, 4);
            let s = QuantumState::Pure(encode_hmp4(&x).unwrap());
            for m in 0..2 {
                let p = outcome_probabilities(&s, HmpMatching(m)).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (k, &pk) in p.iter().enumerate() {
                    if pk > 1e-12 {
                        assert!(relation(&x, m, (k >> 1) as u8, (k & 1) as u8));
                    }
                }
                // marginal of a is exactly one half
                assert!((p[0] + p[1] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn measurement_examples() {
        let mut rng = RngStream::new(1, 0);
        let s = encode_hmp4(&bits("0000")).unwrap();
        let n = 10_000;
        let mut a0 = 0;
        for _ in 0..n {
            let (a, b) = measure_hmp4(&s, HmpMatching(0), &mut rng).unwrap();
            assert_eq!(b, 0);
            a0 += usize::from(a == 0);
        }
        assert!((a0 as f64 / n as f64 - 0.5).abs() < 0.02);
        let s = encode_hmp4(&bits("1010")).unwrap();
        for _ in 0..1000 {
            let (_, b) = measure_hmp4(&s, HmpMatching(1), &mut rng).unwrap();
            assert_eq!(b, 0);
        }
    }

    #[test]
    fn complement_classes_match() {
        for xi in 0..16 {
            let x = BitString::from_index(xi, 4);
            let a = QuantumState::Pure(encode_hmp4(&x).unwrap());
            let b = QuantumState::Pure(encode_hmp4(&x.complement()).unwrap());
            for m in 0..2 {
                let pa = outcome_probabilities(&a, HmpMatching(m)).unwrap();
                let pb = outcome_probabilities(&b, HmpMatching(m)).unwrap();
                assert_eq!(pa, pb);
                assert_eq!(
                    pass_probability(&a, &x, HmpMatching(m)).unwrap(),
                    pass_probability(&b, &x.complement(), HmpMatching(m)).unwrap()
                );
            }
        }
    }

    #[test]
    fn adversary_oracles() {
        let mut rng = RngStream::new(2, 0);
        for _ in 0..20 {
            let s = QuantumState::Pure(haar_state(4, &mut rng));
            assert!((average_pass_probability(&s).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!((token_clone_pass_probability().unwrap() - 0.75).abs() < 1e-12);
        assert!((session_accept_probability(0.5, 8, 0) - 0.5f64.powi(8)).abs() < 1e-15);
        assert!((session_accept_probability(0.5, 2, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn issue_examples() {
        let mut rng = RngStream::new(3, 0);
        let (server, token) = issue(1, &mut rng).unwrap();
        assert_eq!(token.registers.len(), 1);
        assert_eq!(token.registers[0].state, encode_hmp4(&server.x[0]).unwrap());
        let (a, _) = issue(16, &mut RngStream::new(4, 1)).unwrap();
        let (b, _) = issue(16, &mut RngStream::new(4, 1)).unwrap();
        assert_eq!(a.x, b.x);
        let (c, _) = issue(16, &mut RngStream::new(4, 2)).unwrap();
        assert_ne!(a.token_id, c.token_id);
        assert!(issue(0, &mut rng).is_err());
    }

    #[test]
    fn holder_token_has_no_x() {
        let (_, token) = issue(2, &mut RngStream::new(5, 0)).unwrap();
        let json = serde_json::to_value(&token).unwrap();
        assert!(json.get("x").is_none());
        assert!(json["registers"][0].get("x").is_none());
    }

    #[test]
    fn controls_are_separable_and_skipped() {
        let mut rng = RngStream::new(6, 0);
        let (server, token) = issue_with_controls(16, 8, 0.0, &mut rng).unwrap();
        assert_eq!(server.unused().len(), 8);
        let c = &token.registers[15];
        assert!(c.control);
        assert!(c.state.qubit_marginal_pure(0).is_some());
        assert!(issue_with_controls(4, 5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn honest_validation_accepts() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..50 {
            let (mut server, token) = issue(12, &mut rng).unwrap();
            let mut holder = HonestHolder::new(token, None);
            let tr = validate(&mut server, &mut holder, 12, 0, 0.0, &mut rng).unwrap();
            assert!(tr.accept, "{tr:?}");
            assert_eq!(tr.l_d.len(), 8);
            assert!(tr.l_d.iter().all(|i| tr.l_s.contains(i)));
            assert_eq!(tr.replies.len(), 8);
        }
    }

    #[test]
    fn reuse_and_shortage_are_rejected() {
        let mut rng = RngStream::new(8, 0);
        let (mut server, token) = issue(6, &mut rng).unwrap();
        let mut holder = HonestHolder::new(token, None);
        let first = make_request(&server, 3, 0.0, &mut rng).unwrap();
        let reply = holder.answer(&first, &mut rng);
        assert!(finish_validation(&mut server, &first, &reply, 0).accept);
        let again = holder.answer(&first, &mut rng);
        let tr = finish_validation(&mut server, &first, &again, 0);
        assert!(!tr.accept);
        assert!(tr.malformed.unwrap().contains("already used"));
        assert!(validate(&mut server, &mut holder, 6, 0, 0.0, &mut rng).is_err());
        assert!(validate(&mut server, &mut holder, 4, 0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn malformed_replies_are_rejected() {
        let mut rng = RngStream::new(9, 0);
        let (server, token) = issue(12, &mut rng).unwrap();
        let req = make_request(&server, 6, 0.0, &mut rng).unwrap();
        let good = HonestHolder::new(token, None).answer(&req, &mut rng);
        let mut cases = Vec::new();
        let mut r = good.clone();
        r.l_d.pop();
        r.replies.pop();
        cases.push(r);
        let mut r = good.clone();
        r.replies[0] = (0, 3);
        cases.push(r);
        let mut r = good.clone();
        r.l_d[1] = r.l_d[0];
        cases.push(r);
        let mut r = good.clone();
        r.token_id = r.token_id.complement();
        cases.push(r);
        let mut r = good.clone();
        r.l_d[0] = 99;
        cases.push(r);
        for bad in cases {
            let tr = finish_validation(&mut server.clone(), &req, &bad, 100);
            assert!(!tr.accept && tr.malformed.is_some());
        }
        assert!(finish_validation(&mut server.clone(), &req, &good, 0).accept);
    }

    #[test]
    fn messages_round_trip_through_json() {
        let mut rng = RngStream::new(10, 0);
        let (mut server, token) = issue(12, &mut rng).unwrap();
        let req = make_request(&server, 12, 0.0, &mut rng).unwrap();
        let req2: ValidationRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
        assert_eq!(req, req2);
        let reply = HonestHolder::new(token, None).answer(&req2, &mut rng);
        let reply2: HolderReply = serde_json::from_str(&serde_json::to_string(&reply).unwrap()).unwrap();
        let tr = finish_validation(&mut server, &req, &reply2, 0);
        let tr2: ValidationTranscript = serde_json::from_str(&serde_json::to_string(&tr).unwrap()).unwrap();
        assert_eq!(tr, tr2);
        assert!(tr.accept);
    }

    #[test]
    fn dephasing_lowers_acceptance() {
        let noise = NoiseParams::dephasing_only(108.6).unwrap();
        let mut previous = 1.0;
        for dwell in [0.0, 20.0, 60.0, 200.0] {
            let mut rng = RngStream::new(11, 0);
            let trials = 400;
            let mut accepts = 0;
            for _ in 0..trials {
                let (mut server, token) = issue(12, &mut rng).unwrap();
                let mut holder = HonestHolder::new(token, Some(noise));
                accepts += usize::from(validate(&mut server, &mut holder, 12, 0, dwell, &mut rng).unwrap().accept);
            }
            let rate = accepts as f64 / trials as f64;
            assert!(rate <= previous + 1e-12, "dwell {dwell}: {rate} > {previous}");
            previous = rate;
        }
        assert!(previous < 0.5);
    }
}
