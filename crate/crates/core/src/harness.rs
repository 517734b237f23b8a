//! Discrete-event network harness.
//!
//! Certifier, verifier, user and adversary nodes exchange messages through
//! an event queue ordered by `(time_us, seq)`. Quantum messages cross a
//! [`QuantumChannel`] that may lose or dephase them; classical messages are
//! lossless. Each trial of a scenario runs its own event loop on the stream
//! `RngStream::new(seed, trial)`, so trials are independent and can be
//! evaluated in any order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::hmp4::{self, HmpHolder, HonestHolder, RandomGuessHolder, TokenCloneHolder};
use crate::qrpuf::{self, ChallengeResponseTable, CrtSession, EnrollMode};
use crate::quantum_core::{
    dephase_qubits, depolarize_qubit, haar_state, tensor_states, Complex64, DensityMatrix, NoiseParams, QError,
    QuantumState, RngStream, StateVector, UnitaryOp,
};
use crate::responder::Responder;
use crate::uupuf::{self, QuantumCrt, UuPuf};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("trial {trial}: {source}")]
    Protocol {
        trial: u64,
        #[source]
        source: QError,
    },
    #[error("event handler failed at t={time_us}us: {message}")]
    Handler { time_us: f64, message: String },
}

fn config(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Certifier,
    Verifier,
    User,
    Adversary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub role: Role,
    pub behavior: String,
}

/// Something that can be carried by an event.
pub trait Payload {
    fn kind(&self) -> String;
}

#[derive(Clone, Debug)]
pub struct Event<P> {
    pub time_us: f64,
    pub seq: u64,
    pub src: String,
    pub dst: String,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_us
            .total_cmp(&self.time_us)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One processed event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time_us: f64,
    pub seq: u64,
    pub src: String,
    pub dst: String,
    pub kind: String,
}

/// Handle passed to event handlers for scheduling follow-up events.
pub struct Scheduler<P> {
    queue: BinaryHeap<Event<P>>,
    next_seq: u64,
    now_us: f64,
}

impl<P> Scheduler<P> {
    fn new() -> Self {
        Scheduler {
            queue: BinaryHeap::new(),
            next_seq: 0,
            now_us: 0.0,
        }
    }

    pub fn now_us(&self) -> f64 {
        self.now_us
    }

    /// Schedules `payload` for delivery `delay_us` from now.
    pub fn schedule(&mut self, delay_us: f64, src: &str, dst: &str, payload: P) -> Result<(), HarnessError> {
        self.push(self.now_us + delay_us, src, dst, payload)
    }

    fn push(&mut self, time_us: f64, src: &str, dst: &str, payload: P) -> Result<(), HarnessError> {
        if !(time_us.is_finite() && time_us >= self.now_us) {
            return Err(HarnessError::Handler {
                time_us: self.now_us,
                message: format!("cannot schedule at {time_us}us"),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            time_us,
            seq,
            src: src.to_owned(),
            dst: dst.to_owned(),
            payload,
        });
        Ok(())
    }
}

/// An initial event: `(time_us, src, dst, payload)`.
pub type Seed<P> = (f64, String, String, P);

/// Runs `handler` over events in `(time, seq)` order until the queue
/// drains. Initial events get sequence numbers in the order given.
pub fn run_event_loop<P, H>(initial: Vec<Seed<P>>, mut handler: H) -> Result<Vec<TraceEntry>, HarnessError>
where
    P: Payload,
    H: FnMut(&Event<P>, &mut Scheduler<P>) -> Result<(), HarnessError>,
{
    let mut sched = Scheduler::new();
    for (t, src, dst, p) in initial {
        sched.push(t, &src, &dst, p)?;
    }
    let mut trace = Vec::new();
    while let Some(ev) = sched.queue.pop() {
        sched.now_us = ev.time_us;
        trace.push(TraceEntry {
            time_us: ev.time_us,
            seq: ev.seq,
            src: ev.src.clone(),
            dst: ev.dst.clone(),
            kind: ev.payload.kind(),
        });
        handler(&ev, &mut sched)?;
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumChannel {
    pub latency_us: f64,
    pub noise: Option<NoiseParams>,
    pub loss_prob: f64,
}

impl Default for QuantumChannel {
    fn default() -> Self {
        QuantumChannel {
            latency_us: 0.0,
            noise: None,
            loss_prob: 0.0,
        }
    }
}

impl QuantumChannel {
    pub fn noiseless(latency_us: f64) -> Self {
        QuantumChannel {
            latency_us,
            ..QuantumChannel::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.latency_us.is_finite() && self.latency_us >= 0.0) {
            return Err(config(format!("latency_us must be a nonnegative number, got {}", self.latency_us)));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(config(format!("loss_prob must be in [0,1], got {}", self.loss_prob)));
        }
        Ok(())
    }

    fn readout_flip_prob(&self) -> f64 {
        self.noise.map_or(0.0, |n| n.readout_flip_prob)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transmission {
    Lost,
    Delivered { state: QuantumState, delay_us: f64 },
}

/// Sends a state through `ch`: loss first, then per-qubit dephasing over the
/// latency and per-qubit idle depolarisation.
pub fn transmit_quantum(ch: &QuantumChannel, state: &QuantumState, rng: &mut RngStream) -> Result<Transmission, QError> {
    if rng.bernoulli(ch.loss_prob) {
        return Ok(Transmission::Lost);
    }
    let state = match &ch.noise {
        Some(n) if ch.latency_us > 0.0 || n.idle_depolarize_prob > 0.0 => {
            let mut rho = dephase_qubits(&state.to_density(), ch.latency_us, n.t2_us)?;
            if n.idle_depolarize_prob > 0.0 {
                for k in 0..rho.num_qubits() {
                    rho = depolarize_qubit(&rho, k, n.idle_depolarize_prob)?;
                }
            }
            QuantumState::Mixed(rho)
        }
        _ => state.clone(),
    };
    Ok(Transmission::Delivered {
        state,
        delay_us: ch.latency_us,
    })
}

/// Measures qubit `k` in Z (or X when `x_basis`) and collapses the state.
fn measure_qubit(state: &QuantumState, k: usize, x_basis: bool, rng: &mut RngStream) -> Result<(bool, QuantumState), QError> {
    let h = UnitaryOp::hadamard();
    let rotated = if x_basis { state.apply_on_qubit(k, &h)? } else { state.clone() };
    let n = rotated.num_qubits();
    let mask = 1usize << (n - 1 - k);
    let p1: f64 = rotated
        .probabilities()
        .iter()
        .enumerate()
        .filter(|(i, _)| i & mask != 0)
        .map(|(_, p)| p)
        .sum();
    let bit = rng.bernoulli(p1.clamp(0.0, 1.0));
    let keep = |i: usize| (i & mask != 0) == bit;
    let collapsed = match rotated {
        QuantumState::Pure(s) => {
            let amps: Vec<Complex64> = s
                .amplitudes()
                .iter()
                .enumerate()
                .map(|(i, a)| if keep(i) { *a } else { Complex64::new(0.0, 0.0) })
                .collect();
            QuantumState::Pure(StateVector::normalized(amps)?)
        }
        QuantumState::Mixed(rho) => {
            let p = if bit { p1 } else { 1.0 - p1 };
            let m = rho.matrix().map_with_location(|i, j, v| {
                if keep(i) && keep(j) {
                    v / Complex64::new(p, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            QuantumState::Mixed(DensityMatrix::new(m)?)
        }
    };
    let back = if x_basis { collapsed.apply_on_qubit(k, &h)? } else { collapsed };
    Ok((bit, back))
}

/// Intercept-resend: every qubit measured in a uniformly random basis from
/// {Z, X}, then the matching product of eigenstates is forwarded.
pub fn intercept_resend(state: &QuantumState, rng: &mut RngStream) -> Result<StateVector, QError> {
    let mut current = state.clone();
    let mut parts = Vec::with_capacity(state.num_qubits());
    for k in 0..state.num_qubits() {
        let x_basis = rng.bernoulli(0.5);
        let (bit, next) = measure_qubit(&current, k, x_basis, rng)?;
        current = next;
        parts.push(match (x_basis, bit) {
            (false, false) => StateVector::zeros(1),
            (false, true) => StateVector::basis(2, 1)?,
            (true, false) => StateVector::plus(),
            (true, true) => StateVector::minus(),
        });
    }
    tensor_states(&parts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    #[default]
    None,
    Emulation,
    InterceptResend,
    RandomGuess,
    TokenClone,
}

impl Adversary {
    pub fn name(self) -> &'static str {
        match self {
            Adversary::None => "none",
            Adversary::Emulation => "emulation",
            Adversary::InterceptResend => "intercept_resend",
            Adversary::RandomGuess => "random_guess",
            Adversary::TokenClone => "token_clone",
        }
    }
}

impl fmt::Display for Adversary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Device-emulating responder holding an exact copy of the operator.
struct Emulator(UnitaryOp);

impl Responder for Emulator {
    fn respond(&mut self, challenge: &StateVector, _rng: &mut RngStream) -> QuantumState {
        QuantumState::Pure(crate::quantum_core::apply_unitary(&self.0, challenge).unwrap_or_else(|_| challenge.clone()))
    }
}

/// Fresh Haar-random state of the challenge dimension on every query.
struct Guesser;

impl Responder for Guesser {
    fn respond(&mut self, challenge: &StateVector, rng: &mut RngStream) -> QuantumState {
        QuantumState::Pure(haar_state(challenge.dim(), rng))
    }
}

fn default_challenges() -> usize {
    8
}
fn default_bits() -> u32 {
    qrpuf::DEFAULT_QUANT_BITS
}
fn default_shots() -> usize {
    4
}
fn default_copies() -> usize {
    50
}
fn default_tau() -> f64 {
    uupuf::DEFAULT_TAU
}
fn default_crt_size() -> usize {
    4
}
fn default_registers() -> usize {
    hmp4::DEFAULT_REGISTERS
}
fn default_t() -> usize {
    hmp4::DEFAULT_T
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum ProtocolConfig {
    Qrpuf {
        lambda: usize,
        #[serde(default = "default_challenges")]
        challenges: usize,
        #[serde(default = "default_bits")]
        bits: u32,
        #[serde(default = "default_shots")]
        shots_per_qubit: usize,
        /// Defaults to 0 on a noiseless channel and `⌈0.1·λ⌉` otherwise.
        #[serde(default)]
        hamming_threshold: Option<usize>,
    },
    Uupuf {
        lambda: usize,
        #[serde(default = "default_copies")]
        k1: usize,
        #[serde(default = "default_copies")]
        k2: usize,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_crt_size")]
        crt_size: usize,
        /// Dephasing of the stored reference copies.
        #[serde(default)]
        memory: Option<MemoryDwell>,
    },
    Hmp4 {
        #[serde(default = "default_registers")]
        registers: usize,
        #[serde(default)]
        controls: usize,
        #[serde(default = "default_t")]
        t: usize,
        #[serde(default)]
        tolerance: usize,
        /// Time the token sits in the user's memory before validation.
        #[serde(default)]
        dwell_us: f64,
        /// Dephasing and readout model of the user's memory.
        #[serde(default)]
        memory: Option<NoiseParams>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryDwell {
    pub dwell_us: f64,
    pub t2_us: f64,
}

impl ProtocolConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolConfig::Qrpuf { .. } => "qrpuf",
            ProtocolConfig::Uupuf { .. } => "uupuf",
            ProtocolConfig::Hmp4 { .. } => "hmp4",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub channel: QuantumChannel,
    #[serde(default)]
    pub adversary: Adversary,
    /// Whether an emulating adversary is handed the device operator.
    #[serde(default = "default_true")]
    pub grant_unitary_knowledge: bool,
    pub trials: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The nodes taking part in a session.
    pub fn nodes(&self) -> Vec<Node> {
        let node = |name: &str, role, behavior: &str| Node {
            name: name.to_owned(),
            role,
            behavior: behavior.to_owned(),
        };
        let mut nodes = vec![
            node(CERTIFIER, Role::Certifier, self.protocol.name()),
            node(VERIFIER, Role::Verifier, self.protocol.name()),
            node(USER, Role::User, if self.adversary == Adversary::None { "honest" } else { "replaced" }),
        ];
        if self.adversary != Adversary::None {
            nodes.push(node("adversary", Role::Adversary, self.adversary.name()));
        }
        nodes
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(config("trials must be positive"));
        }
        self.channel.validate()?;
        match &self.protocol {
            ProtocolConfig::Qrpuf {
                lambda,
                challenges,
                bits,
                shots_per_qubit,
                ..
            } => {
                if !(1..=10).contains(lambda) {
                    return Err(config(format!("qrpuf lambda must be in 1..=10, got {lambda}")));
                }
                if *challenges == 0 || *shots_per_qubit == 0 {
                    return Err(config("challenges and shots_per_qubit must be positive"));
                }
                if !(1..=24).contains(bits) {
                    return Err(config(format!("bits must be in 1..=24, got {bits}")));
                }
            }
            ProtocolConfig::Uupuf {
                lambda,
                k1,
                k2,
                tau,
                crt_size,
                memory,
            } => {
                if let Some(m) = memory {
                    if !(m.dwell_us.is_finite() && m.dwell_us >= 0.0 && m.t2_us > 0.0) {
                        return Err(config("memory needs dwell_us >= 0 and t2_us > 0"));
                    }
                }
                if !(1..=uupuf::MAX_LAMBDA).contains(lambda) {
                    return Err(config(format!("uupuf lambda must be in 1..={}, got {lambda}", uupuf::MAX_LAMBDA)));
                }
                if *k1 == 0 || *k2 == 0 || *crt_size == 0 {
                    return Err(config("k1, k2 and crt_size must be positive"));
                }
                if !(0.0..=1.0).contains(tau) {
                    return Err(config(format!("tau must be in [0,1], got {tau}")));
                }
            }
            ProtocolConfig::Hmp4 {
                registers,
                controls,
                t,
                dwell_us,
                ..
            } => {
                if *t == 0 || t % 3 != 0 {
                    return Err(config(format!("t must be a positive multiple of 3, got {t}")));
                }
                if controls > registers || registers - controls < *t {
                    return Err(config(format!(
                        "{registers} registers with {controls} controls cannot supply t={t}"
                    )));
                }
                if !(dwell_us.is_finite() && *dwell_us >= 0.0) {
                    return Err(config("dwell_us must be a nonnegative number"));
                }
            }
        }
        match (self.adversary, &self.protocol) {
            (Adversary::Emulation, ProtocolConfig::Hmp4 { .. }) => {
                Err(config("emulation applies to qrpuf and uupuf only"))
            }
            (Adversary::Emulation, _) if !self.grant_unitary_knowledge => {
                Err(config("emulation requires grant_unitary_knowledge"))
            }
            (Adversary::TokenClone, p) if p.name() != "hmp4" => Err(config("token_clone applies to hmp4 only")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub protocol: String,
    pub adversary: String,
    pub accepted: bool,
    /// Hamming weight (qrpuf), f̂ (uupuf) or error count (hmp4).
    pub error_metric: f64,
    pub dwell_us: f64,
    pub seed: u64,
    #[serde(skip)]
    pub lost: bool,
    #[serde(skip)]
    pub audit: Audit,
}

/// Quantum message accounting for one trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

impl Audit {
    fn add(&mut self, other: Audit) {
        self.sent += other.sent;
        self.delivered += other.delivered;
        self.lost += other.lost;
    }

    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.lost
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub protocol: String,
    pub adversary: String,
    pub seed: u64,
    pub trials: usize,
    pub accepts: usize,
    pub lost: usize,
    pub honest_accept_rate: Option<f64>,
    pub adversary_accept_rate: Option<f64>,
    pub audit: Audit,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

impl Metrics {
    /// Aggregates per-trial records, which must be sorted by trial.
    pub fn aggregate(cfg: &ScenarioConfig, records: Vec<TrialRecord>) -> Metrics {
        let accepts = records.iter().filter(|r| r.accepted).count();
        let lost = records.iter().filter(|r| r.lost).count();
        let mut audit = Audit::default();
        for r in &records {
            audit.add(r.audit);
        }
        let rate = accepts as f64 / records.len().max(1) as f64;
        let honest = cfg.adversary == Adversary::None;
        Metrics {
            protocol: cfg.protocol.name().to_owned(),
            adversary: cfg.adversary.name().to_owned(),
            seed: cfg.seed,
            trials: records.len(),
            accepts,
            lost,
            honest_accept_rate: honest.then_some(rate),
            adversary_accept_rate: (!honest).then_some(rate),
            audit,
            records,
        }
    }

    pub fn accept_rate(&self) -> f64 {
        self.accepts as f64 / self.trials.max(1) as f64
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    /// Per-trial CSV with the columns of [`TrialRecord`].
    pub fn records_csv(&self) -> String {
        let mut out = String::from("trial,protocol,adversary,accepted,error_metric,dwell_us,seed\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial, r.protocol, r.adversary, r.accepted, r.error_metric, r.dwell_us, r.seed
            ));
        }
        out
    }
}

const VERIFIER: &str = "verifier";
const CERTIFIER: &str = "certifier";
const USER: &str = "user";

/// Messages of a protocol session.
#[derive(Clone, Debug)]
pub enum Msg {
    Start,
    Challenge(QuantumState),
    Response(QuantumState),
    Token(Vec<QuantumState>),
    Request(hmp4::ValidationRequest),
    Reply(hmp4::HolderReply),
    Lost(&'static str),
    Decision { accept: bool, metric: f64 },
}

impl Payload for Msg {
    fn kind(&self) -> String {
        match self {
            Msg::Start => "start".into(),
            Msg::Challenge(_) => "quantum:challenge".into(),
            Msg::Response(_) => "quantum:response".into(),
            Msg::Token(r) => format!("quantum:token[{}]", r.len()),
            Msg::Request(_) => "classical:validation_request".into(),
            Msg::Reply(_) => "classical:holder_reply".into(),
            Msg::Lost(what) => format!("lost:{what}"),
            Msg::Decision { accept, .. } => format!("decision:{}", if *accept { "accept" } else { "reject" }),
        }
    }
}

struct Outcome {
    accept: bool,
    metric: f64,
    lost: bool,
    end_us: f64,
}

/// Sends `state` and schedules `make(state')` at `dst`, or a loss notice.
fn send_quantum(
    sched: &mut Scheduler<Msg>,
    ch: &QuantumChannel,
    audit: &mut Audit,
    src: &str,
    dst: &str,
    state: &QuantumState,
    what: &'static str,
    make: impl FnOnce(QuantumState) -> Msg,
    rng: &mut RngStream,
) -> Result<(), QError> {
    audit.sent += 1;
    match transmit_quantum(ch, state, rng)? {
        Transmission::Lost => {
            audit.lost += 1;
            sched.schedule(ch.latency_us, src, dst, Msg::Lost(what)).ok();
        }
        Transmission::Delivered { state, delay_us } => {
            audit.delivered += 1;
            sched.schedule(delay_us, src, dst, make(state)).ok();
        }
    }
    Ok(())
}

fn protocol_err(trial: u64) -> impl Fn(QError) -> HarnessError {
    move |source| HarnessError::Protocol { trial, source }
}

/// Repeated challenge/response exchange used by both PUF protocols: the
/// verifier sends `rounds` challenges one after another and hands every
/// delivered response to `on_response`; `finish` decides once all are in.
fn run_puf_session(
    cfg: &ScenarioConfig,
    trial: u64,
    challenge: StateVector,
    rounds: usize,
    responder: &mut dyn Responder,
    on_path: bool,
    mut on_response: impl FnMut(QuantumState, &mut RngStream) -> Result<(), QError>,
    finish: impl FnOnce(&mut RngStream) -> Result<(bool, f64), QError>,
    rng: &mut RngStream,
    audit: &mut Audit,
) -> Result<Outcome, HarnessError> {
    let ch = cfg.channel;
    let err = protocol_err(trial);
    let mut received = 0usize;
    let mut lost = false;
    let mut finish = Some(finish);
    let mut decision = None;
    let challenge_state = QuantumState::Pure(challenge.clone());
    run_event_loop(vec![(0.0, VERIFIER.into(), VERIFIER.into(), Msg::Start)], |ev, sched| {
        let now = ev.time_us;
        match &ev.payload {
            Msg::Start => {
                send_quantum(sched, &ch, audit, VERIFIER, USER, &challenge_state, "challenge", Msg::Challenge, rng)
                    .map_err(&err)?;
            }
            Msg::Challenge(arrived) => {
                let input = if on_path {
                    intercept_resend(arrived, rng).map_err(&err)?
                } else {
                    match arrived {
                        QuantumState::Pure(s) => s.clone(),
                        QuantumState::Mixed(rho) => sample_pure(rho, rng),
                    }
                };
                let response = responder.respond(&input, rng);
                send_quantum(sched, &ch, audit, USER, VERIFIER, &response, "response", Msg::Response, rng)
                    .map_err(&err)?;
            }
            Msg::Response(state) => {
                received += 1;
                on_response(state.clone(), rng).map_err(&err)?;
                if received < rounds {
                    sched.schedule(0.0, VERIFIER, VERIFIER, Msg::Start)?;
                } else if let Some(f) = finish.take() {
                    let (accept, metric) = f(rng).map_err(&err)?;
                    sched.schedule(0.0, VERIFIER, VERIFIER, Msg::Decision { accept, metric })?;
                }
            }
            Msg::Lost(_) => {
                lost = true;
                sched.schedule(0.0, VERIFIER, VERIFIER, Msg::Decision { accept: false, metric: f64::NAN })?;
            }
            Msg::Decision { accept, metric } => decision = Some((*accept, *metric, now)),
            _ => {}
        }
        Ok(())
    })?;
    let (accept, metric, end_us) = decision.unwrap_or((false, f64::NAN, 0.0));
    Ok(Outcome {
        accept,
        metric,
        lost,
        end_us,
    })
}

/// Draws one pure component of a mixed state by its eigen-decomposition;
/// used only where a responder needs a state vector.
fn sample_pure(rho: &DensityMatrix, rng: &mut RngStream) -> StateVector {
    let eig = rho.matrix().clone().symmetric_eigen();
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let k = crate::quantum_core::sample_index(&weights, rng);
    let col: Vec<Complex64> = eig.eigenvectors.column(k).iter().copied().collect();
    StateVector::normalized(col).unwrap_or_else(|_| StateVector::basis(rho.dim(), 0).expect("nonzero dim"))
}

fn qrpuf_trial(cfg: &ScenarioConfig, trial: u64, rng: &mut RngStream, audit: &mut Audit) -> Result<Outcome, HarnessError> {
    let ProtocolConfig::Qrpuf {
        lambda,
        challenges,
        bits,
        shots_per_qubit,
        hamming_threshold,
    } = cfg.protocol
    else {
        unreachable!()
    };
    let hamming_threshold = hamming_threshold.unwrap_or(if cfg.channel.noise.is_some() {
        lambda.div_ceil(10)
    } else {
        0
    });
    let err = protocol_err(trial);
    let puf = qrpuf::qgen_qr(lambda, rng).map_err(&err)?;
    let chs = qrpuf::select_challenges(challenges, lambda, rng).map_err(&err)?;
    let crt: ChallengeResponseTable = qrpuf::enroll(&puf, &chs, EnrollMode::Analytic, 0, bits, rng).map_err(&err)?;
    let entry = CrtSession::new(&crt).draw(rng).expect("non-empty CRT");
    let shifters = crt.shifters(entry).map_err(&err)?;
    let stored_o = crt.entries[entry].o.clone();
    let challenge = crt.entries[entry].challenge.state().map_err(&err)?;

    let mut honest = puf.clone();
    let mut emulator = Emulator(puf.full_unitary());
    let mut guesser = Guesser;
    let responder: &mut dyn Responder = match cfg.adversary {
        Adversary::Emulation => &mut emulator,
        Adversary::RandomGuess => &mut guesser,
        _ => &mut honest,
    };
    let rounds = if responder.requeryable() { shots_per_qubit } else { 1 };
    let flip = cfg.channel.readout_flip_prob();
    let samples = std::cell::RefCell::new(Vec::<BitString>::with_capacity(rounds));
    run_puf_session(
        cfg,
        trial,
        challenge,
        rounds,
        responder,
        cfg.adversary == Adversary::InterceptResend,
        |resp, rng| {
            samples.borrow_mut().push(qrpuf::shifted_readout(&shifters, &resp, flip, rng)?);
            Ok(())
        },
        |_| {
            let v = qrpuf::decide(&stored_o, &samples.borrow(), hamming_threshold);
            Ok((v.accept, v.hamming_weight as f64))
        },
        rng,
        audit,
    )
}

fn uupuf_trial(cfg: &ScenarioConfig, trial: u64, rng: &mut RngStream, audit: &mut Audit) -> Result<Outcome, HarnessError> {
    let ProtocolConfig::Uupuf {
        lambda,
        k1,
        k2,
        tau,
        crt_size,
        memory,
    } = cfg.protocol
    else {
        unreachable!()
    };
    let err = protocol_err(trial);
    let puf: UuPuf = uupuf::qgen_uu(lambda, rng).map_err(&err)?;
    let crt = QuantumCrt::enroll(&puf, crt_size, k2, rng).map_err(&err)?;
    let entry = rng.below(crt_size);
    let reference = crt
        .reference(entry, memory.map(|m| (m.dwell_us, m.t2_us)))
        .map_err(&err)?;
    let challenge = crt.entries[entry].challenge.clone();

    let mut honest = puf.clone();
    let mut emulator = Emulator(puf.hidden_unitary().clone());
    let mut guesser = Guesser;
    let responder: &mut dyn Responder = match cfg.adversary {
        Adversary::Emulation => &mut emulator,
        Adversary::RandomGuess => &mut guesser,
        _ => &mut honest,
    };
    let responses = std::cell::RefCell::new(Vec::<QuantumState>::with_capacity(k1));
    run_puf_session(
        cfg,
        trial,
        challenge,
        k1,
        responder,
        cfg.adversary == Adversary::InterceptResend,
        |resp, _| {
            responses.borrow_mut().push(resp);
            Ok(())
        },
        |rng| {
            let r = uupuf::test_copies(&responses.borrow(), &reference, k2, tau, rng)?;
            Ok((r.accept, r.f_hat))
        },
        rng,
        audit,
    )
}

fn hmp4_trial(cfg: &ScenarioConfig, trial: u64, rng: &mut RngStream, audit: &mut Audit) -> Result<Outcome, HarnessError> {
    let ProtocolConfig::Hmp4 {
        registers,
        controls,
        t,
        tolerance,
        dwell_us,
        memory,
    } = cfg.protocol
    else {
        unreachable!()
    };
    let err = protocol_err(trial);
    let ch = cfg.channel;
    let (mut server, token) = hmp4::issue_with_controls(registers, controls, 0.0, rng).map_err(&err)?;
    let token_id = token.token_id.clone();
    let mut holder: Option<Box<dyn HmpHolder>> = None;
    let mut pending: Option<hmp4::ValidationRequest> = None;
    let mut decision = None;
    let mut lost = false;
    let start = (0.0, CERTIFIER.to_owned(), CERTIFIER.to_owned(), Msg::Start);
    run_event_loop(vec![start], |ev, sched| {
        let now = ev.time_us;
        match &ev.payload {
            Msg::Start => {
                let mut delivered = Vec::with_capacity(registers);
                for reg in &token.registers {
                    let mut state = QuantumState::Pure(reg.state.clone());
                    if cfg.adversary == Adversary::InterceptResend {
                        state = QuantumState::Pure(intercept_resend(&state, rng).map_err(&err)?);
                    }
                    audit.sent += 1;
                    match transmit_quantum(&ch, &state, rng).map_err(&err)? {
                        Transmission::Lost => audit.lost += 1,
                        Transmission::Delivered { state, .. } => {
                            audit.delivered += 1;
                            delivered.push(state);
                        }
                    }
                }
                let msg = if delivered.len() == registers { Msg::Token(delivered) } else { Msg::Lost("token") };
                sched.schedule(ch.latency_us, CERTIFIER, USER, msg)?;
            }
            Msg::Token(states) => {
                holder = Some(match cfg.adversary {
                    Adversary::RandomGuess => Box::new(RandomGuessHolder {
                        token_id: token_id.clone(),
                    }),
                    Adversary::TokenClone => {
                        Box::new(TokenCloneHolder::capture_states(token_id.clone(), states, rng).map_err(&err)?)
                    }
                    _ => Box::new(HonestHolder::from_states(token_id.clone(), states.clone(), now, memory)),
                });
                let request = hmp4::make_request(&server, t, now + dwell_us, rng).map_err(&err)?;
                pending = Some(request.clone());
                sched.schedule(dwell_us, VERIFIER, USER, Msg::Request(request))?;
            }
            Msg::Request(request) => {
                let h = holder.as_mut().expect("token delivered before validation");
                let reply = h.answer(request, rng);
                sched.schedule(ch.latency_us, USER, VERIFIER, Msg::Reply(reply))?;
            }
            Msg::Reply(reply) => {
                let request = pending.take().expect("request outstanding");
                let tr = hmp4::finish_validation(&mut server, &request, reply, tolerance);
                sched.schedule(
                    0.0,
                    VERIFIER,
                    VERIFIER,
                    Msg::Decision {
                        accept: tr.accept,
                        metric: tr.error_count as f64,
                    },
                )?;
            }
            Msg::Lost(_) => {
                lost = true;
                sched.schedule(0.0, VERIFIER, VERIFIER, Msg::Decision { accept: false, metric: f64::NAN })?;
            }
            Msg::Decision { accept, metric } => decision = Some((*accept, *metric, now)),
            _ => {}
        }
        Ok(())
    })?;
    let (accept, metric, _) = decision.unwrap_or((false, f64::NAN, 0.0));
    Ok(Outcome {
        accept,
        metric,
        lost,
        end_us: if lost { ch.latency_us } else { ch.latency_us + dwell_us },
    })
}

/// Runs trial `trial` of `cfg` on its own stream.
pub fn run_trial(cfg: &ScenarioConfig, trial: u64) -> Result<TrialRecord, HarnessError> {
    let mut rng = RngStream::new(cfg.seed, trial);
    let mut audit = Audit::default();
    let out = match cfg.protocol {
        ProtocolConfig::Qrpuf { .. } => qrpuf_trial(cfg, trial, &mut rng, &mut audit)?,
        ProtocolConfig::Uupuf { .. } => uupuf_trial(cfg, trial, &mut rng, &mut audit)?,
        ProtocolConfig::Hmp4 { .. } => hmp4_trial(cfg, trial, &mut rng, &mut audit)?,
    };
    Ok(TrialRecord {
        trial,
        protocol: cfg.protocol.name().to_owned(),
        adversary: cfg.adversary.name().to_owned(),
        accepted: out.accept,
        error_metric: out.metric,
        dwell_us: out.end_us,
        seed: cfg.seed,
        lost: out.lost,
        audit,
    })
}

/// Validates `cfg` and runs every trial in order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Metrics, HarnessError> {
    cfg.validate()?;
    let records = (0..cfg.trials as u64)
        .map(|t| run_trial(cfg, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Metrics::aggregate(cfg, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Tag(&'static str);

    impl Payload for Tag {
        fn kind(&self) -> String {
            self.0.to_owned()
        }
    }

    fn seed(t: f64, tag: &'static str) -> Seed<Tag> {
        (t, "a".into(), "b".into(), Tag(tag))
    }

    #[test]
    fn empty_loop_gives_empty_trace() {
        let trace = run_event_loop(Vec::<Seed<Tag>>::new(), |_, _| Ok(())).unwrap();
        assert!(trace.is_empty());
    }

    #[test]
    fn ties_break_by_sequence() {
        let trace = run_event_loop(vec![seed(1.0, "first"), seed(1.0, "second"), seed(0.5, "early")], |_, _| Ok(())).unwrap();
        let kinds: Vec<_> = trace.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, ["early", "first", "second"]);
    }

    #[test]
    fn handlers_can_schedule_and_clock_is_monotone() {
        let trace = run_event_loop(vec![seed(0.0, "a")], |ev, s| {
            if ev.payload.0 == "a" {
                s.schedule(2.0, "b", "a", Tag("c"))?;
                s.schedule(1.0, "b", "a", Tag("b"))?;
            }
            Ok(())
        })
        .unwrap();
        let kinds: Vec<_> = trace.iter().map(|e| e.kind.as_str()).collect();
        assert_eq!(kinds, ["a", "b", "c"]);
        assert!(trace.windows(2).all(|w| w[0].time_us <= w[1].time_us));
        let bad = run_event_loop(vec![seed(0.0, "a")], |_, s| s.schedule(-1.0, "a", "a", Tag("x")));
        assert!(matches!(bad, Err(HarnessError::Handler { .. })));
    }

    #[test]
    fn transmit_examples() {
        let mut rng = RngStream::new(1, 0);
        let plus = QuantumState::Pure(StateVector::plus());
        let clean = QuantumChannel::default();
        assert_eq!(
            transmit_quantum(&clean, &plus, &mut rng).unwrap(),
            Transmission::Delivered {
                state: plus.clone(),
                delay_us: 0.0
            }
        );
        let lossy = QuantumChannel {
            loss_prob: 1.0,
            ..clean
        };
        assert_eq!(transmit_quantum(&lossy, &plus, &mut rng).unwrap(), Transmission::Lost);
        let noisy = QuantumChannel {
            latency_us: 10.0,
            noise: Some(NoiseParams::dephasing_only(108.6).unwrap()),
            loss_prob: 0.0,
        };
        let Transmission::Delivered { state, delay_us } = transmit_quantum(&noisy, &plus, &mut rng).unwrap() else {
            panic!("lost");
        };
        assert_eq!(delay_us, 10.0);
        let off = state.to_density().matrix()[(0, 1)].re;
        assert!((off - 0.5 * (-10.0f64 / 108.6).exp()).abs() < 1e-12);
        assert!((2.0 * off - 0.912).abs() < 1e-3);
    }

    #[test]
    fn intercept_resend_statistics() {
        let mut rng = RngStream::new(2, 0);
        let zero = QuantumState::Pure(StateVector::zeros(1));
        let n = 20_000;
        let mut ones = 0;
        for _ in 0..n {
            let out = intercept_resend(&zero, &mut rng).unwrap();
            ones += usize::from(out.probabilities()[1] > 0.9);
        }
        // Z basis keeps |0⟩, X basis resends |±⟩: never |1⟩ exactly
        assert_eq!(ones, 0);
        let mixed = QuantumState::Mixed(DensityMatrix::maximally_mixed(4).unwrap());
        assert_eq!(intercept_resend(&mixed, &mut rng).unwrap().dim(), 4);
    }

    fn qr_cfg(adversary: Adversary) -> ScenarioConfig {
        ScenarioConfig {
            protocol: ProtocolConfig::Qrpuf {
                lambda: 2,
                challenges: 4,
                bits: 8,
                shots_per_qubit: 4,
                hamming_threshold: None,
            },
            channel: QuantumChannel::default(),
            adversary,
            grant_unitary_knowledge: true,
            trials: 20,
            seed: 3,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = qr_cfg(Adversary::TokenClone);
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        cfg.adversary = Adversary::Emulation;
        cfg.grant_unitary_knowledge = false;
        assert!(cfg.validate().is_err());
        cfg.grant_unitary_knowledge = true;
        cfg.validate().unwrap();
        cfg.trials = 0;
        assert!(run_scenario(&cfg).is_err());
        let hmp = r#"{"protocol":"hmp4","registers":16,"controls":8,"t":12,"trials":1,"seed":1}"#;
        assert!(ScenarioConfig::from_json(hmp).is_err());
        let hmp = r#"{"protocol":"hmp4","adversary":"emulation","trials":1,"seed":1}"#;
        assert!(ScenarioConfig::from_json(hmp).is_err());
        let ok = r#"{"protocol":"uupuf","lambda":2,"trials":3,"seed":9,"channel":{"latency_us":1.5}}"#;
        let cfg = ScenarioConfig::from_json(ok).unwrap();
        assert_eq!(cfg.channel.latency_us, 1.5);
        assert!(ScenarioConfig::from_json(r#"{"protocol":"qrpuf","trials":1,"seed":1}"#).is_err());
    }

    #[test]
    fn honest_and_emulation_accept() {
        for adv in [Adversary::None, Adversary::Emulation] {
            let m = run_scenario(&qr_cfg(adv)).unwrap();
            assert_eq!(m.accepts, m.trials, "{adv}");
            assert!(m.audit.balanced());
            assert_eq!(m.audit.sent, 20 * 4 * 2);
        }
    }

    #[test]
    fn lost_challenges_reject() {
        let mut cfg = qr_cfg(Adversary::None);
        cfg.channel.loss_prob = 1.0;
        let m = run_scenario(&cfg).unwrap();
        assert_eq!(m.accepts, 0);
        assert_eq!(m.lost, m.trials);
        assert!(m.audit.balanced());
        assert_eq!(m.audit.lost, m.audit.sent);
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = ScenarioConfig::from_json(r#"{"protocol":"hmp4","adversary":"random_guess","trials":30,"seed":4}"#).unwrap();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.summary_json(), b.summary_json());
        assert_eq!(a.records_csv(), b.records_csv());
        assert_eq!(a.records_csv().lines().count(), 31);
    }
}
