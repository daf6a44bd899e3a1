//! Alice's side of the two-phase protocol and the untrusted devices she
//! talks to.
//!
//! Phase one distributes `N = m + 14cñ` pairs. A uniformly shuffled subset
//! of `14cñ` rounds tests the devices against the fourteen settings; the
//! remaining `m` rounds turn the delivered pair into one of Bob's input
//! qubits by measuring Alice's half. Phase two runs the blind trap-verified
//! computation on those qubits.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mbqc::{
    self, AngleOctant, BrickworkGraph, BrickworkPattern, InputLabel, MbqcError, PatternFile, Prover, Role,
    TapeAssignment, TrapVerdict,
};
use crate::qstate::{self, bell_pair, Operator, Outcome, StateError, StateVector};
use crate::rng::{party_stream, Party, SimRng};
use crate::selftest::{
    acceptance_check, observable_matrix, Axis, CorrelationLedger, MeasurementSetting, SecurityParams, SelfTestError,
    SelfTestVerdict, Side,
};
use crate::transcript::{Basis, Direction, Payload, Transcript, TranscriptError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    SelfTest(#[from] SelfTestError),
    #[error(transparent)]
    Mbqc(#[from] MbqcError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("round {round}: {message}")]
    Violation { round: u64, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("audit: {0}")]
    Audit(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// `cos θ X + sin θ Y`, the observable with eigenvectors `|±_θ⟩`.
pub fn equatorial_observable(theta: f64) -> Operator {
    let (s, c) = theta.sin_cos();
    Operator::single([
        [Complex64::new(0.0, 0.0), Complex64::new(c, -s)],
        [Complex64::new(c, s), Complex64::new(0.0, 0.0)],
    ])
}

/// Ideal observable for an instruction on `side`.
pub fn ideal_observable(side: Side, basis: Basis) -> Operator {
    match basis {
        Basis::Axis(axis) => observable_matrix(axis, side).unwrap_or_else(|_| observable_matrix(Axis::Z, side).unwrap()),
        Basis::Equatorial(theta) => equatorial_observable(theta.radians()),
    }
}

/// An untrusted quantum device: Bob, or Alice's measuring device.
///
/// A strategy only ever sees the round index, the instruction addressed to
/// it and its own measurement outcomes. It never learns Alice's pads, her
/// computation angles or the round roles.
pub trait ProverStrategy: Send {
    /// Two-qubit state delivered for a round; qubit 0 goes to Alice.
    fn on_prepare_pair(&mut self, _round: u64) -> StateVector {
        bell_pair()
    }

    /// Observable the device actually measures when instructed `basis`.
    fn observable(&mut self, side: Side, basis: Basis) -> Operator {
        ideal_observable(side, basis)
    }

    /// Reported value for an actual outcome; anything but ±1 is a violation.
    fn on_measure(&mut self, _round: u64, _basis: Basis, outcome: Outcome) -> i64 {
        outcome.sign() as i64
    }

    /// Angle in radians actually used for a phase-two instruction `delta`.
    fn on_compute_measure(&mut self, _round: u64, delta: AngleOctant) -> f64 {
        delta.radians()
    }

    /// Reported bit for an actual phase-two outcome.
    fn on_compute_report(&mut self, _round: u64, outcome: u8) -> u8 {
        outcome
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Honest;

impl ProverStrategy for Honest {}

/// Delivers a uniformly random `|ij⟩` with probability `noise`, else a Bell
/// pair; the per-round mixture is the Werner state.
#[derive(Clone, Debug)]
pub struct Depolarizing {
    pub noise: f64,
    rng: SimRng,
}

impl Depolarizing {
    pub fn new(noise: f64, rng: SimRng) -> Self {
        Self { noise, rng }
    }
}

impl ProverStrategy for Depolarizing {
    fn on_prepare_pair(&mut self, _round: u64) -> StateVector {
        if self.rng.random::<f64>() < self.noise {
            StateVector::basis(2, self.rng.random_range(0..4))
        } else {
            bell_pair()
        }
    }
}

/// Every basis rotated by `eta` about the `(1,1,1)/√3` axis.
#[derive(Clone, Debug)]
pub struct Miscalibrated {
    pub eta: f64,
    rotation: Operator,
}

impl Miscalibrated {
    pub fn new(eta: f64) -> Self {
        let (s, c) = (eta / 2.0).sin_cos();
        let k = s / 3f64.sqrt();
        // cos(η/2) I − i sin(η/2) n·σ
        let rotation = Operator::single([
            [Complex64::new(c, -k), Complex64::new(-k, -k)],
            [Complex64::new(k, -k), Complex64::new(c, k)],
        ]);
        Self { eta, rotation }
    }
}

impl ProverStrategy for Miscalibrated {
    fn observable(&mut self, side: Side, basis: Basis) -> Operator {
        self.rotation.matmul(&ideal_observable(side, basis)).matmul(&self.rotation.adjoint())
    }
}

/// No entanglement: delivers `|00⟩` and reports +1 to everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClassicalCheat;

impl ProverStrategy for ClassicalCheat {
    fn on_prepare_pair(&mut self, _round: u64) -> StateVector {
        StateVector::zero(2)
    }

    fn on_measure(&mut self, _round: u64, _basis: Basis, _outcome: Outcome) -> i64 {
        1
    }
}

/// Honest in phase one; inverts every phase-two result.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlipAll;

impl ProverStrategy for FlipAll {
    fn on_compute_report(&mut self, _round: u64, outcome: u8) -> u8 {
        outcome ^ 1
    }
}

/// Honest in phase one; inverts the result of one phase-two measurement,
/// counted from the start of phase two.
#[derive(Clone, Debug)]
pub struct SingleVertexDeviate {
    pub target: usize,
    first_round: Option<u64>,
}

impl SingleVertexDeviate {
    pub fn new(target: usize) -> Self {
        Self { target, first_round: None }
    }
}

impl ProverStrategy for SingleVertexDeviate {
    fn on_compute_report(&mut self, round: u64, outcome: u8) -> u8 {
        let first = *self.first_round.get_or_insert(round);
        outcome ^ ((round - first) as usize == self.target) as u8
    }
}

/// Adapter presenting a strategy to the measurement-stage simulator.
struct ComputeView<'a> {
    strategy: &'a mut dyn ProverStrategy,
    offset: u64,
}

impl Prover for ComputeView<'_> {
    fn measurement_angle(&mut self, round: usize, delta: AngleOctant) -> f64 {
        self.strategy.on_compute_measure(self.offset + round as u64, delta)
    }

    fn report(&mut self, round: usize, outcome: u8) -> u8 {
        self.strategy.on_compute_report(self.offset + round as u64, outcome)
    }
}

/// Named strategy with parameters, as it appears in session configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Honest,
    Depolarizing { noise: f64 },
    Miscalibrated { eta: f64 },
    ClassicalCheat,
    FlipAll,
    /// `vertex` counts phase-two rounds; omitted means uniform over all rounds.
    SingleVertexDeviate {
        #[serde(default)]
        vertex: Option<usize>,
    },
}

impl StrategySpec {
    /// Builds a fresh instance. Randomized strategies draw from their own
    /// party stream of `seed`; `rounds` is the number of phase-two rounds.
    pub fn build(&self, party: Party, seed: u64, rounds: usize) -> Result<Box<dyn ProverStrategy>> {
        let mut rng = party_stream(seed, party);
        let device = party == Party::AliceDevice;
        Ok(match *self {
            StrategySpec::Honest => Box::new(Honest),
            StrategySpec::Miscalibrated { eta } if eta.is_finite() => Box::new(Miscalibrated::new(eta)),
            StrategySpec::ClassicalCheat => Box::new(ClassicalCheat),
            StrategySpec::Depolarizing { noise } if !device && (0.0..=1.0).contains(&noise) => {
                Box::new(Depolarizing::new(noise, rng))
            }
            StrategySpec::FlipAll if !device => Box::new(FlipAll),
            StrategySpec::SingleVertexDeviate { vertex } if !device => {
                let target = match vertex {
                    Some(v) if v < rounds => v,
                    Some(v) => return Err(ProtocolError::Config(format!("vertex {v} ≥ {rounds} rounds"))),
                    None if rounds > 0 => rng.random_range(0..rounds),
                    None => 0,
                };
                Box::new(SingleVertexDeviate::new(target))
            }
            ref other => {
                return Err(ProtocolError::Config(format!("strategy {other:?} is not valid for {party:?}")));
            }
        })
    }
}

/// What a phase-one round is used for. Hidden from the strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundRole {
    Test(MeasurementSetting),
    Prep { kind: Role, vertex: usize },
}

/// One of Bob's inputs: Alice's classical label and the qubit Bob holds.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedQubit {
    /// Alice's record: her basis angle with a `−` outcome folded in as `+π`,
    /// or her computational-basis bit for a dummy.
    pub alice_label: InputLabel,
    pub bob_residual: StateVector,
}

impl PreparedQubit {
    /// Label in Bob's frame, as the computation expects it: Bob holds
    /// `|+_{−L}⟩` when Alice recorded `L`.
    pub fn bob_label(&self) -> InputLabel {
        match self.alice_label {
            InputLabel::Equatorial(l) => InputLabel::Equatorial(-l),
            basis => basis,
        }
    }
}

/// Phase-one output handed to phase two. Only built on acceptance.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInputs {
    qubits: Vec<PreparedQubit>,
}

impl PreparedInputs {
    pub fn qubits(&self) -> &[PreparedQubit] {
        &self.qubits
    }

    pub fn len(&self) -> usize {
        self.qubits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qubits.is_empty()
    }
}

/// Bob's half after Alice's half of `pair` was projected; fails when the
/// two halves are still entangled.
fn bob_half(post: &StateVector, round: u64) -> Result<StateVector> {
    let a = post.amplitudes();
    let c0 = [a[0], a[1]];
    let c1 = [a[2], a[3]];
    let n0 = c0[0].norm_sqr() + c0[1].norm_sqr();
    let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
    let overlap = (c0[0].conj() * c1[0] + c0[1].conj() * c1[1]).norm_sqr();
    if (overlap - n0 * n1).abs() > 1e-10 {
        return Err(ProtocolError::Violation { round, message: "device measurement left the pair entangled".into() });
    }
    let pick = if n0 >= n1 { c0 } else { c1 };
    Ok(StateVector::from_unnormalized(pick.to_vec())?)
}

fn check_pair(pair: &StateVector, round: u64) -> Result<()> {
    if pair.num_qubits() != 2 {
        return Err(ProtocolError::Violation { round, message: format!("delivered {} qubits, expected 2", pair.num_qubits()) });
    }
    Ok(())
}

fn check_report(value: i64, round: u64) -> Result<Outcome> {
    Outcome::from_sign(value)
        .ok_or_else(|| ProtocolError::Violation { round, message: format!("outcome report {value} is not ±1") })
}

fn log(transcript: &mut Option<&mut Transcript>, round: u64, direction: Direction, payload: Payload) -> Result<()> {
    if let Some(t) = transcript.as_deref_mut() {
        t.record(round, direction, payload)?;
    }
    Ok(())
}

/// Basis Alice instructs for a preparation round, drawing θ when needed.
fn prep_basis<R: Rng + ?Sized>(kind: Role, alice_rng: &mut R) -> Basis {
    match kind {
        Role::Dummy => Basis::Axis(Axis::Z),
        Role::Computation | Role::Trap => Basis::Equatorial(AngleOctant::random(alice_rng)),
    }
}

fn label_from(basis: Basis, reported: Outcome) -> InputLabel {
    match basis {
        Basis::Equatorial(theta) => InputLabel::Equatorial(theta.plus_pi_if(reported.bit())),
        Basis::Axis(_) => InputLabel::Basis(reported.bit()),
    }
}

/// Turns a delivered pair into one of Bob's inputs. Alice's device measures
/// her half in `{|±_θ⟩}` with θ uniform (computation and trap) or in the
/// computational basis (dummy).
pub fn remote_prepare_round<R: Rng + ?Sized, N: Rng + ?Sized>(
    kind: Role,
    pair: &StateVector,
    device: &mut dyn ProverStrategy,
    round: u64,
    alice_rng: &mut R,
    nature_rng: &mut N,
) -> Result<PreparedQubit> {
    let basis = prep_basis(kind, alice_rng);
    measure_prep(basis, pair, device, round, nature_rng)
}

fn measure_prep<N: Rng + ?Sized>(
    basis: Basis,
    pair: &StateVector,
    device: &mut dyn ProverStrategy,
    round: u64,
    nature_rng: &mut N,
) -> Result<PreparedQubit> {
    check_pair(pair, round)?;
    let obs = device.observable(Side::Alice, basis);
    let m = qstate::projective_measure(pair, &obs, &[0], nature_rng)?;
    let reported = check_report(device.on_measure(round, basis, m.outcome), round)?;
    let bob_residual = bob_half(&m.post_state, round)?;
    Ok(PreparedQubit { alice_label: label_from(basis, reported), bob_residual })
}

/// Exact Bob residuals for both outcomes of Alice's measurement of `pair`.
pub fn prep_branches(basis: Basis, pair: &StateVector) -> Result<Vec<(Outcome, f64, StateVector)>> {
    let obs = ideal_observable(Side::Alice, basis);
    let mut out = Vec::new();
    for o in [Outcome::Plus, Outcome::Minus] {
        match qstate::project(pair, &obs, &[0], o) {
            Ok((post, p)) => out.push((o, p, bob_half(&post, 0)?)),
            Err(StateError::ZeroProbability) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseOneResult {
    pub verdict: SelfTestVerdict,
    pub ledger: CorrelationLedger,
    /// Released only when the verdict is Accept.
    pub prepared: Option<PreparedInputs>,
    pub rounds: u64,
}

/// Uniformly shuffled round roles: `m` preparations (in vertex order) and
/// `14cñ` tests, each test with a uniform setting.
pub fn round_roles<R: Rng + ?Sized>(params: &SecurityParams, kinds: &[Role], alice_rng: &mut R) -> Vec<RoundRole> {
    let tests = params.test_rounds() as usize;
    let mut slots: Vec<bool> = std::iter::repeat_n(true, tests).chain(std::iter::repeat_n(false, kinds.len())).collect();
    slots.shuffle(alice_rng);
    let mut next_vertex = 0;
    slots
        .into_iter()
        .map(|test| {
            if test {
                RoundRole::Test(MeasurementSetting::ALL[alice_rng.random_range(0..14)])
            } else {
                let v = next_vertex;
                next_vertex += 1;
                RoundRole::Prep { kind: kinds[v], vertex: v }
            }
        })
        .collect()
}

/// Phase one. `kinds` gives the role of each of the `m` prepared qubits.
pub fn run_phase_one<R: Rng + ?Sized, N: Rng + ?Sized>(
    params: &SecurityParams,
    kinds: &[Role],
    alice_device: &mut dyn ProverStrategy,
    bob: &mut dyn ProverStrategy,
    alice_rng: &mut R,
    nature_rng: &mut N,
    mut transcript: Option<&mut Transcript>,
) -> Result<PhaseOneResult> {
    params.validate()?;
    if kinds.len() as u64 != params.m {
        return Err(ProtocolError::Config(format!("{} qubit roles for m = {}", kinds.len(), params.m)));
    }
    let roles = round_roles(params, kinds, alice_rng);
    let mut ledger = CorrelationLedger::new();
    let mut prepared: Vec<Option<PreparedQubit>> = vec![None; kinds.len()];
    for (round, role) in roles.iter().enumerate() {
        let round = round as u64;
        log(&mut transcript, round, Direction::ToBob, Payload::RequestPair)?;
        let pair = bob.on_prepare_pair(round);
        log(&mut transcript, round, Direction::FromBob, Payload::PairDelivered)?;
        check_pair(&pair, round)?;
        match *role {
            RoundRole::Test(setting) => {
                let (ba, bb) = (Basis::Axis(setting.alpha()), Basis::Axis(setting.beta()));
                ledger.increment_counter(setting);
                log(&mut transcript, round, Direction::ToDevice, Payload::MeasureInstruction { basis: ba })?;
                log(&mut transcript, round, Direction::ToBob, Payload::MeasureInstruction { basis: bb })?;
                let oa = alice_device.observable(Side::Alice, ba);
                let ma = qstate::projective_measure(&pair, &oa, &[0], nature_rng)?;
                let ob = bob.observable(Side::Bob, bb);
                let mb = qstate::projective_measure(&ma.post_state, &ob, &[1], nature_rng)?;
                let ra = alice_device.on_measure(round, ba, ma.outcome);
                let rb = bob.on_measure(round, bb, mb.outcome);
                let a = check_report(ra, round)?;
                let b = check_report(rb, round)?;
                log(&mut transcript, round, Direction::FromDevice, Payload::OutcomeReport { outcome: a })?;
                log(&mut transcript, round, Direction::FromBob, Payload::OutcomeReport { outcome: b })?;
                ledger.update_estimator(setting, ra, rb)?;
            }
            RoundRole::Prep { kind, vertex } => {
                let basis = prep_basis(kind, alice_rng);
                log(&mut transcript, round, Direction::ToDevice, Payload::MeasureInstruction { basis })?;
                let q = measure_prep(basis, &pair, alice_device, round, nature_rng)?;
                let outcome = match q.alice_label {
                    InputLabel::Equatorial(l) => {
                        let Basis::Equatorial(theta) = basis else { unreachable!() };
                        if l == theta { Outcome::Plus } else { Outcome::Minus }
                    }
                    InputLabel::Basis(d) => Outcome::from_bit(d).expect("bit"),
                };
                log(&mut transcript, round, Direction::FromDevice, Payload::OutcomeReport { outcome })?;
                prepared[vertex] = Some(q);
            }
        }
    }
    let rounds = roles.len() as u64;
    let verdict = acceptance_check(&ledger, params);
    let notice = if verdict.is_accept() { Payload::AcceptNotice } else { Payload::AbortNotice };
    log(&mut transcript, rounds, Direction::ToBob, notice)?;
    let prepared = verdict
        .is_accept()
        .then(|| PreparedInputs { qubits: prepared.into_iter().map(|q| q.expect("every vertex prepared")).collect() });
    Ok(PhaseOneResult { verdict, ledger, prepared, rounds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTwoResult {
    pub verdict: TrapVerdict,
    /// Alice's corrected output; withheld on rejection.
    pub output: Option<Vec<u8>>,
    pub pattern: BrickworkPattern,
    pub execution: mbqc::Execution,
}

/// Phase two: blinds `phi` with the phase-one labels and fresh pads, runs the
/// measurement stage against `bob` and checks the traps. `first_round` only
/// numbers transcript entries.
#[allow(clippy::too_many_arguments)]
pub fn run_phase_two<R: Rng + ?Sized, N: Rng + ?Sized>(
    inputs: &PreparedInputs,
    graph: BrickworkGraph,
    tape: TapeAssignment,
    phi: Vec<AngleOctant>,
    bob: &mut dyn ProverStrategy,
    alice_rng: &mut R,
    nature_rng: &mut N,
    first_round: u64,
    mut transcript: Option<&mut Transcript>,
) -> Result<PhaseTwoResult> {
    let labels: Vec<InputLabel> = inputs.qubits.iter().map(PreparedQubit::bob_label).collect();
    let residuals: Vec<StateVector> = inputs.qubits.iter().map(|q| q.bob_residual.clone()).collect();
    let pattern = BrickworkPattern::assemble(graph, Some(tape), phi, &labels, alice_rng)?;
    let mut view = ComputeView { strategy: bob, offset: first_round };
    let execution = mbqc::streaming_execute(&pattern, &residuals, &mut view, alice_rng, nature_rng)?;
    for r in &execution.rounds {
        let round = first_round + r.round as u64;
        log(&mut transcript, round, Direction::ToBob, Payload::AngleInstruction { delta: r.delta })?;
        log(&mut transcript, round, Direction::FromBob, Payload::ResultReport { bit: r.reported })?;
    }
    let verdict = mbqc::verify_traps(&execution, &pattern)?;
    let end = first_round + execution.rounds.len() as u64;
    let notice = if verdict.is_accept() { Payload::AcceptNotice } else { Payload::AbortNotice };
    log(&mut transcript, end, Direction::ToBob, notice)?;
    let output = verdict.is_accept().then(|| execution.output.clone());
    Ok(PhaseTwoResult { verdict, output, pattern, execution })
}

/// Alice's secret for one vertex, as seen by [`blindness_audit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Secret {
    /// Phase-one view only: Alice measured her half in the basis fixed by
    /// this role and angle; her outcome stays hidden.
    Label { kind: Role, theta: AngleOctant },
    /// Full per-vertex view: Bob's qubit and the angle message, over Alice's
    /// uniform θ, her outcome and the pad `r`.
    Angle { kind: Role, phi: AngleOctant },
}

/// Parities a computation vertex's angle depends on in a fixed history:
/// `s^X`, and `s^Z ⊕ x` (just `x` for traps).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub sx: u8,
    pub szx: u8,
}

type Block = [[Complex64; 2]; 2];

fn add_projector(block: &mut Block, weight: f64, psi: &StateVector) {
    let a = psi.amplitudes();
    for i in 0..2 {
        for j in 0..2 {
            block[i][j] += a[i] * a[j].conj() * weight;
        }
    }
}

/// Bob's classical-quantum view for one vertex: one 2×2 block per possible
/// angle message (a single block for phase-one views).
fn view(secret: Secret, history: History, pair: &StateVector) -> Result<Vec<Block>> {
    let zero = [[Complex64::new(0.0, 0.0); 2]; 2];
    match secret {
        Secret::Label { kind, theta } => {
            let basis = match kind {
                Role::Dummy => Basis::Axis(Axis::Z),
                _ => Basis::Equatorial(theta),
            };
            let mut block = zero;
            for (_, p, psi) in prep_branches(basis, pair)? {
                add_projector(&mut block, p, &psi);
            }
            Ok(vec![block])
        }
        Secret::Angle { kind, phi } => {
            let mut blocks = vec![zero; 8];
            if kind == Role::Dummy {
                for (_, p, psi) in prep_branches(Basis::Axis(Axis::Z), pair)? {
                    blocks.iter_mut().for_each(|b| add_projector(b, p / 8.0, &psi));
                }
                return Ok(blocks);
            }
            let phi = match kind {
                Role::Computation if history.sx == 1 => -phi,
                Role::Computation => phi,
                _ => AngleOctant::ZERO,
            };
            for theta_a in AngleOctant::all() {
                for (o, p, psi) in prep_branches(Basis::Equatorial(theta_a), pair)? {
                    let bob_theta = -theta_a.plus_pi_if(o.bit());
                    for r in 0..2u8 {
                        let delta = (phi + bob_theta).plus_pi_if(history.szx ^ r);
                        add_projector(&mut blocks[delta.k() as usize], p / 16.0, &psi);
                    }
                }
            }
            Ok(blocks)
        }
    }
}

/// Trace norm of a 2×2 Hermitian matrix.
fn trace_norm(m: &Block) -> f64 {
    let a = m[0][0].re;
    let d = m[1][1].re;
    let b = m[0][1].norm();
    let mid = (a + d) / 2.0;
    let rad = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    (mid + rad).abs() + (mid - rad).abs()
}

/// Distinguishing advantage available to Bob between two secret
/// assignments: the sum over vertices of the trace distance between his
/// per-vertex views, an upper bound on the distance between the joint views
/// since Alice's per-vertex randomness is independent. `pairs` are the
/// delivered two-qubit states.
pub fn blindness_audit(pairs: &[StateVector], history: &[History], first: &[Secret], second: &[Secret]) -> Result<f64> {
    let n = pairs.len();
    if history.len() != n || first.len() != n || second.len() != n {
        return Err(ProtocolError::Audit("run shapes differ".into()));
    }
    let mut total = 0.0;
    for v in 0..n {
        if std::mem::discriminant(&first[v]) != std::mem::discriminant(&second[v]) {
            return Err(ProtocolError::Audit(format!("vertex {v}: secrets of different kinds")));
        }
        let a = view(first[v], history[v], &pairs[v])?;
        let b = view(second[v], history[v], &pairs[v])?;
        total += a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let mut d = *x;
                for i in 0..2 {
                    for j in 0..2 {
                        d[i][j] -= y[i][j];
                    }
                }
                trace_norm(&d)
            })
            .sum::<f64>()
            / 2.0;
    }
    Ok(total)
}

/// Bob's realized history for each vertex of an executed pattern.
pub fn histories(pattern: &BrickworkPattern, execution: &mbqc::Execution) -> Vec<History> {
    let parity = |set: Vec<usize>| set.iter().fold(0u8, |acc, &u| acc ^ execution.s[u].unwrap_or(0));
    (0..pattern.graph().num_vertices())
        .map(|v| History { sx: parity(pattern.sx(v)), szx: parity(pattern.sz(v)) ^ pattern.x(v) })
        .collect()
}

pub const SESSION_SCHEMA: u32 = 1;

/// Source of the computation for a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternRef {
    /// Cylindrical brickwork with every angle 0; the output is all zeros.
    Identity { rows: usize, cols: usize },
    /// Pattern given inline.
    Inline(PatternFile),
    /// Path to a pattern file, relative to the working directory.
    File(String),
}

/// Session configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub schema: u32,
    pub params: SecurityParams,
    pub pattern: PatternRef,
    #[serde(default = "honest")]
    pub alice_device: StrategySpec,
    #[serde(default = "honest")]
    pub bob: StrategySpec,
    pub seed: u64,
    /// Expected corrected output, when known; identity patterns default to zeros.
    #[serde(default)]
    pub expected_output: Option<Vec<u8>>,
}

fn honest() -> StrategySpec {
    StrategySpec::Honest
}

/// Resolved computation: graph, angles, and a fixed tape if the file sets one.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPattern {
    pub graph: BrickworkGraph,
    pub phi: Vec<AngleOctant>,
    pub file: Option<PatternFile>,
    pub identity: bool,
}

impl SessionConfig {
    pub fn parse(json: &str) -> Result<Self> {
        let config: SessionConfig = serde_json::from_str(json).map_err(|e| ProtocolError::Config(e.to_string()))?;
        if config.schema != SESSION_SCHEMA {
            return Err(ProtocolError::Config(format!("unsupported schema {}", config.schema)));
        }
        config.params.validate()?;
        if let PatternRef::Inline(f) = &config.pattern {
            f.validate()?;
        }
        if let Some(bits) = &config.expected_output {
            if bits.iter().any(|&b| b > 1) {
                return Err(ProtocolError::Config("expected_output must hold bits".into()));
            }
        }
        Ok(config)
    }

    pub fn resolve_pattern(&self) -> Result<ResolvedPattern> {
        let (graph, phi, file, identity) = match &self.pattern {
            PatternRef::Identity { rows, cols } => {
                let g = mbqc::build_cylindrical_brickwork(*rows, *cols)?;
                let n = g.num_vertices();
                (g, vec![AngleOctant::ZERO; n], None, true)
            }
            PatternRef::Inline(f) => (f.graph()?, f.phi_octants()?, Some(f.clone()), false),
            PatternRef::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ProtocolError::Config(format!("{path}: {e}")))?;
                let f = PatternFile::parse(&text)?;
                (f.graph()?, f.phi_octants()?, Some(f), false)
            }
        };
        if graph.num_vertices() as u64 != self.params.m {
            return Err(ProtocolError::Config(format!(
                "pattern has {} vertices but m = {}",
                graph.num_vertices(),
                self.params.m
            )));
        }
        Ok(ResolvedPattern { graph, phi, file, identity })
    }
}

/// Summary of one session.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionOutcome {
    pub seed: u64,
    pub phase_one: SelfTestVerdict,
    pub max_deviation: f64,
    pub phase_two: Option<TrapVerdict>,
    /// Corrected output, only when both phases accept.
    pub output: Option<Vec<u8>>,
    /// Whether an accepted output matches the expected one, when known.
    pub correct: Option<bool>,
}

impl SessionOutcome {
    pub fn accepted(&self) -> bool {
        self.phase_one.is_accept() && self.phase_two.as_ref().is_some_and(TrapVerdict::is_accept)
    }

    pub fn accepted_incorrect(&self) -> bool {
        self.correct == Some(false)
    }
}

/// Runs both phases with per-party streams of `seed`.
pub fn run_session(config: &SessionConfig, seed: u64, transcript: Option<&mut Transcript>) -> Result<SessionOutcome> {
    let resolved = config.resolve_pattern()?;
    run_resolved(config, &resolved, seed, transcript)
}

/// [`run_session`] with the pattern already loaded.
pub fn run_resolved(
    config: &SessionConfig,
    resolved: &ResolvedPattern,
    seed: u64,
    mut transcript: Option<&mut Transcript>,
) -> Result<SessionOutcome> {
    let mut alice_rng = party_stream(seed, Party::Alice);
    let mut nature_rng = party_stream(seed, Party::Nature);
    let nv = resolved.graph.num_vertices();
    let mut device = config.alice_device.build(Party::AliceDevice, seed, nv)?;
    let mut bob = config.bob.build(Party::Bob, seed, nv)?;
    let tape = match resolved.file.as_ref().and_then(|f| f.tape) {
        Some(t) => mbqc::tape_at(&resolved.graph, t.start_row, t.len, t.colour)?,
        None => mbqc::choose_tape(&resolved.graph, config.params.delta_frac, &mut alice_rng)?,
    };
    let kinds = mbqc::roles_for(&resolved.graph, Some(&tape));
    let one = run_phase_one(
        &config.params,
        &kinds,
        device.as_mut(),
        bob.as_mut(),
        &mut alice_rng,
        &mut nature_rng,
        transcript.as_deref_mut(),
    )?;
    let mut outcome = SessionOutcome {
        seed,
        phase_one: one.verdict.clone(),
        max_deviation: one.ledger.max_deviation(),
        phase_two: None,
        output: None,
        correct: None,
    };
    let Some(inputs) = one.prepared else {
        return Ok(outcome);
    };
    let two = run_phase_two(
        &inputs,
        resolved.graph.clone(),
        tape,
        resolved.phi.clone(),
        bob.as_mut(),
        &mut alice_rng,
        &mut nature_rng,
        one.rounds + 1,
        transcript,
    )?;
    let expected = match (&config.expected_output, resolved.identity) {
        (Some(bits), _) => Some(bits.clone()),
        (None, true) => Some(vec![0; two.pattern.outputs().len()]),
        (None, false) => None,
    };
    outcome.correct = match (&two.output, expected) {
        (Some(out), Some(exp)) => Some(*out == exp),
        _ => None,
    };
    outcome.phase_two = Some(two.verdict);
    outcome.output = two.output;
    Ok(outcome)
}
