//! The local extraction isometry: a reduced swap on each side followed by a
//! phase kickback on Bob's side that records whether his device acts with
//! complex-conjugated operators.
//!
//! Registers are laid out big-endian as `S_A, S_B, Q_A, Q_B, R_B`, where the
//! physical registers `S_A`, `S_B` hold one or two qubits each.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{self, raw, Operator, Outcome, StateError, StateVector, Tensor};
use crate::selftest::{self, Axis, MeasurementSetting, Side};

pub const MAX_SIDE_QUBITS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsometryError {
    #[error("side registers must hold 1..={MAX_SIDE_QUBITS} qubits, got {0}")]
    SideSize(usize),
    #[error("{axis} on {side:?}'s side must be a ±1 observable on {qubits} qubit(s)")]
    BadObservable { axis: Axis, side: Side, qubits: usize },
    #[error("phase operator must be a unitary on Bob's {0} qubit(s)")]
    BadPhase(usize),
    #[error("Bob has no {0} observable")]
    NotBobAxis(Axis),
    #[error(transparent)]
    State(#[from] StateError),
}

pub type Result<T> = std::result::Result<T, IsometryError>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// The operators an (untrusted) pair of devices applies for each label.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorAssignment {
    alice_qubits: usize,
    bob_qubits: usize,
    /// Indexed as [`Axis::ALICE`].
    alice: Vec<Operator>,
    /// Indexed as [`Axis::BOB`].
    bob: Vec<Operator>,
    phase: Operator,
}

fn alice_slot(axis: Axis) -> usize {
    Axis::ALICE.iter().position(|a| *a == axis).expect("every axis is an Alice axis")
}

fn bob_slot(axis: Axis) -> Result<usize> {
    Axis::BOB.iter().position(|a| *a == axis).ok_or(IsometryError::NotBobAxis(axis))
}

/// Embeds a single-qubit operator on the first qubit of a `qubits`-wide side.
fn embed(op: Operator, qubits: usize) -> Operator {
    if qubits == 1 {
        op
    } else {
        op.tensor(&Operator::identity(qubits - 1))
    }
}

impl OperatorAssignment {
    /// Honest devices on a single qubit per side.
    pub fn ideal() -> Self {
        Self::ideal_embedded(1, 1).expect("one qubit per side is valid")
    }

    /// Honest operators on the first qubit of each side, identity elsewhere.
    pub fn ideal_embedded(alice_qubits: usize, bob_qubits: usize) -> Result<Self> {
        check_side(alice_qubits)?;
        check_side(bob_qubits)?;
        let alice = Axis::ALICE
            .iter()
            .map(|&a| embed(selftest::observable_matrix(a, Side::Alice).expect("alice axis"), alice_qubits))
            .collect();
        let bob = Axis::BOB
            .iter()
            .map(|&b| embed(selftest::observable_matrix(b, Side::Bob).expect("bob axis"), bob_qubits))
            .collect();
        let mut assignment = Self { alice_qubits, bob_qubits, alice, bob, phase: Operator::identity(bob_qubits) };
        assignment.phase = assignment.derived_phase();
        Ok(assignment)
    }

    /// Honest Alice with Bob's operators complex-conjugated.
    pub fn conjugated() -> Self {
        let mut a = Self::ideal();
        a.bob = a.bob.iter().map(Operator::conj).collect();
        a.phase = a.derived_phase();
        a
    }

    /// Haar-random ±1 observables (never ±I) for every label.
    pub fn random<R: Rng + ?Sized>(alice_qubits: usize, bob_qubits: usize, rng: &mut R) -> Result<Self> {
        check_side(alice_qubits)?;
        check_side(bob_qubits)?;
        let alice = (0..7).map(|_| random_observable(alice_qubits, rng)).collect();
        let bob = (0..3).map(|_| random_observable(bob_qubits, rng)).collect();
        let mut a = Self { alice_qubits, bob_qubits, alice, bob, phase: Operator::identity(bob_qubits) };
        a.phase = a.derived_phase();
        Ok(a)
    }

    /// `M_B = i·Y_B·Z_B·X_B`: the identity for honest Bob (`Y_B = −Y = −iXZ`)
    /// and `−I` when all his operators are conjugated.
    pub fn derived_phase(&self) -> Operator {
        let (x, y, z) = (&self.bob[0], &self.bob[1], &self.bob[2]);
        y.matmul(z).matmul(x).scale(I)
    }

    /// Replaces Alice's operator for `axis`.
    pub fn with_alice(mut self, axis: Axis, op: Operator) -> Result<Self> {
        if op.dim_qubits() != self.alice_qubits || !op.is_pm1_observable() {
            return Err(IsometryError::BadObservable { axis, side: Side::Alice, qubits: self.alice_qubits });
        }
        self.alice[alice_slot(axis)] = op;
        Ok(self)
    }

    /// Replaces Bob's operator for `axis` and re-derives `M_B`.
    pub fn with_bob(mut self, axis: Axis, op: Operator) -> Result<Self> {
        let slot = bob_slot(axis)?;
        if op.dim_qubits() != self.bob_qubits || !op.is_pm1_observable() {
            return Err(IsometryError::BadObservable { axis, side: Side::Bob, qubits: self.bob_qubits });
        }
        self.bob[slot] = op;
        self.phase = self.derived_phase();
        Ok(self)
    }

    /// Overrides `M_B` with an arbitrary unitary.
    pub fn with_phase(mut self, op: Operator) -> Result<Self> {
        if op.dim_qubits() != self.bob_qubits || !op.is_unitary() {
            return Err(IsometryError::BadPhase(self.bob_qubits));
        }
        self.phase = op;
        Ok(self)
    }

    pub fn alice_qubits(&self) -> usize {
        self.alice_qubits
    }

    pub fn bob_qubits(&self) -> usize {
        self.bob_qubits
    }

    pub fn physical_qubits(&self) -> usize {
        self.alice_qubits + self.bob_qubits
    }

    pub fn alice(&self, axis: Axis) -> &Operator {
        &self.alice[alice_slot(axis)]
    }

    pub fn bob(&self, axis: Axis) -> Result<&Operator> {
        Ok(&self.bob[bob_slot(axis)?])
    }

    pub fn phase(&self) -> &Operator {
        &self.phase
    }

    fn alice_targets(&self) -> Vec<usize> {
        (0..self.alice_qubits).collect()
    }

    fn bob_targets(&self) -> Vec<usize> {
        (self.alice_qubits..self.physical_qubits()).collect()
    }
}

fn check_side(qubits: usize) -> Result<()> {
    if (1..=MAX_SIDE_QUBITS).contains(&qubits) {
        Ok(())
    } else {
        Err(IsometryError::SideSize(qubits))
    }
}

/// Haar-random unitary via QR of a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> Operator {
    let d = 1usize << qubits;
    let g = DMatrix::from_fn(d, d, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut entries = Vec::with_capacity(d * d);
    for row in 0..d {
        for col in 0..d {
            let phase = r[(col, col)] / r[(col, col)].norm();
            entries.push(q[(row, col)] * phase);
        }
    }
    Operator::new(qubits, entries).expect("square matrix of the right size")
}

/// `U·diag(±1)·U†` with a Haar-random `U` and a spectrum containing both signs.
pub fn random_observable<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> Operator {
    let d = 1usize << qubits;
    let u = random_unitary(qubits, rng);
    let flip = rng.random_range(1..d);
    let mut signs = vec![Complex64::new(1.0, 0.0); d];
    for s in signs.iter_mut().take(flip) {
        *s = Complex64::new(-1.0, 0.0);
    }
    let mut diag = vec![ZERO; d * d];
    (0..d).for_each(|i| diag[i * d + i] = signs[i]);
    let diag = Operator::new(qubits, diag).expect("diagonal");
    u.matmul(&diag).matmul(&u.adjoint())
}

/// What the swap stage does with Alice's ancilla `Q_A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AliceRegister {
    /// Reduced swap with Alice's assigned `X_A`, `Z_A`.
    Swap,
    /// `Q_A` records Alice's measurement outcome in the computational basis.
    Outcome(Outcome),
}

fn register_labels(assignment: &OperatorAssignment, ancillas: &[&str]) -> Vec<String> {
    let mut labels: Vec<String> = (0..assignment.alice_qubits).map(|i| format!("S_A{i}")).collect();
    labels.extend((0..assignment.bob_qubits).map(|i| format!("S_B{i}")));
    labels.extend(ancillas.iter().map(|s| s.to_string()));
    labels
}

fn check_state(state: &StateVector, expected: usize) -> Result<()> {
    if state.num_qubits() != expected {
        return Err(StateError::DimensionMismatch { expected, actual: state.num_qubits() }.into());
    }
    Ok(())
}

/// `H; controlled-Z; H; controlled-X` with the ancilla as control.
fn reduced_swap(amplitudes: &mut [Complex64], n: usize, ancilla: usize, x: &Operator, z: &Operator, targets: &[usize]) {
    let h = Operator::hadamard();
    raw::apply_in_place(&h, amplitudes, n, &[ancilla]);
    raw::apply_controlled_in_place(z, amplitudes, n, ancilla, targets);
    raw::apply_in_place(&h, amplitudes, n, &[ancilla]);
    raw::apply_controlled_in_place(x, amplitudes, n, ancilla, targets);
}

/// Appends `Q_A, Q_B` in `|00⟩` and applies the reduced swap.
pub fn swap_stage(state: &StateVector, assignment: &OperatorAssignment, alice: AliceRegister) -> Result<StateVector> {
    let phys = assignment.physical_qubits();
    check_state(state, phys)?;
    let n = phys + 2;
    let mut amps = raw::append_zeros(state.amplitudes(), 2);
    match alice {
        AliceRegister::Swap => reduced_swap(
            &mut amps,
            n,
            phys,
            assignment.alice(Axis::X),
            assignment.alice(Axis::Z),
            &assignment.alice_targets(),
        ),
        AliceRegister::Outcome(Outcome::Plus) => {}
        AliceRegister::Outcome(Outcome::Minus) => raw::apply_in_place(&Operator::pauli_x(), &mut amps, n, &[phys]),
    }
    reduced_swap(&mut amps, n, phys + 1, &assignment.bob[0], &assignment.bob[2], &assignment.bob_targets());
    Ok(StateVector::with_labels(amps, register_labels(assignment, &["Q_A", "Q_B"]))?)
}

/// Appends `R_B` in `|0⟩` and applies `H; controlled-M_B; H`.
pub fn kickback_stage(state: &StateVector, assignment: &OperatorAssignment) -> Result<StateVector> {
    let before = assignment.physical_qubits() + 2;
    check_state(state, before)?;
    let n = before + 1;
    let mut amps = raw::append_zeros(state.amplitudes(), 1);
    let h = Operator::hadamard();
    raw::apply_in_place(&h, &mut amps, n, &[before]);
    raw::apply_controlled_in_place(&assignment.phase, &mut amps, n, before, &assignment.bob_targets());
    raw::apply_in_place(&h, &mut amps, n, &[before]);
    Ok(StateVector::with_labels(amps, register_labels(assignment, &["Q_A", "Q_B", "R_B"]))?)
}

/// `(I + (−1)^a σ_A)|ψ⟩`, unnormalized.
fn alice_projected(state: &StateVector, assignment: &OperatorAssignment, sigma: Axis, outcome: Outcome) -> Vec<Complex64> {
    let mut flipped = state.amplitudes().to_vec();
    raw::apply_in_place(assignment.alice(sigma), &mut flipped, state.num_qubits(), &assignment.alice_targets());
    let s = outcome.sign() as f64;
    state.amplitudes().iter().zip(&flipped).map(|(a, b)| a + b * s).collect()
}

/// Evaluates the summed closed form
/// `(1/4√2) Σ_{k,l} (I + (−1)^l M_B) X_B^k (I + (−1)^k Z_B)(I + (−1)^a σ_A)|ψ⟩|a k⟩|l⟩`
/// and renormalizes it.
pub fn closed_form(state: &StateVector, assignment: &OperatorAssignment, sigma: Axis, outcome: Outcome) -> Result<StateVector> {
    let phys = assignment.physical_qubits();
    check_state(state, phys)?;
    let targets = assignment.bob_targets();
    let v = alice_projected(state, assignment, sigma, outcome);
    let mut out = vec![ZERO; v.len() << 3];
    let scale = 1.0 / (4.0 * SQRT_2);
    for k in 0..2usize {
        let mut zk = v.clone();
        raw::apply_in_place(&assignment.bob[2], &mut zk, phys, &targets);
        let sk = if k == 0 { 1.0 } else { -1.0 };
        let mut w: Vec<Complex64> = v.iter().zip(&zk).map(|(a, b)| a + b * sk).collect();
        if k == 1 {
            raw::apply_in_place(&assignment.bob[0], &mut w, phys, &targets);
        }
        for l in 0..2usize {
            let mut mw = w.clone();
            raw::apply_in_place(&assignment.phase, &mut mw, phys, &targets);
            let sl = if l == 0 { 1.0 } else { -1.0 };
            for (s, (a, b)) in w.iter().zip(&mw).enumerate() {
                let index = (s << 3) | ((outcome.bit() as usize) << 2) | (k << 1) | l;
                out[index] = (a + b * sl) * scale;
            }
        }
    }
    let state = StateVector::from_unnormalized(out)?;
    Ok(state.relabel(register_labels(assignment, &["Q_A", "Q_B", "R_B"]))?)
}

/// Full circuit applied to Alice's normalized post-measurement state, with
/// `Q_A` recording her outcome.
pub fn isometry_output(state: &StateVector, assignment: &OperatorAssignment, sigma: Axis, outcome: Outcome) -> Result<StateVector> {
    check_state(state, assignment.physical_qubits())?;
    let projected = StateVector::from_unnormalized(alice_projected(state, assignment, sigma, outcome))
        .map_err(|_| StateError::ZeroProbability)?
        .relabel(state.labels().to_vec())?;
    let swapped = swap_stage(&projected, assignment, AliceRegister::Outcome(outcome))?;
    kickback_stage(&swapped, assignment)
}

/// Ideal single-qubit state on `Q_B` for the `R_B = 0` branch: the
/// `(−1)^a` eigenvector of `σ*`, the state an honest Bob ends up holding.
pub fn ideal_bob_state(sigma: Axis, outcome: Outcome) -> StateVector {
    let obs = selftest::observable_matrix(sigma, Side::Alice).expect("alice axis").conj();
    let s = outcome.sign() as f64;
    let col = |c: usize| -> Vec<Complex64> {
        (0..2)
            .map(|r| {
                let id = if r == c { Complex64::new(1.0, 0.0) } else { ZERO };
                (id + obs.entry(r, c) * s) * 0.5
            })
            .collect()
    };
    let (c0, c1) = (col(0), col(1));
    let pick = if raw::norm_sqr(&c0) >= raw::norm_sqr(&c1) { c0 } else { c1 };
    StateVector::from_unnormalized(pick).expect("projector has rank one")
}

#[derive(Clone, Debug)]
pub struct ExtractionResult {
    /// Normalized isometry output over `S ⊗ Q_A Q_B ⊗ R_B`.
    pub extracted_state: StateVector,
    /// Distance to the two-branch target with optimal junk per branch.
    pub distance: f64,
    /// Largest deviation of the fourteen correlations from ideal.
    pub chi_actual: f64,
    pub sigma: Axis,
    pub outcome: Outcome,
    /// Weight of the `R_B = 0` and `R_B = 1` branches.
    pub branch_weights: [f64; 2],
}

/// `‖(I − |a,t_l⟩⟨a,t_l|) out_l‖²` summed over the two `R_B` branches,
/// where `t_0` is [`ideal_bob_state`] and `t_1 = t_0*`.
fn branch_distance(out: &StateVector, sigma: Axis, outcome: Outcome) -> (f64, [f64; 2]) {
    let t0 = ideal_bob_state(sigma, outcome);
    let t1: Vec<Complex64> = t0.amplitudes().iter().map(|z| z.conj()).collect();
    let targets = [t0.amplitudes().to_vec(), t1];
    let amps = out.amplitudes();
    let s_dim = amps.len() >> 3;
    let a = outcome.bit() as usize;
    let mut dist2 = 0.0;
    let mut weights = [0.0; 2];
    for (l, t) in targets.iter().enumerate() {
        for s in 0..s_dim {
            let at = |qa: usize, qb: usize| amps[(s << 3) | (qa << 2) | (qb << 1) | l];
            let proj: Complex64 = (0..2).map(|qb| t[qb].conj() * at(a, qb)).sum();
            for qa in 0..2 {
                for qb in 0..2 {
                    let amp = at(qa, qb);
                    weights[l] += amp.norm_sqr();
                    let residual = if qa == a { amp - t[qb] * proj } else { amp };
                    dist2 += residual.norm_sqr();
                }
            }
        }
    }
    (dist2.sqrt(), weights)
}

/// `⟨ψ| α_A ⊗ β_B |ψ⟩` for all fourteen settings, with the assigned operators.
pub fn correlations(state: &StateVector, assignment: &OperatorAssignment) -> Result<[f64; 14]> {
    check_state(state, assignment.physical_qubits())?;
    let mut out = [0.0; 14];
    for (slot, setting) in MeasurementSetting::ALL.iter().enumerate() {
        let joint = assignment.alice(setting.alpha()).tensor(assignment.bob(setting.beta())?);
        out[slot] = qstate::expectation(state, &joint)?;
    }
    Ok(out)
}

pub fn chi_actual(state: &StateVector, assignment: &OperatorAssignment) -> Result<f64> {
    let corr = correlations(state, assignment)?;
    Ok(MeasurementSetting::ALL
        .iter()
        .zip(corr)
        .map(|(s, c)| (c - selftest::ideal_correlation(*s)).abs())
        .fold(0.0, f64::max))
}

/// Runs the isometry for Alice's outcome `outcome` of `sigma` and measures how
/// far the output is from the ideal extracted state.
pub fn extraction_distance(
    state: &StateVector,
    assignment: &OperatorAssignment,
    sigma: Axis,
    outcome: Outcome,
) -> Result<ExtractionResult> {
    let extracted_state = isometry_output(state, assignment, sigma, outcome)?;
    let (distance, branch_weights) = branch_distance(&extracted_state, sigma, outcome);
    Ok(ExtractionResult {
        extracted_state,
        distance,
        chi_actual: chi_actual(state, assignment)?,
        sigma,
        outcome,
        branch_weights,
    })
}

/// Left-hand sides of the four operator relations:
/// `‖{X_A,Z_A}ψ‖`, `‖{X_B,Z_B}ψ‖`, `‖(X_A−X_B)ψ‖`, `‖(Z_A−Z_B)ψ‖`.
pub fn commutation_residuals(state: &StateVector, assignment: &OperatorAssignment) -> Result<[f64; 4]> {
    let n = assignment.physical_qubits();
    check_state(state, n)?;
    let (ta, tb) = (assignment.alice_targets(), assignment.bob_targets());
    let act = |ops: &[(&Operator, &[usize])]| {
        let mut v = state.amplitudes().to_vec();
        for (op, t) in ops.iter().rev() {
            raw::apply_in_place(op, &mut v, n, t);
        }
        v
    };
    let norm_of = |a: Vec<Complex64>, b: Vec<Complex64>, sign: f64| {
        a.iter().zip(&b).map(|(x, y)| (x + y * sign).norm_sqr()).sum::<f64>().sqrt()
    };
    let (xa, za) = (assignment.alice(Axis::X), assignment.alice(Axis::Z));
    let (xb, zb) = (&assignment.bob[0], &assignment.bob[2]);
    Ok([
        norm_of(act(&[(xa, &ta), (za, &ta)]), act(&[(za, &ta), (xa, &ta)]), 1.0),
        norm_of(act(&[(xb, &tb), (zb, &tb)]), act(&[(zb, &tb), (xb, &tb)]), 1.0),
        norm_of(act(&[(xa, &ta)]), act(&[(xb, &tb)]), -1.0),
        norm_of(act(&[(za, &ta)]), act(&[(zb, &tb)]), -1.0),
    ])
}

/// Upper bounds on the four residuals: `2ε₁`, `2ε₁ − 4ε₂`, `ε₂`, `ε₂`.
pub fn residual_bounds(chi: f64) -> [f64; 4] {
    let e = selftest::epsilon_bounds(chi);
    [2.0 * e.eps1, 2.0 * e.eps1 - 4.0 * e.eps2, e.eps2, e.eps2]
}

/// `cos η|00⟩ + e^{iφ} sin η|11⟩`.
pub fn detuned_pair(eta: f64, phase: f64) -> StateVector {
    let amps = vec![
        Complex64::new(eta.cos(), 0.0),
        ZERO,
        ZERO,
        Complex64::from_polar(eta.sin(), phase),
    ];
    StateVector::new(amps).expect("normalized by construction")
}

/// Purification of `q|φ⁺⟩⟨φ⁺| + (1−q)I/4` over `(A, A′, B, B′)`, with the
/// Bell-basis index split across the two purifying qubits.
pub fn werner_purification(q: f64) -> StateVector {
    assert!((0.0..=1.0).contains(&q), "Werner parameter must lie in [0, 1]");
    let h = FRAC_1_SQRT_2;
    let weights = [(1.0 + 3.0 * q) / 4.0, (1.0 - q) / 4.0, (1.0 - q) / 4.0, (1.0 - q) / 4.0];
    // Bell states over (A, B): φ⁺, φ⁻, ψ⁺, ψ⁻.
    let bells: [[f64; 4]; 4] = [[h, 0.0, 0.0, h], [h, 0.0, 0.0, -h], [0.0, h, h, 0.0], [0.0, h, -h, 0.0]];
    let mut amps = vec![ZERO; 16];
    for (i, (w, bell)) in weights.iter().zip(&bells).enumerate() {
        let (pa, pb) = (i >> 1, i & 1);
        for (ab, c) in bell.iter().enumerate() {
            let (a, b) = (ab >> 1, ab & 1);
            let index = (a << 3) | (pa << 2) | (b << 1) | pb;
            amps[index] += Complex64::new(w.sqrt() * c, 0.0);
        }
    }
    StateVector::new(amps).expect("normalized by construction")
}

/// One row of an extraction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chi_actual: f64,
    pub distance: f64,
    pub eps_tilde_bound: f64,
    pub sigma: Axis,
    pub outcome: Outcome,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "chi_actual,distance,eps_tilde_bound,sigma,outcome";

    pub fn from_result(result: &ExtractionResult) -> Self {
        Self {
            chi_actual: result.chi_actual,
            distance: result.distance,
            eps_tilde_bound: selftest::epsilon_bounds(result.chi_actual).eps_tilde,
            sigma: result.sigma,
            outcome: result.outcome,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{},{}",
            self.chi_actual,
            self.distance,
            self.eps_tilde_bound,
            self.sigma,
            self.outcome.sign()
        )
    }

    pub fn within_bound(&self) -> bool {
        self.distance <= self.eps_tilde_bound + qstate::NORM_TOL
    }
}
