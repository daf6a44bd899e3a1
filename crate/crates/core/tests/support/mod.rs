#![allow(dead_code)]

use std::f64::consts::FRAC_1_SQRT_2;

use dibqc::isometry::{random_unitary, OperatorAssignment};
use dibqc::mbqc::{compute_delta, BrickworkPattern, Role};
use dibqc::qstate::{self, raw, Operator, StateVector};
use dibqc::rng::SimRng;
use dibqc::selftest::Axis;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_state<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> StateVector {
    let amps = (0..1usize << qubits)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    StateVector::from_unnormalized(amps).unwrap()
}

/// `exp(−i t n·σ)` for a uniformly random unit axis `n`.
pub fn small_rotation<R: Rng + ?Sized>(t: f64, rng: &mut R) -> Operator {
    let n: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let (c, s) = (t.cos(), t.sin());
    let (x, y, z) = (n[0] / len * s, n[1] / len * s, n[2] / len * s);
    let i = Complex64::i();
    Operator::single([
        [Complex64::new(c, 0.0) - i * z, -i * x - y],
        [-i * x + y, Complex64::new(c, 0.0) + i * z],
    ])
}

fn conjugate(u: &Operator, o: &Operator) -> Operator {
    u.matmul(o).matmul(&u.adjoint())
}

/// Ideal assignment with every Alice observable conjugated by one rotation
/// and every Bob observable by another.
pub fn rotated_assignment<R: Rng + ?Sized>(t_alice: f64, t_bob: f64, rng: &mut R) -> OperatorAssignment {
    let ua = small_rotation(t_alice, rng);
    let ub = small_rotation(t_bob, rng);
    conjugated_by(&ua, &ub)
}

/// Alice rotated by `U` and Bob by `U*`; `|φ⁺⟩` is invariant, so every
/// correlation stays ideal.
pub fn mirrored_assignment<R: Rng + ?Sized>(t: f64, rng: &mut R) -> OperatorAssignment {
    let u = small_rotation(t, rng);
    conjugated_by(&u, &u.conj())
}

fn conjugated_by(ua: &Operator, ub: &Operator) -> OperatorAssignment {
    let ideal = OperatorAssignment::ideal();
    let mut a = ideal.clone();
    for axis in Axis::ALICE {
        a = a.with_alice(axis, conjugate(ua, ideal.alice(axis))).unwrap();
    }
    for axis in Axis::BOB {
        a = a.with_bob(axis, conjugate(ub, ideal.bob(axis).unwrap())).unwrap();
    }
    a
}

pub fn random_assignment<R: Rng + ?Sized>(qa: usize, qb: usize, rng: &mut R) -> OperatorAssignment {
    OperatorAssignment::random(qa, qb, rng).unwrap().with_phase(random_unitary(qb, rng)).unwrap()
}

/// Dense register where measured qubits stay in place, collapsed.
struct Dense {
    amps: Vec<Complex64>,
    n: usize,
}

impl Dense {
    fn product(states: &[StateVector]) -> Self {
        let mut amps = vec![Complex64::new(1.0, 0.0)];
        for s in states {
            amps = raw::kron(&amps, s.amplitudes());
        }
        Self { amps, n: states.len() }
    }

    fn bit(&self, q: usize) -> usize {
        1 << (self.n - 1 - q)
    }

    fn cz(&mut self, a: usize, b: usize) {
        let m = self.bit(a) | self.bit(b);
        for (i, z) in self.amps.iter_mut().enumerate() {
            if i & m == m {
                *z = -*z;
            }
        }
    }

    /// Collapses qubit `q` onto `|±_α⟩` (`outcome` 0 or 1) and returns the
    /// conditional probability.
    fn measure(&mut self, q: usize, alpha: f64, outcome: u8) -> f64 {
        let m = self.bit(q);
        let sign = if outcome == 0 { 1.0 } else { -1.0 };
        let e = Complex64::from_polar(1.0, alpha) * sign;
        let mut p = 0.0;
        for i in 0..self.amps.len() {
            if i & m != 0 {
                continue;
            }
            // ⟨±_α| = (⟨0| ± e^{−iα}⟨1|)/√2, then re-expand onto |±_α⟩.
            let c = (self.amps[i] + e.conj() * self.amps[i | m]) * FRAC_1_SQRT_2;
            p += c.norm_sqr();
            self.amps[i] = c * FRAC_1_SQRT_2;
            self.amps[i | m] = c * e * FRAC_1_SQRT_2;
        }
        if p > 0.0 {
            let scale = 1.0 / p.sqrt();
            self.amps.iter_mut().for_each(|z| *z *= scale);
        }
        p
    }

    fn state(&self) -> StateVector {
        StateVector::new(self.amps.clone()).unwrap()
    }
}

/// Probability of the honest branch `outcomes` (indexed by round) computed on
/// the whole graph at once. Dummies are replaced by the `Z^d` they imprint on
/// their neighbours and contribute ½ each. `alice_rng` must be in the state
/// the streaming run starts from.
pub fn whole_graph_probability(pattern: &BrickworkPattern, outcomes: &[u8], alice_rng: &mut SimRng) -> f64 {
    let g = pattern.graph();
    let nv = g.num_vertices();
    let inputs = pattern.ideal_inputs();
    let live: Vec<usize> = (0..nv).filter(|&v| pattern.role(v) != Role::Dummy).collect();
    let mut slot = vec![usize::MAX; nv];
    for (i, &v) in live.iter().enumerate() {
        slot[v] = i;
    }
    let mut reg = Dense::product(&live.iter().map(|&v| inputs[v].clone()).collect::<Vec<_>>());
    let z = Operator::pauli_z();
    for &(a, b) in g.edges() {
        match (pattern.role(a) == Role::Dummy, pattern.role(b) == Role::Dummy) {
            (false, false) => reg.cz(slot[a], slot[b]),
            (true, false) | (false, true) => {
                let (d, q) = if pattern.role(a) == Role::Dummy { (a, b) } else { (b, a) };
                if pattern.d(d) == 1 {
                    raw::apply_in_place(&z, &mut reg.amps, reg.n, &[slot[q]]);
                }
            }
            (true, true) => {}
        }
    }
    let mut s = vec![None; nv];
    let mut probability = 1.0;
    for (round, v) in g.measurement_order().into_iter().enumerate() {
        let delta = compute_delta(v, pattern, &s, alice_rng).unwrap();
        if pattern.role(v) == Role::Dummy {
            probability *= 0.5;
            continue;
        }
        probability *= reg.measure(slot[v], delta.radians(), outcomes[round]);
        s[v] = Some(outcomes[round] ^ pattern.r(v));
    }
    probability
}

/// Probability of corrected results `s` (per vertex; only computation
/// vertices are read) in the unblinded computation: `|+⟩` inputs on the
/// computation subgraph, angle `(−1)^{s^X}φ + s^Z·π`.
pub fn plain_probability(pattern: &BrickworkPattern, s: &[u8]) -> f64 {
    let g = pattern.graph();
    let nv = g.num_vertices();
    let comp: Vec<usize> = (0..nv).filter(|&v| pattern.role(v) == Role::Computation).collect();
    let mut slot = vec![usize::MAX; nv];
    for (i, &v) in comp.iter().enumerate() {
        slot[v] = i;
    }
    let plus = StateVector::equatorial(0.0);
    let mut reg = Dense::product(&vec![plus; comp.len()]);
    for &(a, b) in g.edges() {
        if slot[a] != usize::MAX && slot[b] != usize::MAX {
            reg.cz(slot[a], slot[b]);
        }
    }
    let parity = |set: Vec<usize>| set.iter().fold(0u8, |acc, &u| acc ^ s[u]);
    let mut probability = 1.0;
    for v in g.measurement_order() {
        if slot[v] == usize::MAX {
            continue;
        }
        let phi = pattern.phi(v);
        let phi = if parity(pattern.sx(v)) == 1 { -phi } else { phi };
        let angle = phi.plus_pi_if(parity(pattern.sz(v)));
        probability *= reg.measure(slot[v], angle.radians(), s[v]);
    }
    probability
}

/// Bloch vector of every trap and `⟨Z⟩` of every dummy in the full graph
/// state before any measurement.
pub struct TapeCheck {
    pub traps: Vec<(usize, [f64; 3])>,
    pub dummies: Vec<(usize, f64)>,
}

pub fn tape_brute_force(pattern: &BrickworkPattern) -> TapeCheck {
    let g = pattern.graph();
    let mut reg = Dense::product(&pattern.ideal_inputs());
    for &(a, b) in g.edges() {
        reg.cz(a, b);
    }
    let state = reg.state();
    let ops = [Operator::pauli_x(), Operator::pauli_y(), Operator::pauli_z()];
    let traps = pattern
        .traps()
        .into_iter()
        .map(|t| (t, std::array::from_fn(|k| qstate::expectation_on(&state, &ops[k], &[t]).unwrap())))
        .collect();
    let dummies = (0..g.num_vertices())
        .filter(|&v| pattern.role(v) == Role::Dummy)
        .map(|v| (v, qstate::expectation_on(&state, &ops[2], &[v]).unwrap()))
        .collect();
    TapeCheck { traps, dummies }
}

/// One-sided binomial slack: `k` standard errors of a rate `p` over `n` trials.
pub fn sigma(p: f64, n: u64, k: f64) -> f64 {
    k * (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / n as f64).sqrt()
}
