//! Blind, trap-verified measurement-based computation on a cylindrical
//! brickwork state.
//!
//! Vertices are indexed row-major (`row * cols + col`); measurements proceed
//! column by column, top to bottom within a column. The information flow is
//! `f(v) = right(v)` on the computation rows.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::StateVector;
use crate::selftest::{BoundReport, SecurityParams};

/// Largest number of simultaneously live qubits the streaming simulator accepts.
pub const MAX_LIVE_QUBITS: usize = 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MbqcError {
    #[error("cylindrical brickwork needs an even number of rows ≥ 4, got {0}")]
    BadRows(usize),
    #[error("brickwork needs cols ≡ 1 (mod 8), got {0}")]
    IncompatibleCols(usize),
    #[error("graph dimensions {rows}×{cols} out of range")]
    Dimensions { rows: usize, cols: usize },
    #[error("delta_frac must lie in (0, 1/2), got {0}")]
    InvalidDelta(f64),
    #[error("tape of {tape} rows plus two dummy rows does not fit in {rows} rows")]
    NoComputationRows { tape: usize, rows: usize },
    #[error("trap tapes need a cylindrical graph")]
    NotCylindrical,
    #[error("invalid tape: {0}")]
    InvalidTape(String),
    #[error("vertex {vertex} depends on unmeasured vertex {dependency}")]
    UnmeasuredDependency { vertex: usize, dependency: usize },
    #[error("prover returned {value} for round {round}; expected a bit")]
    MalformedBit { round: usize, value: u8 },
    #[error("{live} live qubits exceed the frontier limit {limit}")]
    FrontierOverflow { live: usize, limit: usize },
    #[error("pattern has no traps")]
    NoTraps,
    #[error("expected {expected} inputs, got {actual}")]
    InputCount { expected: usize, actual: usize },
    #[error("input for vertex {0} is not a single qubit")]
    InputWidth(usize),
    #[error("label for vertex {0} does not match its role")]
    LabelRole(usize),
    #[error("octant {0} out of range 0..8")]
    InvalidOctant(u8),
    #[error("forced outcome list has {actual} entries, expected {expected}")]
    ForcedLength { expected: usize, actual: usize },
    #[error("invalid pattern file: {0}")]
    Pattern(String),
}

pub type Result<T> = std::result::Result<T, MbqcError>;

/// An angle `kπ/4`, arithmetic mod 8.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AngleOctant(u8);

impl AngleOctant {
    pub const ZERO: AngleOctant = AngleOctant(0);
    pub const PI: AngleOctant = AngleOctant(4);

    pub fn new(k: i64) -> Self {
        AngleOctant(k.rem_euclid(8) as u8)
    }

    pub fn k(self) -> u8 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0 as f64 * PI / 4.0
    }

    /// Adds π when `bit` is 1.
    pub fn plus_pi_if(self, bit: u8) -> Self {
        if bit & 1 == 1 {
            self + AngleOctant::PI
        } else {
            self
        }
    }

    pub fn all() -> impl Iterator<Item = AngleOctant> {
        (0..8).map(AngleOctant)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AngleOctant(rng.random_range(0..8))
    }
}

impl TryFrom<u8> for AngleOctant {
    type Error = MbqcError;

    fn try_from(k: u8) -> Result<Self> {
        if k < 8 {
            Ok(AngleOctant(k))
        } else {
            Err(MbqcError::InvalidOctant(k))
        }
    }
}

impl From<AngleOctant> for u8 {
    fn from(a: AngleOctant) -> u8 {
        a.0
    }
}

impl Add for AngleOctant {
    type Output = AngleOctant;
    fn add(self, rhs: AngleOctant) -> AngleOctant {
        AngleOctant((self.0 + rhs.0) % 8)
    }
}

impl Sub for AngleOctant {
    type Output = AngleOctant;
    fn sub(self, rhs: AngleOctant) -> AngleOctant {
        AngleOctant((self.0 + 8 - rhs.0) % 8)
    }
}

impl Neg for AngleOctant {
    type Output = AngleOctant;
    fn neg(self) -> AngleOctant {
        AngleOctant((8 - self.0) % 8)
    }
}

impl fmt::Display for AngleOctant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}π/4", self.0)
    }
}

/// Brickwork graph on a `rows × cols` grid, optionally wrapped in the row
/// direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrickworkGraph {
    rows: usize,
    cols: usize,
    cylindrical: bool,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// Whether rows `(r, r+1)` carry a vertical edge at column `c` (0-indexed).
/// Pairs starting on an even row are bricked at columns ≡ 2, 4 (mod 8);
/// pairs starting on an odd row at columns ≡ 6, 0 (mod 8), excluding 0.
fn brick_edge(r: usize, c: usize) -> bool {
    if r.is_multiple_of(2) {
        matches!(c % 8, 2 | 4)
    } else {
        c > 0 && matches!(c % 8, 6 | 0)
    }
}

impl BrickworkGraph {
    /// Any grid size; cylindrical graphs need an even row count ≥ 2.
    pub fn new(rows: usize, cols: usize, cylindrical: bool) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > 64 || cols > 1 << 16 {
            return Err(MbqcError::Dimensions { rows, cols });
        }
        if cylindrical && (rows % 2 == 1 || rows < 2) {
            return Err(MbqcError::BadRows(rows));
        }
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r, c + 1)));
                }
                let below = if r + 1 < rows {
                    Some(r + 1)
                } else if cylindrical && rows > 2 {
                    Some(0)
                } else {
                    None
                };
                if let Some(b) = below {
                    if brick_edge(r, c) {
                        let (a, b) = (idx(r, c), idx(b, c));
                        edges.push((a.min(b), a.max(b)));
                    }
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); rows * cols];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self { rows, cols, cylindrical, edges, adjacency })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cylindrical(&self) -> bool {
        self.cylindrical
    }

    pub fn num_vertices(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// `(row, col)` of a vertex.
    pub fn position(&self, v: usize) -> (usize, usize) {
        (v / self.cols, v % self.cols)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Colour class `(row + col) mod 2`.
    pub fn colour(&self, v: usize) -> u8 {
        let (r, c) = self.position(v);
        ((r + c) % 2) as u8
    }

    pub fn left(&self, v: usize) -> Option<usize> {
        (!v.is_multiple_of(self.cols)).then(|| v - 1)
    }

    pub fn right(&self, v: usize) -> Option<usize> {
        (v % self.cols + 1 < self.cols).then(|| v + 1)
    }

    /// Neighbours in the same column.
    pub fn vertical_neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let col = v % self.cols;
        self.adjacency[v].iter().copied().filter(move |u| u % self.cols == col)
    }

    /// Vertices in measurement order: column-major, rows ascending.
    pub fn measurement_order(&self) -> Vec<usize> {
        (0..self.cols).flat_map(|c| (0..self.rows).map(move |r| r * self.cols + c)).collect()
    }
}

/// Cylindrical brickwork with `rows` even ≥ 4 and `cols ≡ 1 (mod 8)`.
pub fn build_cylindrical_brickwork(rows: usize, cols: usize) -> Result<BrickworkGraph> {
    if rows < 4 || rows % 2 == 1 {
        return Err(MbqcError::BadRows(rows));
    }
    if cols % 8 != 1 {
        return Err(MbqcError::IncompatibleCols(cols));
    }
    BrickworkGraph::new(rows, cols, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Computation,
    Trap,
    Dummy,
}

/// Trap tape: consecutive rows `R`, traps of one colour inside it, and
/// dummies filling the rest of `R` plus the rows just above and below.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapeAssignment {
    pub start_row: usize,
    pub rows: Vec<usize>,
    pub colour: u8,
    pub traps: Vec<usize>,
    pub dummies: Vec<usize>,
}

/// `|R| = round(2Δn)`, halves rounded up, at least 1.
pub fn tape_len(rows: usize, delta_frac: f64) -> usize {
    ((2.0 * delta_frac * rows as f64 + 0.5).floor() as usize).max(1)
}

/// Deterministic tape with the given start row, length and trap colour.
pub fn tape_at(graph: &BrickworkGraph, start_row: usize, len: usize, colour: u8) -> Result<TapeAssignment> {
    if !graph.cylindrical() {
        return Err(MbqcError::NotCylindrical);
    }
    let n = graph.rows();
    if len == 0 || start_row >= n || colour > 1 {
        return Err(MbqcError::InvalidTape(format!("start {start_row}, len {len}, colour {colour}")));
    }
    if len + 2 > n {
        return Err(MbqcError::NoComputationRows { tape: len, rows: n });
    }
    let rows: Vec<usize> = (0..len).map(|i| (start_row + i) % n).collect();
    let border = [(start_row + n - 1) % n, (start_row + len) % n];
    let mut traps = Vec::new();
    let mut dummies = Vec::new();
    for v in 0..graph.num_vertices() {
        let (r, _) = graph.position(v);
        if rows.contains(&r) {
            if graph.colour(v) == colour {
                traps.push(v);
            } else {
                dummies.push(v);
            }
        } else if border.contains(&r) {
            dummies.push(v);
        }
    }
    Ok(TapeAssignment { start_row, rows, colour, traps, dummies })
}

/// Uniform start row and colour; `|R|` from [`tape_len`].
pub fn choose_tape<R: Rng + ?Sized>(graph: &BrickworkGraph, delta_frac: f64, rng: &mut R) -> Result<TapeAssignment> {
    if !(delta_frac > 0.0 && delta_frac < 0.5) {
        return Err(MbqcError::InvalidDelta(delta_frac));
    }
    let len = tape_len(graph.rows(), delta_frac);
    if len + 2 > graph.rows() {
        return Err(MbqcError::NoComputationRows { tape: len, rows: graph.rows() });
    }
    let start = rng.random_range(0..graph.rows());
    let colour = rng.random_range(0..2u8);
    tape_at(graph, start, len, colour)
}

pub fn roles_for(graph: &BrickworkGraph, tape: Option<&TapeAssignment>) -> Vec<Role> {
    let mut roles = vec![Role::Computation; graph.num_vertices()];
    if let Some(t) = tape {
        t.traps.iter().for_each(|&v| roles[v] = Role::Trap);
        t.dummies.iter().for_each(|&v| roles[v] = Role::Dummy);
    }
    roles
}

/// Alice's classical record of a prepared qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLabel {
    /// Bob holds `|+_θ⟩` with this θ.
    Equatorial(AngleOctant),
    /// Bob holds the computational basis state `|d⟩`.
    Basis(u8),
}

/// A fully specified blind computation: graph, roles, secret angles and the
/// one-time pads Alice uses to hide them.
#[derive(Clone, Debug, PartialEq)]
pub struct BrickworkPattern {
    graph: BrickworkGraph,
    tape: Option<TapeAssignment>,
    roles: Vec<Role>,
    phi: Vec<AngleOctant>,
    theta: Vec<AngleOctant>,
    r: Vec<u8>,
    d: Vec<u8>,
    x: Vec<u8>,
}

impl BrickworkPattern {
    /// Combines a computation `phi` (row-major, one per vertex; ignored on
    /// trap and dummy vertices) with prepared-qubit labels and fresh result
    /// pads `r` drawn from `alice_rng`.
    pub fn assemble<R: Rng + ?Sized>(
        graph: BrickworkGraph,
        tape: Option<TapeAssignment>,
        phi: Vec<AngleOctant>,
        labels: &[InputLabel],
        alice_rng: &mut R,
    ) -> Result<Self> {
        let nv = graph.num_vertices();
        if phi.len() != nv {
            return Err(MbqcError::InputCount { expected: nv, actual: phi.len() });
        }
        if labels.len() != nv {
            return Err(MbqcError::InputCount { expected: nv, actual: labels.len() });
        }
        let roles = roles_for(&graph, tape.as_ref());
        let mut theta = vec![AngleOctant::ZERO; nv];
        let mut d = vec![0u8; nv];
        for v in 0..nv {
            match (roles[v], labels[v]) {
                (Role::Dummy, InputLabel::Basis(bit)) if bit <= 1 => d[v] = bit,
                (Role::Computation | Role::Trap, InputLabel::Equatorial(t)) => theta[v] = t,
                _ => return Err(MbqcError::LabelRole(v)),
            }
        }
        let phi = phi
            .into_iter()
            .zip(&roles)
            .map(|(p, role)| if *role == Role::Computation { p } else { AngleOctant::ZERO })
            .collect();
        let r = (0..nv).map(|_| alice_rng.random_range(0..2u8)).collect();
        let x = (0..nv)
            .map(|v| {
                graph.neighbours(v).iter().filter(|&&u| roles[u] == Role::Dummy).fold(0u8, |acc, &u| acc ^ d[u])
            })
            .collect();
        Ok(Self { graph, tape, roles, phi, theta, r, d, x })
    }

    /// Labels as an ideal preparation stage would produce them: uniform θ and
    /// uniform dummy bits, both from `rng`.
    pub fn random_labels<R: Rng + ?Sized>(graph: &BrickworkGraph, tape: Option<&TapeAssignment>, rng: &mut R) -> Vec<InputLabel> {
        roles_for(graph, tape)
            .into_iter()
            .map(|role| match role {
                Role::Dummy => InputLabel::Basis(rng.random_range(0..2)),
                _ => InputLabel::Equatorial(AngleOctant::random(rng)),
            })
            .collect()
    }

    /// Bob's ideal prepared qubits.
    pub fn ideal_inputs(&self) -> Vec<StateVector> {
        (0..self.graph.num_vertices())
            .map(|v| match self.roles[v] {
                Role::Dummy => StateVector::basis(1, self.d[v] as usize),
                _ => StateVector::equatorial(self.theta[v].radians()),
            })
            .collect()
    }

    pub fn graph(&self) -> &BrickworkGraph {
        &self.graph
    }

    pub fn tape(&self) -> Option<&TapeAssignment> {
        self.tape.as_ref()
    }

    pub fn role(&self, v: usize) -> Role {
        self.roles[v]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn phi(&self, v: usize) -> AngleOctant {
        self.phi[v]
    }

    pub fn theta(&self, v: usize) -> AngleOctant {
        self.theta[v]
    }

    pub fn r(&self, v: usize) -> u8 {
        self.r[v]
    }

    pub fn d(&self, v: usize) -> u8 {
        self.d[v]
    }

    pub fn x(&self, v: usize) -> u8 {
        self.x[v]
    }

    pub fn traps(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&v| self.roles[v] == Role::Trap).collect()
    }

    /// Computation vertices in the last column, top to bottom.
    pub fn outputs(&self) -> Vec<usize> {
        let c = self.graph.cols() - 1;
        (0..self.graph.rows()).map(|r| self.graph.index(r, c)).filter(|&v| self.roles[v] == Role::Computation).collect()
    }

    /// `S^X_v = {left(v)}` for computation vertices.
    pub fn sx(&self, v: usize) -> Vec<usize> {
        if self.roles[v] != Role::Computation {
            return Vec::new();
        }
        self.graph.left(v).into_iter().collect()
    }

    /// `S^Z_v = {u ≠ v : f(u) ∈ N(v)}`: `left(left(v))` and the left
    /// neighbours of computation vertices vertically adjacent to `v`.
    pub fn sz(&self, v: usize) -> Vec<usize> {
        if self.roles[v] != Role::Computation {
            return Vec::new();
        }
        let g = &self.graph;
        let mut out: Vec<usize> = g.left(v).and_then(|u| g.left(u)).into_iter().collect();
        out.extend(
            g.vertical_neighbours(v)
                .filter(|&u| self.roles[u] == Role::Computation)
                .filter_map(|u| g.left(u)),
        );
        out
    }
}

fn parity(set: &[usize], s: &[Option<u8>], vertex: usize) -> Result<u8> {
    set.iter().try_fold(0u8, |acc, &u| match s[u] {
        Some(bit) => Ok(acc ^ bit),
        None => Err(MbqcError::UnmeasuredDependency { vertex, dependency: u }),
    })
}

/// Instructed angle for vertex `v` given the corrected results `s` so far:
/// computation `(−1)^{s^X}φ + θ + (s^Z ⊕ r ⊕ x)π`, trap `θ + (r ⊕ x)π`,
/// dummy uniform from `rng`.
pub fn compute_delta<R: Rng + ?Sized>(v: usize, pattern: &BrickworkPattern, s: &[Option<u8>], rng: &mut R) -> Result<AngleOctant> {
    match pattern.roles[v] {
        Role::Dummy => Ok(AngleOctant::random(rng)),
        Role::Trap => Ok(pattern.theta[v].plus_pi_if(pattern.r[v] ^ pattern.x[v])),
        Role::Computation => {
            let sx = parity(&pattern.sx(v), s, v)?;
            let sz = parity(&pattern.sz(v), s, v)?;
            let phi = if sx == 1 { -pattern.phi[v] } else { pattern.phi[v] };
            Ok((phi + pattern.theta[v]).plus_pi_if(sz ^ pattern.r[v] ^ pattern.x[v]))
        }
    }
}

/// Bob's behaviour during the measurement stage.
pub trait Prover {
    /// Angle in radians Bob actually measures at when instructed `delta`.
    fn measurement_angle(&mut self, _round: usize, delta: AngleOctant) -> f64 {
        delta.radians()
    }

    /// Bit Bob reports for an actual outcome.
    fn report(&mut self, _round: usize, outcome: u8) -> u8 {
        outcome
    }
}

/// Follows instructions exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct HonestProver;

impl Prover for HonestProver {}

/// Inverts every reported bit.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlipAllProver;

impl Prover for FlipAllProver {
    fn report(&mut self, _round: usize, outcome: u8) -> u8 {
        outcome ^ 1
    }
}

/// Inverts the reported bit in one round only.
#[derive(Clone, Copy, Debug)]
pub struct FlipOneProver {
    pub round: usize,
}

impl Prover for FlipOneProver {
    fn report(&mut self, round: usize, outcome: u8) -> u8 {
        outcome ^ (round == self.round) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub vertex: usize,
    pub delta: AngleOctant,
    pub reported: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Execution {
    pub rounds: Vec<RoundRecord>,
    /// Corrected results `s_v = b_v ⊕ r_v`; `None` for dummies.
    pub s: Vec<Option<u8>>,
    /// Corrected results on [`BrickworkPattern::outputs`].
    pub output: Vec<u8>,
    /// Probability of the realized branch of actual outcomes.
    pub probability: f64,
    pub max_live: usize,
}

impl Execution {
    pub fn reported(&self, vertex: usize) -> Option<u8> {
        self.rounds.iter().find(|r| r.vertex == vertex).map(|r| r.reported)
    }
}

/// Live register of the streaming simulation.
struct Frontier {
    amps: Vec<Complex64>,
    slots: Vec<usize>,
    max_live: usize,
}

impl Frontier {
    fn new() -> Self {
        Self { amps: vec![Complex64::new(1.0, 0.0)], slots: Vec::new(), max_live: 0 }
    }

    fn add(&mut self, vertex: usize, state: &StateVector) -> Result<()> {
        if self.slots.len() + 1 > MAX_LIVE_QUBITS {
            return Err(MbqcError::FrontierOverflow { live: self.slots.len() + 1, limit: MAX_LIVE_QUBITS });
        }
        let q = state.amplitudes();
        self.amps = self.amps.iter().flat_map(|a| q.iter().map(move |b| a * b)).collect();
        self.slots.push(vertex);
        self.max_live = self.max_live.max(self.slots.len());
        Ok(())
    }

    fn mask(&self, vertex: usize) -> usize {
        let p = self.slots.iter().position(|&s| s == vertex).expect("vertex is live");
        1usize << (self.slots.len() - 1 - p)
    }

    fn cz(&mut self, a: usize, b: usize) {
        let m = self.mask(a) | self.mask(b);
        self.amps.iter_mut().enumerate().filter(|(i, _)| i & m == m).for_each(|(_, z)| *z = -*z);
    }

    /// Unnormalized `⟨±_α|_v ψ` for both outcomes, without the vertex.
    fn branches(&self, vertex: usize, alpha: f64) -> [Vec<Complex64>; 2] {
        let p = self.slots.iter().position(|&s| s == vertex).expect("vertex is live");
        let n = self.slots.len();
        let shift = n - 1 - p;
        let low_mask = (1usize << shift) - 1;
        let phase = Complex64::from_polar(FRAC_1_SQRT_2, -alpha);
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let half = self.amps.len() / 2;
        let mut out = [Vec::with_capacity(half), Vec::with_capacity(half)];
        for i in 0..half {
            let full0 = ((i >> shift) << (shift + 1)) | (i & low_mask);
            let (a0, a1) = (self.amps[full0], self.amps[full0 | (1 << shift)]);
            out[0].push(a0 * h + a1 * phase);
            out[1].push(a0 * h - a1 * phase);
        }
        out
    }

    fn remove(&mut self, vertex: usize, reduced: Vec<Complex64>, probability: f64) {
        let scale = 1.0 / probability.sqrt();
        self.amps = reduced.into_iter().map(|z| z * scale).collect();
        self.slots.retain(|&s| s != vertex);
    }
}

enum Outcomes<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Forced(&'a [u8]),
}

fn run<P: Prover + ?Sized, A: Rng + ?Sized, N: Rng + ?Sized>(
    pattern: &BrickworkPattern,
    inputs: &[StateVector],
    prover: &mut P,
    alice_rng: &mut A,
    mut outcomes: Outcomes<'_, N>,
) -> Result<Execution> {
    let g = &pattern.graph;
    let nv = g.num_vertices();
    if inputs.len() != nv {
        return Err(MbqcError::InputCount { expected: nv, actual: inputs.len() });
    }
    if let Some(v) = inputs.iter().position(|s| s.num_qubits() != 1) {
        return Err(MbqcError::InputWidth(v));
    }
    if let Outcomes::Forced(f) = &outcomes {
        if f.len() != nv {
            return Err(MbqcError::ForcedLength { expected: nv, actual: f.len() });
        }
    }
    if 2 * g.rows() > MAX_LIVE_QUBITS {
        return Err(MbqcError::FrontierOverflow { live: 2 * g.rows(), limit: MAX_LIVE_QUBITS });
    }
    let (rows, cols) = (g.rows(), g.cols());
    let mut frontier = Frontier::new();
    let mut s: Vec<Option<u8>> = vec![None; nv];
    let mut records = Vec::with_capacity(nv);
    let mut probability = 1.0;
    let add_column = |frontier: &mut Frontier, c: usize| -> Result<()> {
        for r in 0..rows {
            let v = g.index(r, c);
            frontier.add(v, &inputs[v])?;
        }
        for r in 0..rows {
            let v = g.index(r, c);
            for u in g.vertical_neighbours(v).filter(|&u| u > v) {
                frontier.cz(v, u);
            }
            if c > 0 {
                frontier.cz(v - 1, v);
            }
        }
        Ok(())
    };
    add_column(&mut frontier, 0)?;
    let mut round = 0;
    for c in 0..cols {
        if c + 1 < cols {
            add_column(&mut frontier, c + 1)?;
        }
        for r in 0..rows {
            let v = g.index(r, c);
            let delta = compute_delta(v, pattern, &s, alice_rng)?;
            let alpha = prover.measurement_angle(round, delta);
            let [b0, b1] = frontier.branches(v, alpha);
            let p0 = b0.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let p1 = b1.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let outcome = match &mut outcomes {
                Outcomes::Sample(rng) => (rng.random::<f64>() * (p0 + p1) >= p0) as u8,
                Outcomes::Forced(f) => f[round],
            };
            let (branch, p) = if outcome == 0 { (b0, p0) } else { (b1, p1) };
            probability *= if p0 + p1 > 0.0 { p / (p0 + p1) } else { 0.0 };
            if p <= 0.0 {
                frontier.slots.retain(|&x| x != v);
                frontier.amps = branch;
                probability = 0.0;
            } else {
                frontier.remove(v, branch, p);
            }
            let reported = prover.report(round, outcome);
            if reported > 1 {
                return Err(MbqcError::MalformedBit { round, value: reported });
            }
            if pattern.roles[v] != Role::Dummy {
                s[v] = Some(reported ^ pattern.r[v]);
            }
            records.push(RoundRecord { round, vertex: v, delta, reported });
            round += 1;
        }
    }
    let output = pattern.outputs().iter().map(|&v| s[v].expect("outputs are measured")).collect();
    Ok(Execution { rounds: records, s, output, probability, max_live: frontier.max_live })
}

/// Runs the measurement stage, sampling Bob's actual outcomes from the Born
/// rule with `nature_rng`. `inputs` are Bob's prepared qubits, row-major.
pub fn streaming_execute<P: Prover + ?Sized, A: Rng + ?Sized, N: Rng + ?Sized>(
    pattern: &BrickworkPattern,
    inputs: &[StateVector],
    prover: &mut P,
    alice_rng: &mut A,
    nature_rng: &mut N,
) -> Result<Execution> {
    run(pattern, inputs, prover, alice_rng, Outcomes::Sample(nature_rng))
}

/// Runs the measurement stage along a fixed branch of actual outcomes
/// (indexed by round) and returns it with its exact probability.
pub fn forced_execute<P: Prover + ?Sized, A: Rng + ?Sized>(
    pattern: &BrickworkPattern,
    inputs: &[StateVector],
    prover: &mut P,
    alice_rng: &mut A,
    outcomes: &[u8],
) -> Result<Execution> {
    run::<P, A, rand_chacha::ChaCha20Rng>(pattern, inputs, prover, alice_rng, Outcomes::Forced(outcomes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum TrapVerdict {
    Accept,
    Reject { trap: usize },
}

impl TrapVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, TrapVerdict::Accept)
    }
}

/// Accepts iff every trap reported `b_t = r_t`.
pub fn verify_traps(execution: &Execution, pattern: &BrickworkPattern) -> Result<TrapVerdict> {
    let traps = pattern.traps();
    if traps.is_empty() {
        return Err(MbqcError::NoTraps);
    }
    for t in traps {
        if execution.reported(t) != Some(pattern.r[t]) {
            return Ok(TrapVerdict::Reject { trap: t });
        }
    }
    Ok(TrapVerdict::Accept)
}

/// `1 − pΔ + 2p√m·ε̃`, clamped to `[0, 1]`.
pub fn corollary_bound(confidence: f64, delta_frac: f64, m: u64, eps_tilde: f64) -> f64 {
    let p = confidence;
    (1.0 - p * delta_frac + 2.0 * p * (m as f64).sqrt() * eps_tilde).clamp(0.0, 1.0)
}

pub fn p_error_bound(params: &SecurityParams, report: &BoundReport) -> f64 {
    corollary_bound(report.confidence, params.delta_frac, params.m, report.eps_tilde)
}

/// `(1 − ε̃²/2)^{2m}`, with the base floored at 0.
pub fn fidelity_floor(eps_tilde: f64, m: u64) -> f64 {
    (1.0 - eps_tilde * eps_tilde / 2.0).max(0.0).powf(2.0 * m as f64)
}

/// `2√m·ε̃`.
pub fn input_trace_bound(eps_tilde: f64, m: u64) -> f64 {
    2.0 * (m as f64).sqrt() * eps_tilde
}

pub const PATTERN_SCHEMA: u32 = 1;

/// Tape position in a pattern file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapeSpec {
    pub start_row: usize,
    pub len: usize,
    pub colour: u8,
}

fn default_true() -> bool {
    true
}

/// On-disk pattern description. Exactly one of `tape` (fixed) or
/// `delta_frac` (tape drawn from `seed`) may be given; neither means no traps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternFile {
    pub schema: u32,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_true")]
    pub cylindrical: bool,
    /// Octants, row-major, one per vertex.
    pub phi: Vec<u8>,
    #[serde(default)]
    pub tape: Option<TapeSpec>,
    #[serde(default)]
    pub delta_frac: Option<f64>,
    pub seed: u64,
}

impl PatternFile {
    pub fn parse(json: &str) -> Result<Self> {
        let file: PatternFile = serde_json::from_str(json).map_err(|e| MbqcError::Pattern(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != PATTERN_SCHEMA {
            return Err(MbqcError::Pattern(format!("unsupported schema {}", self.schema)));
        }
        let graph = self.graph()?;
        if self.phi.len() != graph.num_vertices() {
            return Err(MbqcError::InputCount { expected: graph.num_vertices(), actual: self.phi.len() });
        }
        if let Some(&k) = self.phi.iter().find(|&&k| k >= 8) {
            return Err(MbqcError::InvalidOctant(k));
        }
        match (self.tape, self.delta_frac) {
            (Some(_), Some(_)) => Err(MbqcError::Pattern("give either tape or delta_frac, not both".into())),
            (Some(t), None) => tape_at(&graph, t.start_row, t.len, t.colour).map(|_| ()),
            (None, Some(d)) => {
                if !(d > 0.0 && d < 0.5) {
                    return Err(MbqcError::InvalidDelta(d));
                }
                let len = tape_len(graph.rows(), d);
                if !graph.cylindrical() {
                    return Err(MbqcError::NotCylindrical);
                }
                if len + 2 > graph.rows() {
                    return Err(MbqcError::NoComputationRows { tape: len, rows: graph.rows() });
                }
                Ok(())
            }
            (None, None) => Ok(()),
        }
    }

    pub fn graph(&self) -> Result<BrickworkGraph> {
        BrickworkGraph::new(self.rows, self.cols, self.cylindrical)
    }

    pub fn phi_octants(&self) -> Result<Vec<AngleOctant>> {
        self.phi.iter().map(|&k| AngleOctant::try_from(k)).collect()
    }

    /// The fixed tape, or one drawn with `rng` when only `delta_frac` is set.
    pub fn tape<R: Rng + ?Sized>(&self, graph: &BrickworkGraph, rng: &mut R) -> Result<Option<TapeAssignment>> {
        match (self.tape, self.delta_frac) {
            (Some(t), _) => tape_at(graph, t.start_row, t.len, t.colour).map(Some),
            (None, Some(d)) => choose_tape(graph, d, rng).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn octant_arithmetic() {
        assert_eq!(AngleOctant::new(9), AngleOctant::new(1));
        assert_eq!(AngleOctant::new(-1).k(), 7);
        assert_eq!(-AngleOctant::new(1), AngleOctant::new(7));
        assert_eq!(AngleOctant::new(3) - AngleOctant::new(5), AngleOctant::new(6));
        assert!(AngleOctant::try_from(8).is_err());
    }

    #[test]
    fn brickwork_4x9() {
        let g = build_cylindrical_brickwork(4, 9).unwrap();
        assert_eq!(g.num_vertices(), 36);
        assert!((0..36).all(|v| g.neighbours(v).len() <= 4));
        for &(a, b) in g.edges() {
            assert_ne!(g.colour(a), g.colour(b));
        }
        let flat = BrickworkGraph::new(4, 9, false).unwrap();
        assert!(flat.edges().iter().all(|e| g.edges().contains(e)));
        assert!(g.edges().len() > flat.edges().len());
    }

    #[test]
    fn brickwork_rejects_bad_dims() {
        assert_eq!(build_cylindrical_brickwork(5, 9), Err(MbqcError::BadRows(5)));
        assert_eq!(build_cylindrical_brickwork(2, 9), Err(MbqcError::BadRows(2)));
        assert_eq!(build_cylindrical_brickwork(4, 10), Err(MbqcError::IncompatibleCols(10)));
    }

    #[test]
    fn brick_columns() {
        let g = build_cylindrical_brickwork(4, 17).unwrap();
        // 1-indexed columns 3, 5, 11, 13 join rows (1,2) and (3,4);
        // columns 7, 9, 15, 17 join rows (2,3) and (4,1).
        for c in 0..17 {
            assert_eq!(g.has_edge(g.index(0, c), g.index(1, c)), matches!(c, 2 | 4 | 10 | 12), "col {c}");
            assert_eq!(g.has_edge(g.index(1, c), g.index(2, c)), matches!(c, 6 | 8 | 14 | 16), "col {c}");
            assert_eq!(g.has_edge(g.index(3, c), g.index(0, c)), matches!(c, 6 | 8 | 14 | 16), "col {c}");
        }
    }

    #[test]
    fn tape_sizes() {
        let g = build_cylindrical_brickwork(8, 9).unwrap();
        assert_eq!(choose_tape(&g, 0.25, &mut rng(1)).unwrap().rows.len(), 4);
        let small = choose_tape(&g, 0.05, &mut rng(2)).unwrap();
        assert_eq!(small.rows.len(), 1);
        assert!(small.traps.len() == 4 || small.traps.len() == 5);
        assert!(matches!(choose_tape(&g, 0.45, &mut rng(3)), Err(MbqcError::NoComputationRows { .. })));
        assert!(matches!(choose_tape(&g, 0.5, &mut rng(3)), Err(MbqcError::InvalidDelta(_))));
        assert_eq!(tape_len(4, 0.3125), 3);
    }

    #[test]
    fn traps_only_touch_dummies() {
        let g = build_cylindrical_brickwork(8, 17).unwrap();
        for seed in 0..50 {
            let tape = choose_tape(&g, 0.2, &mut rng(seed)).unwrap();
            let roles = roles_for(&g, Some(&tape));
            for &t in &tape.traps {
                assert!(g.neighbours(t).iter().all(|&u| roles[u] == Role::Dummy));
            }
            assert!(tape.traps.iter().all(|t| !tape.dummies.contains(t)));
        }
    }

    #[test]
    fn tape_start_and_colour_are_uniform() {
        let g = build_cylindrical_brickwork(4, 9).unwrap();
        let mut starts = [0usize; 4];
        let mut colours = [0usize; 2];
        let mut r = rng(5);
        for _ in 0..4000 {
            let t = choose_tape(&g, 0.125, &mut r).unwrap();
            starts[t.start_row] += 1;
            colours[t.colour as usize] += 1;
        }
        assert!(starts.iter().all(|&c| (850..1150).contains(&c)), "{starts:?}");
        assert!(colours.iter().all(|&c| (1850..2150).contains(&c)), "{colours:?}");
    }

    fn pattern(rows: usize, cols: usize, tape: Option<TapeAssignment>, phi: Vec<AngleOctant>, seed: u64) -> BrickworkPattern {
        let g = BrickworkGraph::new(rows, cols, true).unwrap();
        let mut r = rng(seed);
        let labels = BrickworkPattern::random_labels(&g, tape.as_ref(), &mut r);
        BrickworkPattern::assemble(g, tape, phi, &labels, &mut r).unwrap()
    }

    #[test]
    fn delta_examples() {
        let g = BrickworkGraph::new(4, 9, true).unwrap();
        let nv = g.num_vertices();
        let mut p = pattern(4, 9, None, vec![AngleOctant::new(1); nv], 0);
        let s = vec![None; nv];
        let v = g.index(0, 0);
        p.theta[v] = AngleOctant::new(2);
        p.r[v] = 0;
        p.x[v] = 0;
        assert_eq!(compute_delta(v, &p, &s, &mut rng(0)).unwrap(), AngleOctant::new(3));

        let w = g.index(0, 1);
        let mut s = vec![None; nv];
        s[v] = Some(1);
        p.theta[w] = AngleOctant::ZERO;
        p.r[w] = 0;
        p.x[w] = 0;
        assert_eq!(compute_delta(w, &p, &s, &mut rng(0)).unwrap(), AngleOctant::new(7));

        let late = g.index(0, 2);
        assert!(matches!(compute_delta(late, &p, &vec![None; nv], &mut rng(0)), Err(MbqcError::UnmeasuredDependency { .. })));

        let tape = tape_at(&g, 0, 1, 0).unwrap();
        let mut tp = pattern(4, 9, Some(tape.clone()), vec![AngleOctant::ZERO; nv], 1);
        let t = tape.traps[0];
        tp.theta[t] = AngleOctant::new(1);
        tp.r[t] = 1;
        tp.x[t] = 0;
        assert_eq!(compute_delta(t, &tp, &vec![None; nv], &mut rng(0)).unwrap(), AngleOctant::new(5));
    }

    #[test]
    fn delta_hides_phi() {
        let g = BrickworkGraph::new(4, 9, true).unwrap();
        let nv = g.num_vertices();
        let v = g.index(1, 3);
        for phi in AngleOctant::all() {
            let mut p = pattern(4, 9, None, vec![phi; nv], 7);
            let s: Vec<Option<u8>> = (0..nv).map(|i| Some((i % 2) as u8)).collect();
            let mut counts = [0usize; 8];
            for theta in AngleOctant::all() {
                for r in 0..2 {
                    p.theta[v] = theta;
                    p.r[v] = r;
                    counts[compute_delta(v, &p, &s, &mut rng(0)).unwrap().k() as usize] += 1;
                }
            }
            assert_eq!(counts, [2; 8]);
        }
    }

    #[test]
    fn dependency_sets() {
        let g = build_cylindrical_brickwork(4, 9).unwrap();
        let p = pattern(4, 9, None, vec![AngleOctant::ZERO; 36], 0);
        let v = g.index(1, 4);
        assert_eq!(p.sx(v), vec![g.index(1, 3)]);
        let mut sz = p.sz(v);
        sz.sort();
        // left(left(v)) plus left of the brick partner (0, 4)
        assert_eq!(sz, vec![g.index(0, 3), g.index(1, 2)]);
        assert!(p.sx(g.index(2, 0)).is_empty());
    }

    #[test]
    fn identity_pattern_is_accepted_with_zero_output() {
        for seed in 0..20 {
            let g = build_cylindrical_brickwork(4, 9).unwrap();
            let tape = choose_tape(&g, 0.125, &mut rng(seed)).unwrap();
            let p = pattern(4, 9, Some(tape), vec![AngleOctant::ZERO; 36], seed);
            let exec = streaming_execute(&p, &p.ideal_inputs(), &mut HonestProver, &mut rng(seed + 100), &mut rng(seed + 200)).unwrap();
            assert_eq!(verify_traps(&exec, &p).unwrap(), TrapVerdict::Accept);
            assert_eq!(exec.output.len(), 1);
            assert!(exec.output.iter().all(|&b| b == 0), "seed {seed}: {:?}", exec.output);
            assert!(exec.max_live <= 8);
        }
    }

    #[test]
    fn flip_all_is_rejected() {
        let g = build_cylindrical_brickwork(4, 9).unwrap();
        let tape = choose_tape(&g, 0.125, &mut rng(3)).unwrap();
        let p = pattern(4, 9, Some(tape), vec![AngleOctant::ZERO; 36], 3);
        let exec = streaming_execute(&p, &p.ideal_inputs(), &mut FlipAllProver, &mut rng(4), &mut rng(5)).unwrap();
        assert!(matches!(verify_traps(&exec, &p).unwrap(), TrapVerdict::Reject { .. }));
    }

    #[test]
    fn verify_needs_traps() {
        let p = pattern(4, 9, None, vec![AngleOctant::ZERO; 36], 0);
        let exec = streaming_execute(&p, &p.ideal_inputs(), &mut HonestProver, &mut rng(1), &mut rng(2)).unwrap();
        assert_eq!(verify_traps(&exec, &p), Err(MbqcError::NoTraps));
    }

    #[test]
    fn malformed_bits_are_rejected() {
        struct Bad;
        impl Prover for Bad {
            fn report(&mut self, _round: usize, _outcome: u8) -> u8 {
                2
            }
        }
        let p = pattern(4, 9, None, vec![AngleOctant::ZERO; 36], 0);
        assert!(matches!(
            streaming_execute(&p, &p.ideal_inputs(), &mut Bad, &mut rng(1), &mut rng(2)),
            Err(MbqcError::MalformedBit { round: 0, value: 2 })
        ));
    }

    #[test]
    fn frontier_limit() {
        let g = BrickworkGraph::new(14, 9, true).unwrap();
        let labels = BrickworkPattern::random_labels(&g, None, &mut rng(0));
        let p = BrickworkPattern::assemble(g, None, vec![AngleOctant::ZERO; 126], &labels, &mut rng(0)).unwrap();
        assert!(matches!(
            streaming_execute(&p, &p.ideal_inputs(), &mut HonestProver, &mut rng(1), &mut rng(2)),
            Err(MbqcError::FrontierOverflow { .. })
        ));
    }

    #[test]
    fn forced_branches_sum_to_one() {
        // 2×2 open grid: enumerate all 16 branches.
        let g = BrickworkGraph::new(2, 2, false).unwrap();
        let labels = BrickworkPattern::random_labels(&g, None, &mut rng(9));
        let phi = vec![AngleOctant::new(1), AngleOctant::new(3), AngleOctant::new(6), AngleOctant::new(2)];
        let p = BrickworkPattern::assemble(g, None, phi, &labels, &mut rng(9)).unwrap();
        let total: f64 = (0..16u8)
            .map(|b| {
                let outcomes: Vec<u8> = (0..4).map(|i| (b >> i) & 1).collect();
                forced_execute(&p, &p.ideal_inputs(), &mut HonestProver, &mut rng(1), &outcomes).unwrap().probability
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_examples() {
        assert!((corollary_bound(1.0, 0.25, 16, 0.0) - 0.75).abs() < 1e-15);
        assert!((corollary_bound(0.99, 0.25, 16, 0.01) - 0.8317).abs() < 1e-4);
        assert_eq!(corollary_bound(0.0, 0.25, 16, 0.3), 1.0);
        assert_eq!(fidelity_floor(0.0, 5), 1.0);
        assert_eq!(input_trace_bound(0.0, 5), 0.0);
        assert!((fidelity_floor(0.1, 4) - 0.995f64.powi(8)).abs() < 1e-15);
        assert!((fidelity_floor(0.1, 4) - 0.960693).abs() < 1e-6);
        assert!((input_trace_bound(0.1, 4) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fidelity_chain() {
        for i in 0..=100 {
            let e = i as f64 / 100.0;
            for m in 1..=64 {
                assert!(fidelity_floor(e, m) >= 1.0 - m as f64 * e * e - 1e-12, "ε̃ = {e}, m = {m}");
            }
        }
    }

    #[test]
    fn pattern_file_round_trip() {
        let json = r#"{"schema":1,"rows":4,"cols":9,"phi":[0,0,0,0,0,0,0,0,0,1,1,1,1,1,1,1,1,1,2,2,2,2,2,2,2,2,2,3,3,3,3,3,3,3,3,3],"tape":{"start_row":0,"len":1,"colour":1},"seed":5}"#;
        let f = PatternFile::parse(json).unwrap();
        assert!(f.cylindrical);
        let g = f.graph().unwrap();
        let tape = f.tape(&g, &mut rng(0)).unwrap().unwrap();
        assert_eq!(tape.rows, vec![0]);
        let again = PatternFile::parse(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn pattern_file_errors() {
        assert!(PatternFile::parse("{}").is_err());
        assert!(PatternFile::parse(r#"{"schema":2,"rows":4,"cols":1,"phi":[0,0,0,0],"seed":0}"#).is_err());
        assert!(PatternFile::parse(r#"{"schema":1,"rows":4,"cols":1,"phi":[0,0,0,9],"seed":0}"#).is_err());
        assert!(PatternFile::parse(r#"{"schema":1,"rows":4,"cols":1,"phi":[0,0,0],"seed":0}"#).is_err());
        assert!(PatternFile::parse(r#"{"schema":1,"rows":4,"cols":1,"phi":[0,0,0,0],"seed":0,"delta_frac":0.4}"#).is_err());
        assert!(PatternFile::parse(r#"{"schema":1,"rows":4,"cols":1,"phi":[0,0,0,0],"seed":0,"extra":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn pattern_parser_never_panics(s in ".{0,200}") {
            let _ = PatternFile::parse(&s);
        }

        #[test]
        fn tapes_are_valid(rows in (2usize..8).prop_map(|k| 2 * k), cols in 1usize..20, delta in 0.01f64..0.49, seed in any::<u64>()) {
            let g = BrickworkGraph::new(rows, cols, true).unwrap();
            match choose_tape(&g, delta, &mut rng(seed)) {
                Ok(t) => {
                    let roles = roles_for(&g, Some(&t));
                    prop_assert_eq!(t.rows.len(), tape_len(rows, delta));
                    for &trap in &t.traps {
                        prop_assert!(g.neighbours(trap).iter().all(|&u| roles[u] == Role::Dummy));
                    }
                }
                Err(MbqcError::NoComputationRows { .. }) => prop_assert!(tape_len(rows, delta) + 2 > rows),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
