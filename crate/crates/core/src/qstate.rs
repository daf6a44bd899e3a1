//! Dense complex state-vector engine.
//!
//! Registers are ordered big-endian: the first qubit (label index 0) is the
//! most significant bit of the amplitude index. Every module in the crate
//! shares this convention.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for algebraic identities (Hermiticity, exact products).
pub const ALGEBRA_TOL: f64 = 1e-12;
/// Tolerance for normalized quantities (norms, traces, unitarity).
pub const NORM_TOL: f64 = 1e-10;

pub type Amplitude = Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected} qubits, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("qubit {index} out of range for a {num_qubits}-qubit register")]
    TargetOutOfRange { index: usize, num_qubits: usize },
    #[error("target qubits overlap")]
    OverlappingTargets,
    #[error("operator is not Hermitian")]
    NotHermitian,
    #[error("observable does not have a ±1 spectrum")]
    NotInvolutory,
    #[error("operator is not unitary")]
    NotUnitary,
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("non-finite amplitude")]
    NonFinite,
    #[error("amplitude count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("label count {labels} does not match {num_qubits} qubits")]
    LabelMismatch { labels: usize, num_qubits: usize },
    #[error("invalid density matrix: {0}")]
    InvalidDensity(&'static str),
    #[error("outcome has zero probability")]
    ZeroProbability,
}

pub type Result<T> = std::result::Result<T, StateError>;

/// Outcome of a ±1-valued measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i8 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    /// `+1 -> 0`, `-1 -> 1`.
    pub fn bit(self) -> u8 {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Outcome::Plus),
            1 => Some(Outcome::Minus),
            _ => None,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Outcome::Plus),
            -1 => Some(Outcome::Minus),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }
}

impl TryFrom<i8> for Outcome {
    type Error = String;

    fn try_from(value: i8) -> std::result::Result<Self, Self::Error> {
        Outcome::from_sign(value as i64).ok_or_else(|| format!("outcome must be +1 or -1, got {value}"))
    }
}

impl From<Outcome> for i8 {
    fn from(value: Outcome) -> Self {
        value.sign()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

fn check_finite(values: &[Complex64]) -> Result<()> {
    if values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(StateError::NonFinite)
    }
}

fn log2_exact(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(StateError::NotPowerOfTwo(len));
    }
    Ok(len.trailing_zeros() as usize)
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("q{i}")).collect()
}

/// A normalized pure state over an ordered, labelled qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    labels: Vec<String>,
}

impl StateVector {
    /// Wraps normalized amplitudes. Fails on non-finite entries, a length
    /// that is not a power of two, or a norm off by more than [`NORM_TOL`].
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = log2_exact(amplitudes.len())?;
        Self::with_labels(amplitudes, default_labels(n))
    }

    pub fn with_labels(amplitudes: Vec<Complex64>, labels: Vec<String>) -> Result<Self> {
        let n = log2_exact(amplitudes.len())?;
        if labels.len() != n {
            return Err(StateError::LabelMismatch { labels: labels.len(), num_qubits: n });
        }
        check_finite(&amplitudes)?;
        let norm_sqr = norm_sqr(&amplitudes);
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(StateError::NotNormalized(norm_sqr));
        }
        Ok(Self { amplitudes, labels })
    }

    /// Normalizes arbitrary (nonzero, finite) amplitudes.
    pub fn from_unnormalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = log2_exact(amplitudes.len())?;
        check_finite(&amplitudes)?;
        let norm = norm_sqr(&amplitudes).sqrt();
        if norm < 1e-300 {
            return Err(StateError::ZeroProbability);
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { amplitudes, labels: default_labels(n) })
    }

    /// Computational basis state `|index⟩` on `num_qubits` qubits.
    pub fn basis(num_qubits: usize, index: usize) -> Self {
        assert!(index < (1 << num_qubits), "basis index out of range");
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[index] = ONE;
        Self { amplitudes, labels: default_labels(num_qubits) }
    }

    pub fn zero(num_qubits: usize) -> Self {
        Self::basis(num_qubits, 0)
    }

    /// `(|0⟩ + e^{iθ}|1⟩)/√2`.
    pub fn equatorial(theta: f64) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            amplitudes: vec![Complex64::new(h, 0.0), Complex64::from_polar(h, theta)],
            labels: default_labels(1),
        }
    }

    pub fn relabel(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_qubits() {
            return Err(StateError::LabelMismatch { labels: labels.len(), num_qubits: self.num_qubits() });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn num_qubits(&self) -> usize {
        self.labels.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amplitudes).sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        same_dims(self.num_qubits(), other.num_qubits())?;
        Ok(inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    pub fn to_density(&self) -> DensityMatrix {
        let d = self.amplitudes.len();
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                entries[r * d + c] = self.amplitudes[r] * self.amplitudes[c].conj();
            }
        }
        DensityMatrix { dim_qubits: self.num_qubits(), entries }
    }
}

/// A `2^d × 2^d` complex matrix, stored row-major, with cached structure flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dim_qubits: usize,
    entries: Vec<Complex64>,
    hermitian: bool,
    unitary: bool,
}

impl Operator {
    pub fn new(dim_qubits: usize, entries: Vec<Complex64>) -> Result<Self> {
        let d = 1usize << dim_qubits;
        if entries.len() != d * d {
            return Err(StateError::DimensionMismatch {
                expected: dim_qubits,
                actual: log2_exact(entries.len()).map(|l| l / 2).unwrap_or(0),
            });
        }
        check_finite(&entries)?;
        Ok(Self::with_flags(dim_qubits, entries))
    }

    fn with_flags(dim_qubits: usize, entries: Vec<Complex64>) -> Self {
        let d = 1usize << dim_qubits;
        let hermitian = (0..d).all(|r| (0..d).all(|c| (entries[r * d + c] - entries[c * d + r].conj()).norm() <= ALGEBRA_TOL));
        let adjoint: Vec<Complex64> = (0..d * d).map(|i| entries[(i % d) * d + i / d].conj()).collect();
        let product = matmul_entries(d, &entries, &adjoint);
        let unitary = (0..d).all(|r| {
            (0..d).all(|c| {
                let target = if r == c { ONE } else { ZERO };
                (product[r * d + c] - target).norm() <= NORM_TOL
            })
        });
        Self { dim_qubits, entries, hermitian, unitary }
    }

    /// Builds a single-qubit operator from rows.
    pub fn single(rows: [[Complex64; 2]; 2]) -> Self {
        Self::with_flags(1, vec![rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    pub fn identity(dim_qubits: usize) -> Self {
        let d = 1usize << dim_qubits;
        let mut entries = vec![ZERO; d * d];
        (0..d).for_each(|i| entries[i * d + i] = ONE);
        Self { dim_qubits, entries, hermitian: true, unitary: true }
    }

    pub fn pauli_x() -> Self {
        Self::single([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        let i = Complex64::i();
        Self::single([[ZERO, -i], [i, ZERO]])
    }

    pub fn pauli_z() -> Self {
        Self::single([[ONE, ZERO], [ZERO, -ONE]])
    }

    pub fn hadamard() -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::single([[h, h], [h, -h]])
    }

    /// `diag(1, e^{iφ})`.
    pub fn phase(phi: f64) -> Self {
        Self::single([[ONE, ZERO], [ZERO, Complex64::from_polar(1.0, phi)]])
    }

    pub fn dim_qubits(&self) -> usize {
        self.dim_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.dim_qubits
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim() + col]
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    /// Hermitian and squares to the identity, i.e. spectrum ⊆ {−1, +1}.
    pub fn is_pm1_observable(&self) -> bool {
        self.hermitian && self.unitary
    }

    pub fn adjoint(&self) -> Operator {
        let d = self.dim();
        let mut entries = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                entries[c * d + r] = self.entries[r * d + c].conj();
            }
        }
        Operator { dim_qubits: self.dim_qubits, entries, hermitian: self.hermitian, unitary: self.unitary }
    }

    /// Entry-wise complex conjugate.
    pub fn conj(&self) -> Operator {
        let entries = self.entries.iter().map(|z| z.conj()).collect();
        Operator { dim_qubits: self.dim_qubits, entries, hermitian: self.hermitian, unitary: self.unitary }
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.dim_qubits, other.dim_qubits, "operator dimension mismatch");
        Operator::with_flags(self.dim_qubits, matmul_entries(self.dim(), &self.entries, &other.entries))
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: Complex64, other: &Operator, b: Complex64) -> Operator {
        assert_eq!(self.dim_qubits, other.dim_qubits, "operator dimension mismatch");
        let entries = self.entries.iter().zip(&other.entries).map(|(x, y)| a * x + b * y).collect();
        Operator::with_flags(self.dim_qubits, entries)
    }

    pub fn scale(&self, factor: Complex64) -> Operator {
        Operator::with_flags(self.dim_qubits, self.entries.iter().map(|z| z * factor).collect())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.entry(i, i)).sum()
    }

    /// Largest entry-wise deviation from `other`.
    pub fn max_deviation(&self, other: &Operator) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }
}

fn matmul_entries(d: usize, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; d * d];
    for r in 0..d {
        for k in 0..d {
            let x = a[r * d + k];
            if x == ZERO {
                continue;
            }
            for c in 0..d {
                out[r * d + c] += x * b[k * d + c];
            }
        }
    }
    out
}

/// A trace-one, Hermitian, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dim_qubits: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn new(dim_qubits: usize, entries: Vec<Complex64>) -> Result<Self> {
        let d = 1usize << dim_qubits;
        if entries.len() != d * d {
            return Err(StateError::InvalidDensity("entry count does not match dimension"));
        }
        check_finite(&entries)?;
        let rho = Self { dim_qubits, entries };
        rho.validate()?;
        Ok(rho)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let trace: Complex64 = (0..d).map(|i| self.entries[i * d + i]).sum();
        if (trace - ONE).norm() > NORM_TOL {
            return Err(StateError::InvalidDensity("trace is not 1"));
        }
        for r in 0..d {
            for c in 0..d {
                if (self.entries[r * d + c] - self.entries[c * d + r].conj()).norm() > ALGEBRA_TOL {
                    return Err(StateError::InvalidDensity("not Hermitian"));
                }
            }
        }
        if self.eigenvalues().iter().any(|&l| l < -NORM_TOL) {
            return Err(StateError::InvalidDensity("negative eigenvalue"));
        }
        Ok(())
    }

    pub fn maximally_mixed(dim_qubits: usize) -> Self {
        let d = 1usize << dim_qubits;
        let mut entries = vec![ZERO; d * d];
        (0..d).for_each(|i| entries[i * d + i] = Complex64::new(1.0 / d as f64, 0.0));
        Self { dim_qubits, entries }
    }

    /// Convex combination `Σ wᵢ ρᵢ`. Weights must sum to one.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self> {
        let first = parts.first().ok_or(StateError::InvalidDensity("empty mixture"))?;
        let dim_qubits = first.1.dim_qubits;
        let mut entries = vec![ZERO; first.1.entries.len()];
        for (w, rho) in parts {
            same_dims(dim_qubits, rho.dim_qubits)?;
            entries.iter_mut().zip(&rho.entries).for_each(|(e, x)| *e += x * *w);
        }
        Self::new(dim_qubits, entries)
    }

    pub fn dim_qubits(&self) -> usize {
        self.dim_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.dim_qubits
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim() + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entry(i, i).re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.entries).symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn max_deviation(&self, other: &DensityMatrix) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }
}

/// Multilinear tensor product, big-endian (`self` is the more significant factor).
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Self;
}

impl Tensor for StateVector {
    fn tensor(&self, other: &Self) -> Self {
        let amplitudes = kron_vec(&self.amplitudes, &other.amplitudes);
        let labels = self.labels.iter().chain(&other.labels).cloned().collect();
        StateVector { amplitudes, labels }
    }
}

impl Tensor for Operator {
    fn tensor(&self, other: &Self) -> Self {
        let (da, db) = (self.dim(), other.dim());
        let d = da * db;
        let mut entries = vec![ZERO; d * d];
        for ra in 0..da {
            for ca in 0..da {
                let a = self.entries[ra * da + ca];
                for rb in 0..db {
                    for cb in 0..db {
                        entries[(ra * db + rb) * d + ca * db + cb] = a * other.entries[rb * db + cb];
                    }
                }
            }
        }
        Operator {
            dim_qubits: self.dim_qubits + other.dim_qubits,
            entries,
            hermitian: self.hermitian && other.hermitian,
            unitary: self.unitary && other.unitary,
        }
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, other: &Self) -> Self {
        let (da, db) = (self.dim(), other.dim());
        let d = da * db;
        let mut entries = vec![ZERO; d * d];
        for ra in 0..da {
            for ca in 0..da {
                let a = self.entries[ra * da + ca];
                for rb in 0..db {
                    for cb in 0..db {
                        entries[(ra * db + rb) * d + ca * db + cb] = a * other.entries[rb * db + cb];
                    }
                }
            }
        }
        DensityMatrix { dim_qubits: self.dim_qubits + other.dim_qubits, entries }
    }
}

/// Tensor product of a sequence; `None` when empty.
pub fn tensor<'a, T: Tensor + Clone + 'a>(parts: impl IntoIterator<Item = &'a T>) -> Option<T> {
    let mut iter = parts.into_iter();
    let first = iter.next()?.clone();
    Some(iter.fold(first, |acc, p| acc.tensor(p)))
}

/// `(|00⟩ + |11⟩)/√2`.
pub fn bell_pair() -> StateVector {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    StateVector { amplitudes: vec![h, ZERO, ZERO, h], labels: vec!["A".into(), "B".into()] }
}

/// Result of [`projective_measure`].
#[derive(Clone, Debug)]
pub struct Measurement {
    pub outcome: Outcome,
    pub post_state: StateVector,
    pub probability: f64,
}

fn check_targets(num_qubits: usize, targets: &[usize]) -> Result<()> {
    for (i, &t) in targets.iter().enumerate() {
        if t >= num_qubits {
            return Err(StateError::TargetOutOfRange { index: t, num_qubits });
        }
        if targets[..i].contains(&t) {
            return Err(StateError::OverlappingTargets);
        }
    }
    Ok(())
}

fn check_observable(observable: &Operator, targets: &[usize]) -> Result<()> {
    if observable.dim_qubits != targets.len() {
        return Err(StateError::DimensionMismatch { expected: targets.len(), actual: observable.dim_qubits });
    }
    if !observable.hermitian {
        return Err(StateError::NotHermitian);
    }
    if !observable.unitary {
        return Err(StateError::NotInvolutory);
    }
    Ok(())
}

/// Unnormalized `½(I ± O)|ψ⟩` on the targeted qubits.
fn project_raw(state: &StateVector, observable: &Operator, targets: &[usize], outcome: Outcome) -> Vec<Complex64> {
    let mut flipped = state.amplitudes.clone();
    raw::apply_in_place(observable, &mut flipped, state.num_qubits(), targets);
    let s = outcome.sign() as f64;
    state.amplitudes.iter().zip(&flipped).map(|(a, b)| (a + b * s) * 0.5).collect()
}

/// Measures a ±1 observable on `targets`, sampling the outcome from the Born rule.
pub fn projective_measure<R: Rng + ?Sized>(
    state: &StateVector,
    observable: &Operator,
    targets: &[usize],
    rng: &mut R,
) -> Result<Measurement> {
    check_targets(state.num_qubits(), targets)?;
    check_observable(observable, targets)?;
    let plus = project_raw(state, observable, targets, Outcome::Plus);
    let p_plus = norm_sqr(&plus).clamp(0.0, 1.0);
    let u: f64 = rng.random();
    let (outcome, raw, probability) = if u < p_plus {
        (Outcome::Plus, plus, p_plus)
    } else {
        (Outcome::Minus, project_raw(state, observable, targets, Outcome::Minus), 1.0 - p_plus)
    };
    let post_state = StateVector::from_unnormalized(raw)?.relabel(state.labels.clone())?;
    Ok(Measurement { outcome, post_state, probability })
}

/// Projects onto a chosen outcome, returning the renormalized state and its
/// Born probability. Fails with [`StateError::ZeroProbability`] when the
/// branch is empty.
pub fn project(
    state: &StateVector,
    observable: &Operator,
    targets: &[usize],
    outcome: Outcome,
) -> Result<(StateVector, f64)> {
    check_targets(state.num_qubits(), targets)?;
    check_observable(observable, targets)?;
    let raw = project_raw(state, observable, targets, outcome);
    let p = norm_sqr(&raw);
    if p < 1e-24 {
        return Err(StateError::ZeroProbability);
    }
    Ok((StateVector::from_unnormalized(raw)?.relabel(state.labels.clone())?, p))
}

/// `⟨ψ|O|ψ⟩` for a Hermitian `O` on the whole register.
pub fn expectation(state: &StateVector, observable: &Operator) -> Result<f64> {
    let targets: Vec<usize> = (0..state.num_qubits()).collect();
    expectation_on(state, observable, &targets)
}

/// `⟨ψ|O|ψ⟩` with `O` acting on `targets`.
pub fn expectation_on(state: &StateVector, observable: &Operator, targets: &[usize]) -> Result<f64> {
    check_targets(state.num_qubits(), targets)?;
    if observable.dim_qubits != targets.len() {
        return Err(StateError::DimensionMismatch { expected: targets.len(), actual: observable.dim_qubits });
    }
    if !observable.hermitian {
        return Err(StateError::NotHermitian);
    }
    let mut image = state.amplitudes.clone();
    raw::apply_in_place(observable, &mut image, state.num_qubits(), targets);
    let value = inner(&state.amplitudes, &image);
    debug_assert!(value.im.abs() <= NORM_TOL, "imaginary residue {}", value.im);
    Ok(value.re)
}

/// `‖|a⟩ − |b⟩‖₂`.
pub fn vector_distance(a: &StateVector, b: &StateVector) -> Result<f64> {
    same_dims(a.num_qubits(), b.num_qubits())?;
    Ok(a.amplitudes.iter().zip(&b.amplitudes).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt())
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity(pure: &StateVector, rho: &DensityMatrix) -> Result<f64> {
    same_dims(pure.num_qubits(), rho.dim_qubits)?;
    let d = rho.dim();
    let psi = &pure.amplitudes;
    let mut acc = ZERO;
    for r in 0..d {
        let mut row = ZERO;
        for c in 0..d {
            row += rho.entries[r * d + c] * psi[c];
        }
        acc += psi[r].conj() * row;
    }
    Ok(acc.re.clamp(0.0, 1.0))
}

/// Unnormalized trace norm `‖ρ − σ‖_tr = Σ|λᵢ|`, in `[0, 2]`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    same_dims(rho.dim_qubits, sigma.dim_qubits)?;
    let d = rho.dim();
    let diff: Vec<Complex64> = rho.entries.iter().zip(&sigma.entries).map(|(a, b)| a - b).collect();
    let m = DMatrix::from_row_slice(d, d, &diff);
    Ok(m.symmetric_eigenvalues().iter().map(|l| l.abs()).sum())
}

/// Traces out every qubit not listed in `keep`. Kept qubits retain their
/// relative order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let n = rho.dim_qubits;
    check_targets(n, keep)?;
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    let traced: Vec<usize> = (0..n).filter(|q| !kept.contains(q)).collect();
    let bit = |q: usize| 1usize << (n - 1 - q);
    let spread = |index: usize, qubits: &[usize]| -> usize {
        let k = qubits.len();
        qubits.iter().enumerate().filter(|(i, _)| (index >> (k - 1 - i)) & 1 == 1).map(|(_, &q)| bit(q)).sum()
    };
    let dk = 1usize << kept.len();
    let dt = 1usize << traced.len();
    let d = rho.dim();
    let mut entries = vec![ZERO; dk * dk];
    for r in 0..dk {
        let rk = spread(r, &kept);
        for c in 0..dk {
            let ck = spread(c, &kept);
            let mut acc = ZERO;
            for t in 0..dt {
                let tt = spread(t, &traced);
                acc += rho.entries[(rk | tt) * d + (ck | tt)];
            }
            entries[r * dk + c] = acc;
        }
    }
    Ok(DensityMatrix { dim_qubits: kept.len(), entries })
}

/// Applies `op` to the qubits `targets` (in the operator's own big-endian order).
pub fn apply(op: &Operator, state: &StateVector, targets: &[usize]) -> Result<StateVector> {
    check_targets(state.num_qubits(), targets)?;
    if op.dim_qubits != targets.len() {
        return Err(StateError::DimensionMismatch { expected: targets.len(), actual: op.dim_qubits });
    }
    if !op.unitary {
        return Err(StateError::NotUnitary);
    }
    let mut amplitudes = state.amplitudes.clone();
    raw::apply_in_place(op, &mut amplitudes, state.num_qubits(), targets);
    Ok(StateVector { amplitudes, labels: state.labels.clone() })
}

/// Applies `op` to `targets` on the branch where `control` is `|1⟩`.
pub fn apply_controlled(op: &Operator, state: &StateVector, control: usize, targets: &[usize]) -> Result<StateVector> {
    let mut all = vec![control];
    all.extend_from_slice(targets);
    check_targets(state.num_qubits(), &all)?;
    if op.dim_qubits != targets.len() {
        return Err(StateError::DimensionMismatch { expected: targets.len(), actual: op.dim_qubits });
    }
    if !op.unitary {
        return Err(StateError::NotUnitary);
    }
    let mut amplitudes = state.amplitudes.clone();
    raw::apply_controlled_in_place(op, &mut amplitudes, state.num_qubits(), control, targets);
    Ok(StateVector { amplitudes, labels: state.labels.clone() })
}

fn same_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(StateError::DimensionMismatch { expected, actual })
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn kron_vec(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect()
}

/// Unchecked kernels over bare (possibly unnormalized) amplitude slices.
///
/// Callers are responsible for validating targets; these are the building
/// blocks for vectors that are not states, e.g. the branches of an isometry.
pub mod raw {
    use super::*;

    fn offsets(num_qubits: usize, targets: &[usize]) -> (usize, Vec<usize>) {
        let k = targets.len();
        let masks: Vec<usize> = targets.iter().map(|&t| 1usize << (num_qubits - 1 - t)).collect();
        let offsets = (0..1usize << k)
            .map(|s| (0..k).filter(|&i| (s >> (k - 1 - i)) & 1 == 1).map(|i| masks[i]).sum())
            .collect();
        (masks.iter().sum(), offsets)
    }

    fn apply_masked(op: &Operator, amplitudes: &mut [Complex64], num_qubits: usize, targets: &[usize], control: Option<usize>) {
        let (target_mask, offsets) = offsets(num_qubits, targets);
        let control_mask = control.map(|c| 1usize << (num_qubits - 1 - c));
        let d = offsets.len();
        let mut buf = vec![ZERO; d];
        for base in 0..amplitudes.len() {
            if base & target_mask != 0 {
                continue;
            }
            if let Some(cm) = control_mask {
                if base & cm == 0 {
                    continue;
                }
            }
            for (s, off) in offsets.iter().enumerate() {
                buf[s] = amplitudes[base | off];
            }
            for (r, off) in offsets.iter().enumerate() {
                let row = &op.entries[r * d..(r + 1) * d];
                amplitudes[base | off] = row.iter().zip(&buf).map(|(m, v)| m * v).sum();
            }
        }
    }

    pub fn apply_in_place(op: &Operator, amplitudes: &mut [Complex64], num_qubits: usize, targets: &[usize]) {
        apply_masked(op, amplitudes, num_qubits, targets, None);
    }

    pub fn apply_controlled_in_place(
        op: &Operator,
        amplitudes: &mut [Complex64],
        num_qubits: usize,
        control: usize,
        targets: &[usize],
    ) {
        apply_masked(op, amplitudes, num_qubits, targets, Some(control));
    }

    /// Appends `extra` qubits in `|0…0⟩` after the existing register.
    pub fn append_zeros(amplitudes: &[Complex64], extra: usize) -> Vec<Complex64> {
        let stride = 1usize << extra;
        let mut out = vec![ZERO; amplitudes.len() * stride];
        for (i, a) in amplitudes.iter().enumerate() {
            out[i * stride] = *a;
        }
        out
    }

    pub fn norm_sqr(v: &[Complex64]) -> f64 {
        super::norm_sqr(v)
    }

    pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        super::inner(a, b)
    }

    pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        super::kron_vec(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn ket(bits: &[f64]) -> StateVector {
        StateVector::new(bits.iter().map(|&b| Complex64::new(b, 0.0)).collect()).unwrap()
    }

    #[test]
    fn bell_pair_amplitudes() {
        let phi = bell_pair();
        let expected = [H, 0.0, 0.0, H];
        for (a, e) in phi.amplitudes().iter().zip(expected) {
            assert!((a.re - e).abs() < 1e-8 && a.im == 0.0);
        }
        assert!((phi.norm() - 1.0).abs() < 1e-12);
        let zz = Operator::pauli_z().tensor(&Operator::pauli_z());
        assert!((expectation(&phi, &zz).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_eigenstate_is_deterministic() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let zero = StateVector::zero(1);
        for _ in 0..20 {
            let m = projective_measure(&zero, &Operator::pauli_z(), &[0], &mut rng).unwrap();
            assert_eq!(m.outcome, Outcome::Plus);
            assert_eq!(m.probability, 1.0);
            assert!(vector_distance(&m.post_state, &zero).unwrap() < 1e-12);
        }
    }

    #[test]
    fn measure_x_on_zero_is_unbiased() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let m = projective_measure(&StateVector::zero(1), &Operator::pauli_x(), &[0], &mut rng).unwrap();
        assert!((m.probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn measure_z_on_bell_collapses() {
        let (post, p) = project(&bell_pair(), &Operator::pauli_z(), &[0], Outcome::Plus).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(vector_distance(&post, &ket(&[1.0, 0.0, 0.0, 0.0])).unwrap() < 1e-12);
        assert_eq!(post.labels(), bell_pair().labels());
    }

    #[test]
    fn measurement_rejects_bad_observables() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let non_hermitian = Operator::single([[ONE, ONE], [ZERO, ONE]]);
        assert_eq!(
            projective_measure(&StateVector::zero(1), &non_hermitian, &[0], &mut rng).unwrap_err(),
            StateError::NotHermitian
        );
        let not_pm1 = Operator::pauli_z().scale(Complex64::new(2.0, 0.0));
        assert_eq!(projective_measure(&StateVector::zero(1), &not_pm1, &[0], &mut rng).unwrap_err(), StateError::NotInvolutory);
        assert!(matches!(
            projective_measure(&StateVector::zero(1), &Operator::pauli_z(), &[3], &mut rng),
            Err(StateError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn expectation_examples() {
        let xx = Operator::pauli_x().tensor(&Operator::pauli_x());
        assert!((expectation(&bell_pair(), &xx).unwrap() - 1.0).abs() < 1e-12);
        assert!(expectation(&StateVector::zero(1), &Operator::pauli_x()).unwrap().abs() < 1e-12);
        let d = Operator::pauli_x().combine(Complex64::new(H, 0.0), &Operator::pauli_z(), Complex64::new(H, 0.0));
        let dx = d.tensor(&Operator::pauli_x());
        assert!((expectation(&bell_pair(), &dx).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(expectation(&StateVector::zero(1), &xx), Err(StateError::DimensionMismatch { .. })));
    }

    #[test]
    fn vector_distance_examples() {
        let zero = StateVector::zero(1);
        let one = StateVector::basis(1, 1);
        let plus = StateVector::equatorial(0.0);
        assert_eq!(vector_distance(&zero, &zero).unwrap(), 0.0);
        assert!((vector_distance(&zero, &one).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
        // √(2 − √2) from |1 − 1/√2|² + (1/√2)²
        let by_hand = ((1.0 - H).powi(2) + H * H).sqrt();
        assert!((vector_distance(&zero, &plus).unwrap() - by_hand).abs() < 1e-12);
        assert!((by_hand - 0.76536686).abs() < 1e-8);
    }

    #[test]
    fn fidelity_and_trace_examples() {
        let zero = StateVector::zero(1);
        let one = StateVector::basis(1, 1);
        assert!((fidelity(&zero, &zero.to_density()).unwrap() - 1.0).abs() < 1e-12);
        assert!((trace_distance(&zero.to_density(), &one.to_density()).unwrap() - 2.0).abs() < 1e-12);
        assert!((fidelity(&zero, &DensityMatrix::maximally_mixed(1)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tensor_and_partial_trace() {
        let zero = StateVector::zero(1);
        let one = StateVector::basis(1, 1);
        assert_eq!(zero.tensor(&one).amplitudes(), StateVector::basis(2, 1).amplitudes());
        let bob = partial_trace(&bell_pair().to_density(), &[1]).unwrap();
        assert!(bob.max_deviation(&DensityMatrix::maximally_mixed(1)) < 1e-12);
        let flipped = apply(&Operator::pauli_x(), &zero, &[0]).unwrap();
        assert_eq!(flipped.amplitudes(), one.amplitudes());
    }

    #[test]
    fn apply_checks_targets() {
        let s = StateVector::zero(2);
        let cz = Operator::identity(2);
        assert_eq!(apply(&cz, &s, &[1, 1]).unwrap_err(), StateError::OverlappingTargets);
        assert!(matches!(apply(&Operator::pauli_x(), &s, &[0, 1]), Err(StateError::DimensionMismatch { .. })));
    }

    #[test]
    fn target_order_is_respected() {
        // CNOT with control as the operator's first qubit, applied to (1, 0).
        let cnot = Operator::new(
            2,
            vec![ONE, ZERO, ZERO, ZERO, ZERO, ONE, ZERO, ZERO, ZERO, ZERO, ZERO, ONE, ZERO, ZERO, ONE, ZERO],
        )
        .unwrap();
        let s = StateVector::basis(2, 0b01); // qubit 1 set
        let out = apply(&cnot, &s, &[1, 0]).unwrap();
        assert_eq!(out.amplitudes(), StateVector::basis(2, 0b11).amplitudes());
    }

    #[test]
    fn controlled_application_matches_block_matrix() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let amps: Vec<Complex64> = (0..8).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let s = StateVector::from_unnormalized(amps).unwrap();
        let via_control = apply_controlled(&Operator::pauli_y(), &s, 2, &[0]).unwrap();
        // |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ Y on (control, target) = (2, 0)
        let p0 = Operator::single([[ONE, ZERO], [ZERO, ZERO]]);
        let p1 = Operator::single([[ZERO, ZERO], [ZERO, ONE]]);
        let block = p0.tensor(&Operator::identity(1)).combine(ONE, &p1.tensor(&Operator::pauli_y()), ONE);
        let direct = apply(&block, &s, &[2, 0]).unwrap();
        assert!(vector_distance(&via_control, &direct).unwrap() < 1e-12);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert_eq!(StateVector::new(vec![ONE, ONE]).unwrap_err(), StateError::NotNormalized(2.0));
        assert_eq!(StateVector::new(vec![ONE; 3]).unwrap_err(), StateError::NotPowerOfTwo(3));
        assert_eq!(StateVector::new(vec![Complex64::new(f64::NAN, 0.0), ZERO]).unwrap_err(), StateError::NonFinite);
        assert!(DensityMatrix::new(1, vec![ONE, ZERO, ZERO, ONE]).is_err());
        assert!(DensityMatrix::new(1, vec![Complex64::new(1.5, 0.0), ZERO, ZERO, Complex64::new(-0.5, 0.0)]).is_err());
    }

    #[test]
    fn outcome_serde_uses_signs() {
        assert_eq!(serde_json::to_string(&Outcome::Minus).unwrap(), "-1");
        assert_eq!(serde_json::from_str::<Outcome>("1").unwrap(), Outcome::Plus);
        assert!(serde_json::from_str::<Outcome>("0").is_err());
    }
}
