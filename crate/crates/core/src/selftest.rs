//! Bell-pair self-testing: the fourteen measurement settings, correlation
//! estimators, the end-of-session acceptance test and the analytic bounds
//! that turn observed statistics into closeness and confidence guarantees.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qstate::{self, Operator, Outcome, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfTestError {
    #[error("observable {axis} is not available on {side:?}'s side")]
    InvalidSide { axis: Axis, side: Side },
    #[error("unknown observable label {0:?}")]
    UnknownLabel(String),
    #[error("setting {alpha}{beta} is not one of the fourteen admissible settings")]
    InadmissibleSetting { alpha: Axis, beta: Axis },
    #[error("measurement outcome must be ±1, got {0}")]
    InvalidOutcome(i64),
    #[error("no counted round awaiting an outcome for setting {0}")]
    NoPendingRound(MeasurementSetting),
    #[error("invalid security parameters: {0}")]
    InvalidParams(String),
    #[error("{0} is not an ideal correlation value")]
    NotIdealCorrelation(f64),
    #[error(transparent)]
    State(#[from] qstate::StateError),
}

pub type Result<T> = std::result::Result<T, SelfTestError>;

/// Single-qubit observable label. Bob only ever measures `X`, `Y`, `Z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    D,
    #[serde(rename = "E+")]
    EPlus,
    #[serde(rename = "E-")]
    EMinus,
    F,
}

impl Axis {
    pub const ALICE: [Axis; 7] = [Axis::X, Axis::Y, Axis::Z, Axis::D, Axis::EPlus, Axis::EMinus, Axis::F];
    pub const BOB: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
            Axis::D => "D",
            Axis::EPlus => "E+",
            Axis::EMinus => "E-",
            Axis::F => "F",
        }
    }

    /// Whether the observable has complex matrix entries.
    pub fn is_complex(self) -> bool {
        matches!(self, Axis::Y | Axis::EPlus | Axis::EMinus | Axis::F)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Axis {
    type Err = SelfTestError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "X" => Axis::X,
            "Y" => Axis::Y,
            "Z" => Axis::Z,
            "D" => Axis::D,
            "E+" | "Ep" => Axis::EPlus,
            "E-" | "E−" | "Em" => Axis::EMinus,
            "F" => Axis::F,
            other => return Err(SelfTestError::UnknownLabel(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Alice,
    Bob,
}

/// Bloch vector `(x, y, z)` of an observable `x·X + y·Y + z·Z`.
///
/// Bob's `Y` is `−Y`.
pub fn bloch_vector(axis: Axis, side: Side) -> Result<[f64; 3]> {
    let h = FRAC_1_SQRT_2;
    let v = match (axis, side) {
        (Axis::X, _) => [1.0, 0.0, 0.0],
        (Axis::Y, Side::Alice) => [0.0, 1.0, 0.0],
        (Axis::Y, Side::Bob) => [0.0, -1.0, 0.0],
        (Axis::Z, _) => [0.0, 0.0, 1.0],
        (Axis::D, Side::Alice) => [h, 0.0, h],
        (Axis::EPlus, Side::Alice) => [h, h, 0.0],
        (Axis::EMinus, Side::Alice) => [-h, h, 0.0],
        (Axis::F, Side::Alice) => [0.0, h, h],
        (axis, Side::Bob) => return Err(SelfTestError::InvalidSide { axis, side }),
    };
    Ok(v)
}

/// `x·X + y·Y + z·Z` for a unit Bloch vector.
pub fn observable_from_bloch(v: [f64; 3]) -> Operator {
    let c = |x: f64| Complex64::new(x, 0.0);
    let x = Operator::pauli_x().scale(c(v[0]));
    let y = Operator::pauli_y().scale(c(v[1]));
    let z = Operator::pauli_z().scale(c(v[2]));
    x.combine(c(1.0), &y, c(1.0)).combine(c(1.0), &z, c(1.0))
}

/// The 2×2 observable a side measures for `axis`.
pub fn observable_matrix(axis: Axis, side: Side) -> Result<Operator> {
    Ok(observable_from_bloch(bloch_vector(axis, side)?))
}

/// One of the fourteen admissible (Alice, Bob) observable pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MeasurementSetting {
    alpha: Axis,
    beta: Axis,
}

const fn setting(alpha: Axis, beta: Axis) -> MeasurementSetting {
    MeasurementSetting { alpha, beta }
}

impl MeasurementSetting {
    pub const ALL: [MeasurementSetting; 14] = [
        setting(Axis::X, Axis::X),
        setting(Axis::X, Axis::Y),
        setting(Axis::X, Axis::Z),
        setting(Axis::Y, Axis::Y),
        setting(Axis::Y, Axis::Z),
        setting(Axis::Z, Axis::Z),
        setting(Axis::D, Axis::X),
        setting(Axis::D, Axis::Z),
        setting(Axis::EPlus, Axis::X),
        setting(Axis::EPlus, Axis::Y),
        setting(Axis::EMinus, Axis::X),
        setting(Axis::EMinus, Axis::Y),
        setting(Axis::F, Axis::Y),
        setting(Axis::F, Axis::Z),
    ];

    pub fn new(alpha: Axis, beta: Axis) -> Result<Self> {
        let s = setting(alpha, beta);
        if Self::ALL.contains(&s) {
            Ok(s)
        } else {
            Err(SelfTestError::InadmissibleSetting { alpha, beta })
        }
    }

    pub fn alpha(self) -> Axis {
        self.alpha
    }

    pub fn beta(self) -> Axis {
        self.beta
    }

    /// Position in [`MeasurementSetting::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("settings are admissible by construction")
    }

    /// `α_A ⊗ β_B` on the pair register (Alice first).
    pub fn joint_observable(self) -> Operator {
        use crate::qstate::Tensor;
        let a = observable_matrix(self.alpha, Side::Alice).expect("alpha valid for Alice");
        let b = observable_matrix(self.beta, Side::Bob).expect("beta valid for Bob");
        a.tensor(&b)
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.alpha, self.beta)
    }
}

impl FromStr for MeasurementSetting {
    type Err = SelfTestError;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.char_indices().skip(1);
        let split = match s.chars().next() {
            Some('E') => chars.nth(1).map(|(i, _)| i),
            Some(_) => chars.next().map(|(i, _)| i),
            None => None,
        }
        .ok_or_else(|| SelfTestError::UnknownLabel(s.to_string()))?;
        let (a, b) = s.split_at(split);
        Self::new(a.parse()?, b.parse()?)
    }
}

impl TryFrom<String> for MeasurementSetting {
    type Error = SelfTestError;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<MeasurementSetting> for String {
    fn from(value: MeasurementSetting) -> Self {
        value.to_string()
    }
}

/// `⟨φ⁺| α_A ⊗ β_B |φ⁺⟩`, evaluated from Bloch vectors as `aₓbₓ − a_y b_y + a_z b_z`.
pub fn ideal_correlation(setting: MeasurementSetting) -> f64 {
    let a = bloch_vector(setting.alpha, Side::Alice).expect("alpha valid");
    let b = bloch_vector(setting.beta, Side::Bob).expect("beta valid");
    a[0] * b[0] - a[1] * b[1] + a[2] * b[2]
}

/// Samples one test round on `pair`: Alice measures α on qubit 0, Bob β on qubit 1.
pub fn sample_correlation<R: Rng + ?Sized>(
    pair: &StateVector,
    setting: MeasurementSetting,
    rng: &mut R,
) -> Result<(Outcome, Outcome)> {
    let alice = qstate::projective_measure(pair, &observable_matrix(setting.alpha, Side::Alice)?, &[0], rng)?;
    let bob = qstate::projective_measure(&alice.post_state, &observable_matrix(setting.beta, Side::Bob)?, &[1], rng)?;
    Ok((alice.outcome, bob.outcome))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct SettingStats {
    counter: u64,
    recorded: u64,
    product_sum: i64,
}

/// Per-setting counters `k^{αβ}` and estimators `Ĉ^{αβ}`.
///
/// Estimators are kept as an exact integer sum of `a·b` products.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationLedger {
    stats: [SettingStats; 14],
}

impl CorrelationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts a new round for `setting`; its outcome pair follows via
    /// [`CorrelationLedger::update_estimator`].
    pub fn increment_counter(&mut self, setting: MeasurementSetting) {
        self.stats[setting.index()].counter += 1;
    }

    /// Running-mean update `Ĉ ← ((k−1)Ĉ + a·b)/k` for the pending round.
    pub fn update_estimator(&mut self, setting: MeasurementSetting, a: i64, b: i64) -> Result<()> {
        let a = Outcome::from_sign(a).ok_or(SelfTestError::InvalidOutcome(a))?;
        let b = Outcome::from_sign(b).ok_or(SelfTestError::InvalidOutcome(b))?;
        let stats = &mut self.stats[setting.index()];
        if stats.recorded >= stats.counter {
            return Err(SelfTestError::NoPendingRound(setting));
        }
        stats.recorded += 1;
        stats.product_sum += (a.sign() * b.sign()) as i64;
        Ok(())
    }

    /// Counts and records a round in one step.
    pub fn record(&mut self, setting: MeasurementSetting, a: Outcome, b: Outcome) {
        self.increment_counter(setting);
        self.update_estimator(setting, a.sign() as i64, b.sign() as i64)
            .expect("round was just counted");
    }

    pub fn count(&self, setting: MeasurementSetting) -> u64 {
        self.stats[setting.index()].counter
    }

    pub fn estimator(&self, setting: MeasurementSetting) -> f64 {
        let s = &self.stats[setting.index()];
        if s.recorded == 0 {
            0.0
        } else {
            s.product_sum as f64 / s.recorded as f64
        }
    }

    /// `|Ĉ^{αβ} − μ^{αβ}|`.
    pub fn deviation(&self, setting: MeasurementSetting) -> f64 {
        (self.estimator(setting) - ideal_correlation(setting)).abs()
    }

    pub fn max_deviation(&self) -> f64 {
        MeasurementSetting::ALL.iter().map(|&s| self.deviation(s)).fold(0.0, f64::max)
    }

    pub fn total_rounds(&self) -> u64 {
        self.stats.iter().map(|s| s.counter).sum()
    }
}

/// Which confidence expression the acceptance test and reports use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceFormula {
    /// `(1−δ)³(1−2δ)¹¹`
    #[default]
    PerSession,
    /// `(1−δ)^{3m}(1−2δ)^{11m}`
    PerQubit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityParams {
    /// Target confidence, in (0, 1).
    pub p: f64,
    /// Correlation tolerance ε > 0.
    pub epsilon: f64,
    /// Verifiability constant Δ in (0, ½).
    pub delta_frac: f64,
    /// Oversampling constant c ≥ 1.
    pub c: u32,
    /// Number of prepared (computation) qubits.
    pub m: u64,
    /// Tests required per setting, ñ.
    pub n_tilde: u64,
    #[serde(default)]
    pub confidence_formula: ConfidenceFormula,
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SelfTestError::InvalidParams(msg));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta_frac > 0.0 && self.delta_frac < 0.5) {
            return bad(format!("delta_frac must lie in (0, 1/2), got {}", self.delta_frac));
        }
        if self.c < 1 {
            return bad("c must be at least 1".into());
        }
        if self.n_tilde + self.m == 0 {
            return bad("n_tilde + m must be positive".into());
        }
        Ok(())
    }

    /// `N = m + 14·c·ñ`.
    pub fn total_pairs(&self) -> u64 {
        self.m + 14 * self.c as u64 * self.n_tilde
    }

    pub fn test_rounds(&self) -> u64 {
        14 * self.c as u64 * self.n_tilde
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    InsufficientConfidence { confidence: f64, required: f64 },
    InsufficientStatistics { setting: MeasurementSetting, count: u64, required: u64 },
    CorrelationDeviation { setting: MeasurementSetting, estimate: f64, ideal: f64 },
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbortReason::InsufficientConfidence { confidence, required } => {
                write!(f, "insufficient confidence: {confidence:.6e} < {required}")
            }
            AbortReason::InsufficientStatistics { setting, count, required } => {
                write!(f, "insufficient statistics for {setting}: {count} < {required}")
            }
            AbortReason::CorrelationDeviation { setting, estimate, ideal } => {
                write!(f, "correlation deviation for {setting}: estimate {estimate:.6} vs ideal {ideal:.6}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SelfTestVerdict {
    Accept,
    Abort(AbortReason),
}

impl SelfTestVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, SelfTestVerdict::Accept)
    }
}

/// Confidence value; `degenerate` marks δ ≥ ½ where the closed form is not
/// positive and the value is pinned to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Confidence {
    pub value: f64,
    pub degenerate: bool,
}

fn confidence_with_exponents(delta: f64, one_sided: f64, two_sided: f64) -> Confidence {
    if delta >= 0.5 {
        return Confidence { value: 0.0, degenerate: true };
    }
    let value = (1.0 - delta).powf(one_sided) * (1.0 - 2.0 * delta).powf(two_sided);
    Confidence { value, degenerate: false }
}

/// `(1−δ)³(1−2δ)¹¹`: three one-sided settings (|μ| = 1) and eleven two-sided.
pub fn confidence(delta: f64) -> Confidence {
    confidence_with_exponents(delta, 3.0, 11.0)
}

/// `(1−δ)^{3m}(1−2δ)^{11m}`.
pub fn confidence_per_qubit(delta: f64, m: u64) -> Confidence {
    confidence_with_exponents(delta, 3.0 * m as f64, 11.0 * m as f64)
}

pub fn confidence_for(formula: ConfidenceFormula, delta: f64, m: u64) -> Confidence {
    match formula {
        ConfidenceFormula::PerSession => confidence(delta),
        ConfidenceFormula::PerQubit => confidence_per_qubit(delta, m),
    }
}

/// `δ = exp(−(ñ+m)ε²/8)`.
pub fn azuma_delta(n_tilde: u64, m: u64, epsilon: f64) -> f64 {
    (-((n_tilde + m) as f64) * epsilon * epsilon / 8.0).exp()
}

/// `χ = (2ñε + m(2+ε))/(ñ+m)`.
///
/// # Panics
/// If `n_tilde + m == 0`.
pub fn chi_bound(n_tilde: u64, m: u64, epsilon: f64) -> f64 {
    assert!(n_tilde + m > 0, "chi_bound needs at least one pair");
    let (n, m) = (n_tilde as f64, m as f64);
    (2.0 * n * epsilon + m * (2.0 + epsilon)) / (n + m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonBounds {
    pub eps1: f64,
    pub eps2: f64,
    pub eps_tilde: f64,
}

/// Robustness constants for correlations χ-close to ideal.
pub fn epsilon_bounds(chi: f64) -> EpsilonBounds {
    let chi = chi.max(0.0);
    let eps2 = (2.0 * chi).sqrt();
    let eps1 = (1.0 + SQRT_2) * ((1.0 + 2.0 * SQRT_2) * chi + eps2).sqrt() + 2.0 * eps2;
    EpsilonBounds { eps1, eps2, eps_tilde: 0.5 * (9.0 * eps1 + eps2) }
}

/// Deviation used for pairs that were prepared but never tested.
pub const PESSIMISTIC_PREP_DEVIATION: f64 = 2.0;

/// Worst-case hypothetical deviation ε′ for an untested pair with ideal
/// correlation `mu`, taken verbatim from the per-value table.
pub fn worst_case_prep_deviation(mu: f64) -> Result<f64> {
    let table = [
        (1.0, -2.0),
        (FRAC_1_SQRT_2, -(1.0 + FRAC_1_SQRT_2)),
        (0.0, 1.0),
        (-FRAC_1_SQRT_2, 1.0 + FRAC_1_SQRT_2),
    ];
    table
        .iter()
        .find(|(ideal, _)| (ideal - mu).abs() <= qstate::ALGEBRA_TOL)
        .map(|&(_, dev)| dev)
        .ok_or(SelfTestError::NotIdealCorrelation(mu))
}

/// Table value, or the uniform `|ε′| = 2` simplification when `pessimistic`.
pub fn prep_deviation(mu: f64, pessimistic: bool) -> Result<f64> {
    let tabulated = worst_case_prep_deviation(mu)?;
    Ok(if pessimistic { PESSIMISTIC_PREP_DEVIATION } else { tabulated })
}

/// Step-3 acceptance test. Checks, in order: the confidence inequality,
/// that every setting gathered at least ñ rounds, and that every estimator
/// lies within ε of its ideal value.
pub fn acceptance_check(ledger: &CorrelationLedger, params: &SecurityParams) -> SelfTestVerdict {
    let delta = azuma_delta(params.n_tilde, params.m, params.epsilon);
    let conf = confidence_for(params.confidence_formula, delta, params.m);
    if conf.degenerate || conf.value < params.p {
        return SelfTestVerdict::Abort(AbortReason::InsufficientConfidence { confidence: conf.value, required: params.p });
    }
    for setting in MeasurementSetting::ALL {
        let count = ledger.count(setting);
        if count < params.n_tilde {
            return SelfTestVerdict::Abort(AbortReason::InsufficientStatistics {
                setting,
                count,
                required: params.n_tilde,
            });
        }
    }
    for setting in MeasurementSetting::ALL {
        if ledger.deviation(setting) > params.epsilon {
            return SelfTestVerdict::Abort(AbortReason::CorrelationDeviation {
                setting,
                estimate: ledger.estimator(setting),
                ideal: ideal_correlation(setting),
            });
        }
    }
    SelfTestVerdict::Accept
}

/// All analytic quantities derived from a parameter set.
///
/// Field names are part of the JSON interface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundReport {
    pub chi: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_tilde: f64,
    pub delta: f64,
    pub confidence: f64,
    pub p_error_bound: f64,
}

impl BoundReport {
    pub fn compute(params: &SecurityParams) -> Self {
        Self::from_chi(params, chi_bound(params.n_tilde, params.m, params.epsilon))
    }

    /// Same statistics, but assuming ideal preparation (χ = 0).
    pub fn ideal(params: &SecurityParams) -> Self {
        Self::from_chi(params, 0.0)
    }

    fn from_chi(params: &SecurityParams, chi: f64) -> Self {
        let eps = epsilon_bounds(chi);
        let delta = azuma_delta(params.n_tilde, params.m, params.epsilon);
        let confidence = confidence_for(params.confidence_formula, delta, params.m).value;
        let p_error_bound = crate::mbqc::corollary_bound(confidence, params.delta_frac, params.m, eps.eps_tilde);
        BoundReport { chi, eps1: eps.eps1, eps2: eps.eps2, eps_tilde: eps.eps_tilde, delta, confidence, p_error_bound }
    }

    pub fn is_consistent(&self) -> bool {
        let fields = [self.chi, self.eps1, self.eps2, self.eps_tilde, self.delta, self.confidence, self.p_error_bound];
        fields.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.delta <= 1.0
            && self.confidence <= 1.0
            && self.p_error_bound <= 1.0
    }
}

/// Constants for [`resource_estimate`]. These are implementation choices,
/// not derived quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceTarget {
    /// Target per-qubit confidence p.
    pub confidence: f64,
    /// ε = epsilon_scale · m⁻².
    pub epsilon_scale: f64,
    pub c: u32,
}

impl Default for ResourceTarget {
    fn default() -> Self {
        Self { confidence: 0.9, epsilon_scale: 1.0, c: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub m: u64,
    pub epsilon: f64,
    pub n_tilde: u64,
    /// `N = m + 14cñ`
    pub total_pairs: u64,
}

/// Chooses ε = ε₀m⁻² and ñ+m = ⌈8ε⁻² ln(28m/(1−p))⌉, so that
/// `(1−δ)^{3m}(1−2δ)^{11m} ≥ 1 − 25mδ ≥ p`.
pub fn resource_estimate(m: u64, target: ResourceTarget) -> ResourceEstimate {
    assert!(m >= 1, "resource_estimate needs m >= 1");
    let mf = m as f64;
    let epsilon = target.epsilon_scale / (mf * mf);
    let pairs = (8.0 / (epsilon * epsilon) * (28.0 * mf / (1.0 - target.confidence)).ln()).ceil() as u64;
    let n_tilde = pairs.saturating_sub(m).max(1);
    let tested = n_tilde.saturating_mul(14 * target.c as u64);
    ResourceEstimate { m, epsilon, n_tilde, total_pairs: tested.saturating_add(m) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{bell_pair, expectation};
    use proptest::prelude::*;

    const H: f64 = FRAC_1_SQRT_2;

    #[test]
    fn observable_examples() {
        let d = observable_matrix(Axis::D, Side::Alice).unwrap();
        let expected = Operator::pauli_x().combine(Complex64::new(H, 0.0), &Operator::pauli_z(), Complex64::new(H, 0.0));
        assert!(d.max_deviation(&expected) < 1e-15);
        let y_bob = observable_matrix(Axis::Y, Side::Bob).unwrap();
        assert!(y_bob.max_deviation(&Operator::pauli_y().scale(Complex64::new(-1.0, 0.0))) < 1e-15);
        let em = observable_matrix(Axis::EMinus, Side::Alice).unwrap();
        let expected = Operator::pauli_x().combine(Complex64::new(-H, 0.0), &Operator::pauli_y(), Complex64::new(H, 0.0));
        assert!(em.max_deviation(&expected) < 1e-15);
        assert!(matches!(observable_matrix(Axis::D, Side::Bob), Err(SelfTestError::InvalidSide { .. })));
    }

    #[test]
    fn every_observable_is_pm1() {
        for axis in Axis::ALICE {
            assert!(observable_matrix(axis, Side::Alice).unwrap().is_pm1_observable(), "{axis}");
        }
        for axis in Axis::BOB {
            assert!(observable_matrix(axis, Side::Bob).unwrap().is_pm1_observable(), "{axis}");
        }
    }

    #[test]
    fn excluded_settings_are_rejected() {
        for (a, b) in [(Axis::Y, Axis::X), (Axis::Z, Axis::X), (Axis::Z, Axis::Y), (Axis::D, Axis::Y), (Axis::EPlus, Axis::Z), (Axis::EMinus, Axis::Z), (Axis::F, Axis::X)] {
            assert!(MeasurementSetting::new(a, b).is_err(), "{a}{b}");
        }
        let all: std::collections::HashSet<_> = MeasurementSetting::ALL.iter().collect();
        assert_eq!(all.len(), 14);
    }

    #[test]
    fn setting_labels_round_trip() {
        for s in MeasurementSetting::ALL {
            assert_eq!(s.to_string().parse::<MeasurementSetting>().unwrap(), s);
        }
        assert!("E+Z".parse::<MeasurementSetting>().is_err());
        assert!("".parse::<MeasurementSetting>().is_err());
        assert!("E".parse::<MeasurementSetting>().is_err());
    }

    #[test]
    fn ideal_correlation_examples() {
        let xx = MeasurementSetting::new(Axis::X, Axis::X).unwrap();
        let dz = MeasurementSetting::new(Axis::D, Axis::Z).unwrap();
        let emx = MeasurementSetting::new(Axis::EMinus, Axis::X).unwrap();
        assert!((ideal_correlation(xx) - 1.0).abs() < 1e-15);
        assert!((ideal_correlation(dz) - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((ideal_correlation(emx) + FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn ideal_correlation_matches_matrix_expectation() {
        for s in MeasurementSetting::ALL {
            let direct = expectation(&bell_pair(), &s.joint_observable()).unwrap();
            assert!((direct - ideal_correlation(s)).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn estimator_examples() {
        let s = MeasurementSetting::ALL[0];
        let mut ledger = CorrelationLedger::new();
        ledger.increment_counter(s);
        ledger.update_estimator(s, 1, 1).unwrap();
        assert_eq!(ledger.estimator(s), 1.0);
        ledger.increment_counter(s);
        ledger.update_estimator(s, 1, -1).unwrap();
        assert_eq!(ledger.estimator(s), 0.0);

        let mut constant = CorrelationLedger::new();
        (0..100).for_each(|_| constant.record(s, Outcome::Minus, Outcome::Minus));
        assert_eq!(constant.estimator(s), 1.0);
        assert_eq!(constant.estimator(MeasurementSetting::ALL[1]), 0.0);
    }

    #[test]
    fn estimator_rejects_bad_input() {
        let s = MeasurementSetting::ALL[3];
        let mut ledger = CorrelationLedger::new();
        assert_eq!(ledger.update_estimator(s, 1, 1), Err(SelfTestError::NoPendingRound(s)));
        ledger.increment_counter(s);
        assert_eq!(ledger.update_estimator(s, 0, 1), Err(SelfTestError::InvalidOutcome(0)));
        assert_eq!(ledger.update_estimator(s, 1, 2), Err(SelfTestError::InvalidOutcome(2)));
    }

    fn params(n_tilde: u64, m: u64, epsilon: f64, p: f64) -> SecurityParams {
        SecurityParams { p, epsilon, delta_frac: 0.25, c: 1, m, n_tilde, confidence_formula: ConfidenceFormula::PerSession }
    }

    fn ideal_ledger(k: u64) -> CorrelationLedger {
        // Only μ ∈ {0, ±1} are representable exactly by ±1 products, so
        // mark every setting with the closest estimator within the step.
        let mut ledger = CorrelationLedger::new();
        for s in MeasurementSetting::ALL {
            let mu = ideal_correlation(s);
            let plus = ((1.0 + mu) / 2.0 * k as f64).round() as u64;
            for i in 0..k {
                let b = if i < plus { Outcome::Plus } else { Outcome::Minus };
                ledger.record(s, Outcome::Plus, b);
            }
        }
        ledger
    }

    #[test]
    fn acceptance_examples() {
        let p = params(100_000, 10, 0.05, 0.9);
        assert!(confidence(azuma_delta(100_000, 10, 0.05)).value >= 0.9);
        assert_eq!(acceptance_check(&ideal_ledger(100_000), &p), SelfTestVerdict::Accept);

        let mut longer = ideal_ledger(100_000);
        let xx = MeasurementSetting::ALL[0];
        // XX estimator at 1 − (ε + 0.01)
        let flips = 3_000;
        longer.stats[xx.index()] = SettingStats { counter: 100_000, recorded: 100_000, product_sum: 100_000 - 2 * flips };
        assert!((longer.deviation(xx) - 0.06).abs() < 1e-12);
        assert!(matches!(
            acceptance_check(&longer, &p),
            SelfTestVerdict::Abort(AbortReason::CorrelationDeviation { setting, .. }) if setting == xx
        ));

        let weak = params(790, 10, 0.1, 0.9);
        match acceptance_check(&ideal_ledger(1000), &weak) {
            SelfTestVerdict::Abort(AbortReason::InsufficientConfidence { confidence, .. }) => {
                let delta = (-1.0f64).exp();
                let expected = (1.0 - delta).powi(3) * (1.0 - 2.0 * delta).powi(11);
                assert!((confidence - expected).abs() < 1e-15);
                assert!((confidence - 1.1077e-7).abs() < 1e-11);
            }
            other => panic!("unexpected verdict {other:?}"),
        }
    }

    #[test]
    fn acceptance_requires_statistics() {
        let p = params(100_000, 10, 0.05, 0.9);
        let ledger = ideal_ledger(99_999);
        assert!(matches!(acceptance_check(&ledger, &p), SelfTestVerdict::Abort(AbortReason::InsufficientStatistics { .. })));
    }

    #[test]
    fn azuma_examples() {
        assert!((azuma_delta(790, 10, 0.1) - 0.36787944).abs() < 1e-8);
        assert_eq!(azuma_delta(0, 0, 0.3), 1.0);
        let tiny = azuma_delta(8_000_000, 0, 0.01);
        assert!((tiny / (-100.0f64).exp() - 1.0).abs() < 1e-9);
        assert!((tiny - 3.72e-44).abs() < 0.01e-44);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(0.0).value, 1.0);
        let c = confidence(0.01).value;
        assert!((c - 0.99f64.powi(3) * 0.98f64.powi(11)).abs() < 1e-15);
        assert!((c - 0.77697).abs() < 1e-4);
        let half = confidence(0.5);
        assert_eq!(half.value, 0.0);
        assert!(half.degenerate);
        assert!(confidence(0.7).degenerate);
        assert_eq!(confidence_per_qubit(0.01, 1).value, c);
    }

    #[test]
    fn chi_examples() {
        assert!((chi_bound(1_000_000, 100, 0.001) - 0.0022).abs() < 1e-4);
        assert!((chi_bound(500, 0, 0.03) - 0.06).abs() < 1e-15);
        assert!((chi_bound(0, 7, 0.03) - 2.03).abs() < 1e-15);
    }

    #[test]
    fn epsilon_examples() {
        let zero = epsilon_bounds(0.0);
        assert_eq!((zero.eps1, zero.eps2, zero.eps_tilde), (0.0, 0.0, 0.0));
        let e = epsilon_bounds(0.01);
        assert!((e.eps2 - 0.14142).abs() < 1e-5);
        assert!((e.eps1 - 1.3063).abs() < 1e-4);
        assert!((e.eps_tilde - 5.949).abs() < 1e-3);
    }

    #[test]
    fn eps_tilde_is_order_chi_quarter() {
        let ratios: Vec<f64> = (0..=60)
            .map(|i| 10f64.powf(-8.0 + 6.0 * i as f64 / 60.0))
            .map(|chi| epsilon_bounds(chi).eps_tilde / chi.powf(0.25))
            .collect();
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        // leading term: 4.5·(1+√2)·2^{1/4}
        let leading = 4.5 * (1.0 + SQRT_2) * 2f64.powf(0.25);
        assert!(max < 1.5 * leading, "max ratio {max}");
        assert!(ratios[0] > leading && ratios[0] < leading * 1.05);
    }

    #[test]
    fn prep_deviation_table() {
        assert_eq!(worst_case_prep_deviation(1.0).unwrap(), -2.0);
        assert_eq!(worst_case_prep_deviation(0.0).unwrap(), 1.0);
        assert!((worst_case_prep_deviation(-H).unwrap() - 1.70710678).abs() < 1e-8);
        assert!((worst_case_prep_deviation(H).unwrap() + 1.70710678).abs() < 1e-8);
        assert!(worst_case_prep_deviation(0.3).is_err());
        assert_eq!(prep_deviation(0.0, true).unwrap(), 2.0);
    }

    #[test]
    fn resource_examples() {
        let p = SecurityParams { p: 0.9, epsilon: 0.1, delta_frac: 0.25, c: 1, m: 100, n_tilde: 1000, confidence_formula: ConfidenceFormula::PerSession };
        assert_eq!(p.total_pairs(), 14_100);
        let single = resource_estimate(1, ResourceTarget::default());
        assert!(single.total_pairs >= 15);
        for m in [1, 2, 5, 16, 64] {
            let est = resource_estimate(m, ResourceTarget::default());
            let delta = azuma_delta(est.n_tilde, m, est.epsilon);
            assert!(confidence_per_qubit(delta, m).value >= 0.9, "m = {m}");
        }
    }

    #[test]
    fn resource_growth_is_quartic_log() {
        let t = ResourceTarget::default();
        for m in [4u64, 16, 64, 256] {
            let ratio = resource_estimate(2 * m, t).total_pairs as f64 / resource_estimate(m, t).total_pairs as f64;
            let mf = m as f64;
            assert!(ratio <= 16.0 * (1.0 + 2f64.ln() / mf.ln()) + 1e-6, "m = {m}: {ratio}");
            assert!(ratio > 16.0);
        }
        let big = resource_estimate(1 << 12, t).total_pairs as f64 / resource_estimate(1 << 11, t).total_pairs as f64;
        assert!((big - 16.0).abs() < 1.0);
    }

    #[test]
    fn params_validation() {
        let mut p = params(10, 10, 0.1, 0.9);
        assert!(p.validate().is_ok());
        p.epsilon = 0.0;
        assert!(p.validate().is_err());
        p.epsilon = 0.1;
        p.delta_frac = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn bound_report_json_fields() {
        let report = BoundReport::compute(&params(1000, 10, 0.1, 0.9));
        let json = serde_json::to_value(report).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for field in ["chi", "eps1", "eps2", "eps_tilde", "delta", "confidence", "p_error_bound"] {
            assert!(keys.contains(&field), "{field}");
        }
        assert_eq!(keys.len(), 7);
        assert!(report.is_consistent());
    }

    proptest! {
        #[test]
        fn estimator_is_order_independent(records in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let s = MeasurementSetting::ALL[5];
            let to = |b: bool| if b { Outcome::Plus } else { Outcome::Minus };
            let mut forward = CorrelationLedger::new();
            records.iter().for_each(|&(a, b)| forward.record(s, to(a), to(b)));
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut other = CorrelationLedger::new();
            shuffled.iter().for_each(|&(a, b)| other.record(s, to(a), to(b)));
            prop_assert!((forward.estimator(s) - other.estimator(s)).abs() < 1e-12);
            prop_assert!(forward.estimator(s).abs() <= 1.0);
        }

        #[test]
        fn epsilon_bounds_are_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (epsilon_bounds(lo), epsilon_bounds(hi));
            prop_assert!(x.eps1 <= y.eps1 && x.eps2 <= y.eps2 && x.eps_tilde <= y.eps_tilde);
        }

        #[test]
        fn confidence_strictly_decreasing(a in 0.0f64..0.4999, gap in 1e-6f64..0.1) {
            let b = (a + gap).min(0.49999);
            prop_assume!(b > a);
            prop_assert!(confidence(b).value < confidence(a).value);
        }
    }
}
