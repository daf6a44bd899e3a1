//! Command-line experiments: analytic bounds, resource scaling, and seeded
//! Monte Carlo runs of the protocol with CSV or JSON reports.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for usage
//! and configuration errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::mbqc::TrapVerdict;
use crate::protocol::{self, ProtocolError, ResolvedPattern, SessionConfig, SessionOutcome, StrategySpec};
use crate::rng::{party_stream, trial_seed, Party};
use crate::selftest::{
    resource_estimate, BoundReport, ConfidenceFormula, ResourceTarget, SecurityParams, SelfTestVerdict,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "dibqc", version, about = "Delegated blind verifiable quantum computation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Session config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Experiment seed; defaults to the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Bob delivers depolarized pairs with this noise.
    Noise,
    /// Bob's bases are miscalibrated by this angle.
    Eta,
    /// Run the config's strategies unchanged.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepPhase {
    One,
    Full,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic bounds for one parameter set.
    Bounds {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        n_tilde: u64,
        #[arg(long)]
        delta_frac: f64,
        #[arg(long, default_value_t = 1)]
        c: u32,
        /// Target confidence p.
        #[arg(long, default_value_t = 0.9)]
        p: f64,
        /// Assume ideal preparation (χ = 0).
        #[arg(long)]
        ideal: bool,
        /// Use the per-qubit confidence exponents.
        #[arg(long)]
        per_qubit: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Pair count N(m) and N/(m⁴ ln m) for a list of m.
    Scaling {
        #[arg(long, value_delimiter = ',', default_values_t = vec![8u64, 16, 32, 64, 128])]
        m: Vec<u64>,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon_scale: f64,
        #[arg(long, default_value_t = 1)]
        c: u32,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Phase one only.
    SelftestRun(RunArgs),
    /// Both phases.
    FullRun(RunArgs),
    /// Vary one strategy parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = SweepParam::None)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SweepPhase::Full)]
        phase: SweepPhase,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Fixed-column table plus summary values and pass/fail checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub command: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<(&'static str, Cell)>,
    pub checks: Vec<Check>,
}

impl Report {
    fn new(command: &str, columns: &[&'static str]) -> Self {
        Self { command: command.into(), columns: columns.to_vec(), rows: Vec::new(), summary: Vec::new(), checks: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn summary_value(&self, name: &str) -> Option<&Cell> {
        self.summary.iter().find(|(k, _)| *k == name).map(|(_, v)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .zip(r)
                    .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("cells serialize")))
                    .collect()
            })
            .collect();
        let summary: serde_json::Map<String, serde_json::Value> = self
            .summary
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::to_value(v).expect("cells serialize")))
            .collect();
        let value = serde_json::json!({
            "command": self.command,
            "rows": rows,
            "summary": summary,
            "checks": self.checks,
            "passed": self.passed(),
        });
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Summary and check lines for the terminal.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k} = {}", v.csv());
        }
        for c in &self.checks {
            let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

/// Bound report for one parameter set; ε must be positive.
pub fn cmd_bounds(params: &SecurityParams, ideal: bool) -> Result<Report> {
    params.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
    let b = if ideal { BoundReport::ideal(params) } else { BoundReport::compute(params) };
    let mut report =
        Report::new("bounds", &["chi", "eps1", "eps2", "eps_tilde", "delta", "confidence", "p_error_bound"]);
    report.rows.push(
        [b.chi, b.eps1, b.eps2, b.eps_tilde, b.delta, b.confidence, b.p_error_bound].into_iter().map(Cell::Float).collect(),
    );
    report.checks.push(Check::new("finite", b.is_consistent(), "all fields finite and in range".into()));
    Ok(report)
}

/// `N(m)/(m⁴ ln max(m, 2))`.
pub fn scaling_ratio(m: u64, total_pairs: u64) -> f64 {
    let mf = m as f64;
    total_pairs as f64 / (mf.powi(4) * mf.max(2.0).ln())
}

/// Largest relative change of the ratio column between consecutive rows
/// tolerated by [`cmd_scaling`].
pub const SCALING_BAND: f64 = 0.25;

pub fn cmd_scaling(ms: &[u64], target: ResourceTarget) -> Result<Report> {
    if ms.is_empty() {
        return Err(HarnessError::Usage("m list is empty".into()));
    }
    if ms.contains(&0) || ms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Usage("m list must be positive and strictly ascending".into()));
    }
    if !(target.confidence > 0.0 && target.confidence < 1.0) || !(target.epsilon_scale > 0.0) || target.c == 0 {
        return Err(HarnessError::Usage("need 0 < confidence < 1, epsilon_scale > 0, c ≥ 1".into()));
    }
    let mut report = Report::new("scaling", &["m", "epsilon", "n_tilde", "total_pairs", "ratio"]);
    let mut ratios = Vec::new();
    for &m in ms {
        let e = resource_estimate(m, target);
        let ratio = scaling_ratio(m, e.total_pairs);
        ratios.push(ratio);
        report.rows.push(vec![m.into(), e.epsilon.into(), e.n_tilde.into(), e.total_pairs.into(), ratio.into()]);
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let step = ratios.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).fold(0.0, f64::max);
    report.summary.push(("ratio_max_over_min", (max / min).into()));
    report.summary.push(("max_consecutive_change", step.into()));
    report.checks.push(Check::new(
        "ratio_bounded",
        ratios.iter().all(|r| r.is_finite() && *r > 0.0),
        format!("ratio in [{min:.4}, {max:.4}]"),
    ));
    report.checks.push(Check::new(
        "ratio_slowly_varying",
        step < SCALING_BAND,
        format!("largest consecutive change {:.1}% (band {:.0}%)", 100.0 * step, 100.0 * SCALING_BAND),
    ));
    Ok(report)
}

fn load_config(path: &PathBuf) -> Result<SessionConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    SessionConfig::parse(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))
}

fn is_honest(config: &SessionConfig) -> bool {
    config.alice_device == StrategySpec::Honest && config.bob == StrategySpec::Honest
}

/// Standard error of a proportion.
fn stderr(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Per-trial phase-one result: verdict label, reason, maximum deviation.
fn selftest_trial(config: &SessionConfig, seed: u64) -> Result<(String, String, f64)> {
    let kinds = vec![crate::mbqc::Role::Computation; config.params.m as usize];
    let mut device = config.alice_device.build(Party::AliceDevice, seed, kinds.len())?;
    let mut bob = config.bob.build(Party::Bob, seed, kinds.len())?;
    let mut alice = party_stream(seed, Party::Alice);
    let mut nature = party_stream(seed, Party::Nature);
    match protocol::run_phase_one(&config.params, &kinds, device.as_mut(), bob.as_mut(), &mut alice, &mut nature, None) {
        Ok(r) => {
            let (verdict, reason) = match &r.verdict {
                SelfTestVerdict::Accept => ("accept".to_string(), String::new()),
                SelfTestVerdict::Abort(reason) => ("abort".to_string(), reason.to_string()),
            };
            Ok((verdict, reason, r.ledger.max_deviation()))
        }
        Err(ProtocolError::Violation { round, message }) => {
            Ok(("violation".into(), format!("round {round}: {message}"), f64::NAN))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_selftest_run(config: &SessionConfig, seed: u64, trials: u64) -> Result<Report> {
    config.params.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
    let results: Vec<(u64, u64, (String, String, f64))> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            selftest_trial(config, s).map(|r| (t, s, r))
        })
        .collect::<Result<_>>()?;
    let mut report = Report::new("selftest-run", &["trial", "seed", "trials", "verdict", "reason", "max_deviation"]);
    let mut accepted = 0u64;
    for (t, s, (verdict, reason, dev)) in results {
        accepted += (verdict == "accept") as u64;
        report.rows.push(vec![t.into(), s.into(), trials.into(), verdict.into(), reason.into(), dev.into()]);
    }
    let rate = accepted as f64 / trials as f64;
    report.summary.push(("seed", seed.into()));
    report.summary.push(("trials", trials.into()));
    report.summary.push(("acceptance_rate", rate.into()));
    report.summary.push(("confidence", BoundReport::compute(&config.params).confidence.into()));
    if is_honest(config) {
        report.checks.push(Check::new("honest_acceptance", accepted == trials, format!("{accepted}/{trials} accepted")));
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq)]
struct RunStats {
    trials: u64,
    phase_one_aborts: u64,
    reached_phase_two: u64,
    accepted: u64,
    accepted_incorrect: u64,
}

impl RunStats {
    fn add(&mut self, o: &Option<SessionOutcome>) {
        self.trials += 1;
        match o {
            None => self.phase_one_aborts += 1,
            Some(o) => {
                if !o.phase_one.is_accept() {
                    self.phase_one_aborts += 1;
                }
                if o.phase_two.is_some() {
                    self.reached_phase_two += 1;
                }
                if o.accepted() {
                    self.accepted += 1;
                }
                if o.accepted_incorrect() {
                    self.accepted_incorrect += 1;
                }
            }
        }
    }

    fn rate(&self, k: u64) -> f64 {
        k as f64 / self.trials as f64
    }
}

/// `None` for a protocol violation (counted as a phase-one abort).
fn full_trial(config: &SessionConfig, resolved: &ResolvedPattern, seed: u64) -> Result<Option<SessionOutcome>> {
    match protocol::run_resolved(config, resolved, seed, None) {
        Ok(o) => Ok(Some(o)),
        Err(ProtocolError::Violation { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn run_trials(config: &SessionConfig, resolved: &ResolvedPattern, seed: u64, trials: u64) -> Result<Vec<(u64, u64, Option<SessionOutcome>)>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            full_trial(config, resolved, s).map(|o| (t, s, o))
        })
        .collect()
}

fn bound_checks(report: &mut Report, config: &SessionConfig, stats: &RunStats) {
    let bounds = BoundReport::compute(&config.params);
    let incorrect = stats.rate(stats.accepted_incorrect);
    let tolerance = 3.0 * stderr(bounds.p_error_bound, stats.trials);
    report.checks.push(Check::new(
        "accepted_incorrect_within_bound",
        incorrect <= bounds.p_error_bound + tolerance,
        format!("rate {incorrect:.4} vs bound {:.4} (+3σ {tolerance:.4})", bounds.p_error_bound),
    ));
    if is_honest(config) {
        report.checks.push(Check::new(
            "honest_completeness",
            stats.accepted == stats.trials && stats.accepted_incorrect == 0,
            format!("{}/{} accepted, {} incorrect", stats.accepted, stats.trials, stats.accepted_incorrect),
        ));
    }
    if config.bob == StrategySpec::FlipAll {
        let caught = stats.reached_phase_two - (stats.accepted);
        report.checks.push(Check::new(
            "flip_all_detected",
            stats.accepted == 0,
            format!("{caught}/{} phase-two runs rejected", stats.reached_phase_two),
        ));
    }
}

pub fn cmd_full_run(config: &SessionConfig, seed: u64, trials: u64) -> Result<Report> {
    let resolved = config.resolve_pattern().map_err(|e| HarnessError::Usage(e.to_string()))?;
    let results = run_trials(config, &resolved, seed, trials)?;
    let mut report = Report::new(
        "full-run",
        &["trial", "seed", "trials", "phase_one", "phase_two", "accepted", "correct", "max_deviation"],
    );
    let mut stats = RunStats::default();
    for (t, s, o) in &results {
        stats.add(o);
        let (p1, p2, acc, correct, dev) = match o {
            None => ("violation", "", false, String::new(), f64::NAN),
            Some(o) => (
                if o.phase_one.is_accept() { "accept" } else { "abort" },
                match o.phase_two {
                    None => "",
                    Some(TrapVerdict::Accept) => "accept",
                    Some(TrapVerdict::Reject { .. }) => "reject",
                },
                o.accepted(),
                o.correct.map(|c| c.to_string()).unwrap_or_default(),
                o.max_deviation,
            ),
        };
        report.rows.push(vec![
            (*t).into(),
            (*s).into(),
            trials.into(),
            p1.into(),
            p2.into(),
            acc.into(),
            correct.into(),
            dev.into(),
        ]);
    }
    let bounds = BoundReport::compute(&config.params);
    report.summary.push(("seed", seed.into()));
    report.summary.push(("trials", trials.into()));
    report.summary.push(("acceptance_rate", stats.rate(stats.accepted).into()));
    report.summary.push(("detection_rate", (1.0 - stats.rate(stats.accepted)).into()));
    report.summary.push(("accepted_incorrect_rate", stats.rate(stats.accepted_incorrect).into()));
    report.summary.push(("p_error_bound", bounds.p_error_bound.into()));
    report.summary.push(("p_error_bound_ideal", BoundReport::ideal(&config.params).p_error_bound.into()));
    bound_checks(&mut report, config, &stats);
    Ok(report)
}

fn with_param(config: &SessionConfig, param: SweepParam, value: f64) -> SessionConfig {
    let mut c = config.clone();
    match param {
        SweepParam::Noise => c.bob = StrategySpec::Depolarizing { noise: value },
        SweepParam::Eta => c.bob = StrategySpec::Miscalibrated { eta: value },
        SweepParam::None => {}
    }
    c
}

pub fn cmd_sweep(config: &SessionConfig, param: SweepParam, values: &[f64], phase: SweepPhase, seed: u64, trials: u64) -> Result<Report> {
    let values: Vec<f64> = match param {
        SweepParam::None => vec![f64::NAN],
        _ if values.is_empty() => return Err(HarnessError::Usage("--values is required for this --param".into())),
        _ => values.to_vec(),
    };
    if values.iter().any(|v| v.is_infinite() || (param == SweepParam::Noise && !(0.0..=1.0).contains(v))) {
        return Err(HarnessError::Usage("sweep values out of range".into()));
    }
    let resolved = match phase {
        SweepPhase::Full => Some(config.resolve_pattern().map_err(|e| HarnessError::Usage(e.to_string()))?),
        SweepPhase::One => None,
    };
    let mut report = Report::new(
        "sweep",
        &["value", "seed", "trials", "abort_rate", "abort_stderr", "detection_rate", "accepted_incorrect_rate"],
    );
    let mut aborts = Vec::new();
    let mut all_stats = Vec::new();
    for &v in &values {
        let c = with_param(config, param, v);
        let mut stats = RunStats::default();
        match &resolved {
            Some(r) => {
                for (_, _, o) in run_trials(&c, r, seed, trials)? {
                    stats.add(&o);
                }
            }
            None => {
                let results: Vec<String> = (0..trials)
                    .into_par_iter()
                    .map(|t| selftest_trial(&c, trial_seed(seed, t)).map(|r| r.0))
                    .collect::<Result<_>>()?;
                for verdict in results {
                    stats.trials += 1;
                    if verdict == "accept" {
                        stats.accepted += 1;
                    } else {
                        stats.phase_one_aborts += 1;
                    }
                }
            }
        }
        let abort = stats.rate(stats.phase_one_aborts);
        aborts.push(abort);
        report.rows.push(vec![
            v.into(),
            seed.into(),
            trials.into(),
            abort.into(),
            stderr(abort, trials).into(),
            (1.0 - stats.rate(stats.accepted)).into(),
            stats.rate(stats.accepted_incorrect).into(),
        ]);
        all_stats.push((c, stats));
    }
    if param != SweepParam::None && values.windows(2).all(|w| w[0] <= w[1]) {
        let mut worst = 0.0f64;
        let ok = aborts.windows(2).all(|w| {
            let sigma = (stderr(w[0], trials).powi(2) + stderr(w[1], trials).powi(2)).sqrt();
            worst = worst.max(w[0] - w[1] - 3.0 * sigma);
            w[1] >= w[0] - 3.0 * sigma
        });
        report.checks.push(Check::new("abort_rate_monotone", ok, format!("largest drop beyond 3σ: {:.4}", worst.max(0.0))));
    }
    if phase == SweepPhase::Full {
        for (c, stats) in &all_stats {
            if c.bob == StrategySpec::FlipAll {
                report.checks.push(Check::new(
                    "flip_all_detected",
                    stats.accepted == 0,
                    format!("{} of {} accepted", stats.accepted, stats.trials),
                ));
            }
        }
    }
    report.summary.push(("seed", seed.into()));
    report.summary.push(("trials", trials.into()));
    Ok(report)
}

fn emit(report: &Report, output: &OutputArgs) -> Result<()> {
    let text = report.render(output.format);
    match &output.out {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
            eprint!("{}", report.digest());
        }
        None => {
            print!("{text}");
            if output.format == Format::Csv {
                eprint!("{}", report.digest());
            }
        }
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<Report> {
    let (report, output) = match cli.command {
        Command::Bounds { m, epsilon, n_tilde, delta_frac, c, p, ideal, per_qubit, output } => {
            let params = SecurityParams {
                p,
                epsilon,
                delta_frac,
                c,
                m,
                n_tilde,
                confidence_formula: if per_qubit { ConfidenceFormula::PerQubit } else { ConfidenceFormula::PerSession },
            };
            (cmd_bounds(&params, ideal)?, output)
        }
        Command::Scaling { m, confidence, epsilon_scale, c, output } => {
            (cmd_scaling(&m, ResourceTarget { confidence, epsilon_scale, c })?, output)
        }
        Command::SelftestRun(args) => {
            let config = load_config(&args.config)?;
            let seed = args.seed.unwrap_or(config.seed);
            (cmd_selftest_run(&config, seed, args.trials)?, args.output)
        }
        Command::FullRun(args) => {
            let config = load_config(&args.config)?;
            let seed = args.seed.unwrap_or(config.seed);
            (cmd_full_run(&config, seed, args.trials)?, args.output)
        }
        Command::Sweep { run, param, values, phase } => {
            let config = load_config(&run.config)?;
            let seed = run.seed.unwrap_or(config.seed);
            (cmd_sweep(&config, param, &values, phase, seed, run.trials)?, run.output)
        }
    };
    emit(&report, &output)?;
    Ok(report)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match execute(cli) {
        Ok(report) if report.passed() => EXIT_PASS,
        Ok(_) => EXIT_VIOLATION,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
