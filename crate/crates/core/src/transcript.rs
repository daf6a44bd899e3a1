//! Message log between Alice and the provers, stored as JSON lines.
//!
//! Each line is `{"round": .., "direction": .., "payload": {..}}`. Rounds are
//! non-decreasing per direction; a phase-one round carries several messages
//! on the same channel (pair request, then measurement instruction).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mbqc::AngleOctant;
use crate::qstate::Outcome;
use crate::selftest::Axis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: round {round} after round {previous} on {direction:?}")]
    RoundOrder { line: usize, round: u64, previous: u64, direction: Direction },
    #[error("line {line}: {payload} cannot travel {direction:?}")]
    WrongDirection { line: usize, payload: &'static str, direction: Direction },
    #[error("line {line}: {payload} is out of phase")]
    OutOfPhase { line: usize, payload: &'static str },
    #[error("line {line}: result bit {bit} is not 0 or 1")]
    BadBit { line: usize, bit: u8 },
}

pub type Result<T> = std::result::Result<T, TranscriptError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToBob,
    FromBob,
    ToDevice,
    FromDevice,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::ToBob, Direction::FromBob, Direction::ToDevice, Direction::FromDevice];

    fn index(self) -> usize {
        self as usize
    }
}

/// Measurement basis named in an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// One of the self-test observables.
    Axis(Axis),
    /// `{|+_θ⟩, |−_θ⟩}`.
    Equatorial(AngleOctant),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    RequestPair,
    PairDelivered,
    MeasureInstruction { basis: Basis },
    OutcomeReport { outcome: Outcome },
    AngleInstruction { delta: AngleOctant },
    ResultReport { bit: u8 },
    AbortNotice,
    AcceptNotice,
}

impl Payload {
    pub fn name(&self) -> &'static str {
        match self {
            Payload::RequestPair => "request_pair",
            Payload::PairDelivered => "pair_delivered",
            Payload::MeasureInstruction { .. } => "measure_instruction",
            Payload::OutcomeReport { .. } => "outcome_report",
            Payload::AngleInstruction { .. } => "angle_instruction",
            Payload::ResultReport { .. } => "result_report",
            Payload::AbortNotice => "abort_notice",
            Payload::AcceptNotice => "accept_notice",
        }
    }

    fn allowed(&self, direction: Direction) -> bool {
        use Direction::*;
        match self {
            Payload::RequestPair | Payload::AngleInstruction { .. } | Payload::AbortNotice | Payload::AcceptNotice => {
                direction == ToBob
            }
            Payload::PairDelivered | Payload::ResultReport { .. } => direction == FromBob,
            Payload::MeasureInstruction { .. } => matches!(direction, ToBob | ToDevice),
            Payload::OutcomeReport { .. } => matches!(direction, FromBob | FromDevice),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    pub round: u64,
    pub direction: Direction,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    SelfTest,
    Compute,
    Closed,
}

/// Append-only, validated message log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    messages: Vec<Message>,
    last_round: [Option<u64>; 4],
    phase: Phase,
}

impl Default for Transcript {
    fn default() -> Self {
        Self { messages: Vec::new(), last_round: [None; 4], phase: Phase::SelfTest }
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Appends a message after checking ordering, direction and phase.
    pub fn push(&mut self, message: Message) -> Result<()> {
        let line = self.messages.len() + 1;
        let name = message.payload.name();
        if !message.payload.allowed(message.direction) {
            return Err(TranscriptError::WrongDirection { line, payload: name, direction: message.direction });
        }
        if let Payload::ResultReport { bit } = message.payload {
            if bit > 1 {
                return Err(TranscriptError::BadBit { line, bit });
            }
        }
        let slot = &mut self.last_round[message.direction.index()];
        if let Some(previous) = *slot {
            if message.round < previous {
                return Err(TranscriptError::RoundOrder {
                    line,
                    round: message.round,
                    previous,
                    direction: message.direction,
                });
            }
        }
        let next = match (self.phase, message.payload) {
            (Phase::SelfTest, Payload::AcceptNotice) => Phase::Compute,
            (Phase::SelfTest | Phase::Compute, Payload::AbortNotice) => Phase::Closed,
            (Phase::Compute, Payload::AcceptNotice) => Phase::Closed,
            (
                Phase::SelfTest,
                Payload::RequestPair
                | Payload::PairDelivered
                | Payload::MeasureInstruction { .. }
                | Payload::OutcomeReport { .. },
            ) => Phase::SelfTest,
            (Phase::Compute, Payload::AngleInstruction { .. } | Payload::ResultReport { .. }) => Phase::Compute,
            _ => return Err(TranscriptError::OutOfPhase { line, payload: name }),
        };
        *slot = Some(message.round);
        self.phase = next;
        self.messages.push(message);
        Ok(())
    }

    pub fn record(&mut self, round: u64, direction: Direction, payload: Payload) -> Result<()> {
        self.push(Message { round, direction, payload })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m).expect("messages serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates JSON lines; blank lines are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut transcript = Transcript::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let message: Message = serde_json::from_str(line)
                .map_err(|e| TranscriptError::Parse { line: i + 1, message: e.to_string() })?;
            transcript.push(message)?;
        }
        Ok(transcript)
    }

    /// Lower-case hex SHA-256 of [`Transcript::to_jsonl`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_jsonl().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Messages on one channel.
    pub fn channel(&self, direction: Direction) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.direction == direction)
    }

    pub fn directions() -> [Direction; 4] {
        Direction::ALL
    }
}
