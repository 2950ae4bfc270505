//! Shared vocabulary: invocations, timestamped commands, slots and ledgers.
//!
//! All time values are integer microseconds. Scores produced by the point
//! system live in the same unit so they can stand in for timestamps.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sro::Signature;

/// Integer microseconds.
pub type Micros = i64;

/// Index of a simulated node, `0..n`.
pub type NodeId = usize;

pub const MICROS_PER_MS: Micros = 1_000;

pub fn ms(value: i64) -> Micros {
    value * MICROS_PER_MS
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("median needs a non-empty odd-length list, got {0} entries")]
    MedianArity(usize),
    #[error("expected {expected} node timestamps (2f+1), got {got}")]
    TimestampCount { expected: usize, got: usize },
    #[error("duplicate feature name `{0}`")]
    DuplicateFeature(String),
    #[error("formula has {weights} feature weights but input has {features} features")]
    WeightMismatch { weights: usize, features: usize },
    #[error("invocation time must be non-negative, got {0}")]
    NegativeInvokeTime(Micros),
    #[error("noise {noise} outside [0, {bound})")]
    NoiseOutOfRange { noise: Micros, bound: Micros },
    #[error("timestamp arithmetic overflow")]
    Overflow,
    #[error("slot interval must be positive, got {0}")]
    SlotInterval(Micros),
}

/// Hash-sized opaque command identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CommandId(pub [u8; 32]);

impl CommandId {
    /// Derives an identifier from a human-readable label.
    pub fn from_label(label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"bercow/command-id/");
        hasher.update(label.as_bytes());
        CommandId(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CommandId({self})")
    }
}

impl fmt::Display for CommandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// The relevant features of an invocation, fed to a [`ScoreFormula`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInput {
    invocation_time: Micros,
    extra_features: Vec<(String, f64)>,
}

impl ScoreInput {
    pub fn new(
        invocation_time: Micros,
        extra_features: Vec<(String, f64)>,
    ) -> Result<Self, DomainError> {
        let mut seen = BTreeSet::new();
        for (name, _) in &extra_features {
            if !seen.insert(name.as_str()) {
                return Err(DomainError::DuplicateFeature(name.clone()));
            }
        }
        Ok(ScoreInput {
            invocation_time,
            extra_features,
        })
    }

    pub fn time_only(invocation_time: Micros) -> Self {
        ScoreInput {
            invocation_time,
            extra_features: Vec::new(),
        }
    }

    pub fn invocation_time(&self) -> Micros {
        self.invocation_time
    }

    pub fn extra_features(&self) -> &[(String, f64)] {
        &self.extra_features
    }
}

/// How relevant features are folded into a single score.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreFormula {
    TimeOnly,
    /// `time_weight * time + sum(feature_weights[i] * feature[i])`, rounded.
    LinearCombination {
        time_weight: f64,
        feature_weights: Vec<f64>,
    },
}

/// Point-system score of a single entry. Depends only on `input`.
pub fn score(input: &ScoreInput, formula: &ScoreFormula) -> Result<i64, DomainError> {
    match formula {
        ScoreFormula::TimeOnly => Ok(input.invocation_time),
        ScoreFormula::LinearCombination {
            time_weight,
            feature_weights,
        } => {
            if feature_weights.len() != input.extra_features.len() {
                return Err(DomainError::WeightMismatch {
                    weights: feature_weights.len(),
                    features: input.extra_features.len(),
                });
            }
            let total = time_weight * input.invocation_time as f64
                + feature_weights
                    .iter()
                    .zip(&input.extra_features)
                    .map(|(w, (_, v))| w * v)
                    .sum::<f64>();
            let rounded = total.round();
            if !rounded.is_finite() || rounded.abs() >= i64::MAX as f64 {
                return Err(DomainError::Overflow);
            }
            Ok(rounded as i64)
        }
    }
}

/// A client command together with its relevant features.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command_id: CommandId,
    pub payload: Vec<u8>,
    pub invoke_time: Micros,
    pub relevant_features: ScoreInput,
}

impl Invocation {
    pub fn new(
        command_id: CommandId,
        payload: Vec<u8>,
        invoke_time: Micros,
        relevant_features: ScoreInput,
    ) -> Result<Self, DomainError> {
        if invoke_time < 0 {
            return Err(DomainError::NegativeInvokeTime(invoke_time));
        }
        Ok(Invocation {
            command_id,
            payload,
            invoke_time,
            relevant_features,
        })
    }

    /// Time-only invocation identified by `label`.
    pub fn labeled(label: &str, invoke_time: Micros) -> Result<Self, DomainError> {
        Invocation::new(
            CommandId::from_label(label),
            label.as_bytes().to_vec(),
            invoke_time,
            ScoreInput::time_only(invoke_time),
        )
    }
}

/// The `(f+1)`-th smallest of `2f+1` timestamps.
pub fn median_timestamp(ts: &[Micros]) -> Result<Micros, DomainError> {
    if ts.is_empty() || ts.len().is_multiple_of(2) {
        return Err(DomainError::MedianArity(ts.len()));
    }
    let mut buf = ts.to_vec();
    let mid = buf.len() / 2;
    let (_, median, _) = buf.select_nth_unstable(mid);
    Ok(*median)
}

/// A command with the per-node timestamps it was assigned, its median
/// (assigned) timestamp and the noise that shifts it to the modified timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampedCommand {
    invocation: Invocation,
    node_timestamps: Vec<(NodeId, Micros)>,
    assigned_ts: Micros,
    noise: Micros,
    modified_ts: Micros,
}

impl TimestampedCommand {
    /// Assigns the median of exactly `2f+1` node timestamps, with zero noise.
    pub fn assign(
        invocation: Invocation,
        node_timestamps: Vec<(NodeId, Micros)>,
        f: usize,
    ) -> Result<Self, DomainError> {
        if node_timestamps.len() != 2 * f + 1 {
            return Err(DomainError::TimestampCount {
                expected: 2 * f + 1,
                got: node_timestamps.len(),
            });
        }
        let values: Vec<Micros> = node_timestamps.iter().map(|&(_, t)| t).collect();
        let assigned_ts = median_timestamp(&values)?;
        Ok(TimestampedCommand {
            invocation,
            node_timestamps,
            assigned_ts,
            noise: 0,
            modified_ts: assigned_ts,
        })
    }

    pub fn with_noise(mut self, noise: Micros, noise_bound: Micros) -> Result<Self, DomainError> {
        // A zero bound means "no noise" (the median-only policy).
        let in_range = if noise_bound == 0 {
            noise == 0
        } else {
            (0..noise_bound).contains(&noise)
        };
        if !in_range {
            return Err(DomainError::NoiseOutOfRange {
                noise,
                bound: noise_bound,
            });
        }
        self.modified_ts = self
            .assigned_ts
            .checked_add(noise)
            .ok_or(DomainError::Overflow)?;
        self.noise = noise;
        Ok(self)
    }

    pub fn invocation(&self) -> &Invocation {
        &self.invocation
    }

    pub fn command_id(&self) -> CommandId {
        self.invocation.command_id
    }

    pub fn node_timestamps(&self) -> &[(NodeId, Micros)] {
        &self.node_timestamps
    }

    pub fn assigned_ts(&self) -> Micros {
        self.assigned_ts
    }

    pub fn noise(&self) -> Micros {
        self.noise
    }

    pub fn modified_ts(&self) -> Micros {
        self.modified_ts
    }
}

/// Per-seed tie-break key for a command. Independent of arrival order.
pub fn tie_key(slot_seed: &[u8; 32], id: &CommandId) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(slot_seed);
    hasher.update(id.0);
    hasher.finalize().into()
}

/// Orders two commands whose modified timestamps coincide.
pub fn tie_break(a: &CommandId, b: &CommandId, slot_seed: &[u8; 32]) -> Ordering {
    if a == b {
        return Ordering::Equal;
    }
    tie_key(slot_seed, a)
        .cmp(&tie_key(slot_seed, b))
        .then_with(|| a.cmp(b))
}

/// Full ledger comparator: modified timestamp first, then the seeded tie-break.
pub fn ledger_cmp(
    a: (&CommandId, Micros),
    b: (&CommandId, Micros),
    slot_seed: &[u8; 32],
) -> Ordering {
    a.1.cmp(&b.1).then_with(|| tie_break(a.0, b.0, slot_seed))
}

/// Maps slot indices to consecutive, contiguous time intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSchedule {
    origin: Micros,
    interval: Micros,
}

impl SlotSchedule {
    pub fn new(origin: Micros, interval: Micros) -> Result<Self, DomainError> {
        if interval <= 0 {
            return Err(DomainError::SlotInterval(interval));
        }
        Ok(SlotSchedule { origin, interval })
    }

    pub fn origin(&self) -> Micros {
        self.origin
    }

    pub fn interval(&self) -> Micros {
        self.interval
    }

    /// Slot containing `ts`, or `None` if `ts` precedes the first slot.
    pub fn slot_of(&self, ts: Micros) -> Option<u64> {
        if ts < self.origin {
            None
        } else {
            Some(((ts - self.origin) / self.interval) as u64)
        }
    }

    pub fn bounds(&self, k: u64) -> (Micros, Micros) {
        let start = self.origin + k as Micros * self.interval;
        (start, start + self.interval)
    }
}

/// A decided consensus slot.
#[derive(Debug, Clone)]
pub struct Slot {
    pub index: u64,
    pub interval_start: Micros,
    pub interval_end: Micros,
    pub decided_commands: Vec<TimestampedCommand>,
    pub decision_certificate: Vec<Signature>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub command_id: CommandId,
    pub assigned_ts: Micros,
    pub noise: Micros,
    /// Sort key of the entry. For the median-based policies this is
    /// `assigned_ts + noise`; baselines store their own ordering indicator.
    pub modified_ts: Micros,
    /// Slot (or leader term) in which the entry became stable.
    pub emitted_in: u64,
}

/// The stable output order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
    pub stable_watermark: Micros,
}

impl Ledger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn order(&self) -> Vec<CommandId> {
        self.entries.iter().map(|e| e.command_id).collect()
    }

    pub fn position(&self, id: &CommandId) -> Option<usize> {
        self.entries.iter().position(|e| &e.command_id == id)
    }

    /// `Some(true)` if `a` is ordered before `b`; `None` if either is missing.
    pub fn precedes(&self, a: &CommandId, b: &CommandId) -> Option<bool> {
        Some(self.position(a)? < self.position(b)?)
    }
}
