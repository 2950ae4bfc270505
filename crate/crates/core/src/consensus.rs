//! Idealized slot-by-slot agreement with pluggable ordering policies.
//!
//! Agreement itself is a perfect primitive: a slot decides as soon as it is
//! reached, with a certificate of `n - f` signatures over its index. The
//! policies differ only in how the decided commands are ordered:
//!
//! * [`OrderingPolicy::PompeMedian`] sorts by the median of `2f + 1` node
//!   timestamps.
//! * [`OrderingPolicy::BercowNoise`] adds noise derived from the slot's
//!   secret random value, revealed only after the certificate exists.
//! * [`OrderingPolicy::LeaderRotation`] and
//!   [`OrderingPolicy::ReceiveOrderAllCorrect`] are the baselines.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

use crate::domain::{
    ledger_cmp, tie_key, CommandId, DomainError, Invocation, Ledger, LedgerEntry, Micros, NodeId,
    Slot, SlotSchedule, TimestampedCommand,
};
use crate::netmodel::{observe, CityTopology, DelayModel};
use crate::sro::{RandomValue, RevealRequest, SroError, SroHandle};

/// Default slot length: 1.5 s.
pub const DEFAULT_SLOT_INTERVAL: Micros = 1_500_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation: {0}")]
    InvalidConfig(String),
    #[error("command {0} has an assigned timestamp before the first slot")]
    CommandBeforeFirstSlot(CommandId),
    #[error("reveal for slot {slot} failed: {source}")]
    Sro {
        slot: u64,
        #[source]
        source: SroError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingPolicy {
    PompeMedian,
    BercowNoise { delta_noise: Micros },
    LeaderRotation { rotation_period: Micros },
    ReceiveOrderAllCorrect,
}

impl OrderingPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            OrderingPolicy::PompeMedian => "pompe",
            OrderingPolicy::BercowNoise { .. } => "bercow",
            OrderingPolicy::LeaderRotation { .. } => "leader",
            OrderingPolicy::ReceiveOrderAllCorrect => "receive",
        }
    }
}

/// An invocation and the city of the client that sent it.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub invocation: Invocation,
    pub origin_city: usize,
}

/// Timestamps that Byzantine nodes report instead of their honest ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TimestampOverrides {
    per_command: HashMap<CommandId, HashMap<NodeId, Micros>>,
}

impl TimestampOverrides {
    pub fn set(&mut self, cmd: CommandId, node: NodeId, ts: Micros) {
        self.per_command.entry(cmd).or_default().insert(node, ts);
    }

    pub fn get(&self, cmd: &CommandId, node: NodeId) -> Option<Micros> {
        self.per_command.get(cmd)?.get(&node).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.per_command.values().all(|m| m.is_empty())
    }

    /// Nodes that report at least one overridden timestamp.
    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.per_command
            .values()
            .flat_map(|m| m.keys().copied())
            .collect()
    }
}

/// Per-command timestamp data gathered from the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    /// Honest receive time at every node.
    pub receive: Vec<Micros>,
    /// The `2f + 1` reported timestamps used for the median.
    pub quorum: Vec<(NodeId, Micros)>,
    pub clamp_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ledger: Ledger,
    /// Decided slots (slot policies) in index order.
    pub slots: Vec<Slot>,
    pub clamp_violations: usize,
}

/// Noise in `[0, delta_noise)` for `id` under the slot value `r`.
pub fn derive_noise(r: &RandomValue, id: &CommandId, delta_noise: Micros) -> Micros {
    if delta_noise <= 0 {
        return 0;
    }
    let mut h = Sha512::new();
    h.update(r.as_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let x = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
    ((x as u128 * delta_noise as u128) >> 64) as Micros
}

/// Pairs `(earlier, later)` by invocation time that the ledger inverts even
/// though they were invoked more than `delta` apart.
pub fn linearizability_violations(
    ledger: &Ledger,
    invoke_times: &HashMap<CommandId, Micros>,
    delta: Micros,
) -> Vec<(CommandId, CommandId)> {
    let mut out = Vec::new();
    for (i, a) in ledger.entries.iter().enumerate() {
        for b in &ledger.entries[i + 1..] {
            let (Some(&ta), Some(&tb)) = (
                invoke_times.get(&a.command_id),
                invoke_times.get(&b.command_id),
            ) else {
                continue;
            };
            if ta - tb > delta {
                out.push((b.command_id, a.command_id));
            }
        }
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A complete scenario: who invokes what, where, and under which policy.
#[derive(Debug, Clone)]
pub struct SimulationRun<'a> {
    pub topology: &'a CityTopology,
    pub policy: OrderingPolicy,
    pub delay_model: DelayModel,
    pub schedule: SlotSchedule,
    pub f: usize,
    pub submissions: Vec<Submission>,
    pub sro: &'a SroHandle,
    pub rng_seed: u64,
    pub overrides: TimestampOverrides,
    /// Nodes that sign slot certificates; defaults to the first `n - f`.
    pub certificate_signers: Option<Vec<NodeId>>,
}

impl<'a> SimulationRun<'a> {
    pub fn new(
        topology: &'a CityTopology,
        sro: &'a SroHandle,
        policy: OrderingPolicy,
        delta_net: Micros,
    ) -> Self {
        SimulationRun {
            topology,
            policy,
            delay_model: DelayModel::fixed(delta_net),
            schedule: SlotSchedule::new(0, DEFAULT_SLOT_INTERVAL).expect("positive interval"),
            f: sro.config().f,
            submissions: Vec::new(),
            sro,
            rng_seed: 0,
            overrides: TimestampOverrides::default(),
            certificate_signers: None,
        }
    }

    pub fn n(&self) -> usize {
        self.topology.num_nodes()
    }

    /// Tie seed for the baselines, which have no slot value.
    pub fn baseline_tie_seed(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"bercow/baseline-tie/");
        h.update(self.rng_seed.to_be_bytes());
        h.finalize().into()
    }

    fn validate(&self) -> Result<(), SimError> {
        let n = self.n();
        if n < 3 * self.f + 1 {
            return Err(SimError::InvalidConfig(format!(
                "{n} nodes cannot tolerate f = {}",
                self.f
            )));
        }
        if self.sro.config().n != n || self.sro.config().f != self.f {
            return Err(SimError::InvalidConfig(format!(
                "oracle configured for n = {}, f = {} but run has n = {n}, f = {}",
                self.sro.config().n,
                self.sro.config().f,
                self.f
            )));
        }
        if let OrderingPolicy::BercowNoise { delta_noise } = self.policy {
            if delta_noise <= 0 {
                return Err(SimError::InvalidConfig(
                    "noise bound must be positive".into(),
                ));
            }
        }
        if let OrderingPolicy::LeaderRotation { rotation_period } = self.policy {
            if rotation_period <= 0 {
                return Err(SimError::InvalidConfig(
                    "rotation period must be positive".into(),
                ));
            }
        }
        let cities = self.topology.cities().len();
        if let Some(s) = self.submissions.iter().find(|s| s.origin_city >= cities) {
            return Err(SimError::InvalidConfig(format!(
                "submission {} has unknown origin city {}",
                s.invocation.command_id, s.origin_city
            )));
        }
        Ok(())
    }

    /// Receive times and the `2f + 1` timestamps the quorum reports for
    /// submission `index`. The quorum is the earliest honest receivers;
    /// Byzantine members may substitute their own values.
    pub fn collect(&self, index: usize) -> Collected {
        let sub = &self.submissions[index];
        let mut rng = stream_rng(self.rng_seed, index as u64);
        let obs = observe(
            sub.invocation.invoke_time,
            sub.origin_city,
            self.topology,
            &self.delay_model,
            &mut rng,
        );
        let mut by_arrival: Vec<NodeId> = (0..obs.timestamps.len()).collect();
        by_arrival.sort_by_key(|&n| (obs.timestamps[n], n));
        let id = sub.invocation.command_id;
        let quorum = by_arrival[..2 * self.f + 1]
            .iter()
            .map(|&n| (n, self.overrides.get(&id, n).unwrap_or(obs.timestamps[n])))
            .collect();
        Collected {
            receive: obs.timestamps,
            quorum,
            clamp_violations: obs.clamp_violations,
        }
    }

    pub fn run(&self) -> Result<RunOutcome, SimError> {
        self.validate()?;
        match self.policy {
            OrderingPolicy::PompeMedian => self.run_slotted(0),
            OrderingPolicy::BercowNoise { delta_noise } => self.run_slotted(delta_noise),
            OrderingPolicy::LeaderRotation { rotation_period } => {
                Ok(self.order_leader_rotation(rotation_period))
            }
            OrderingPolicy::ReceiveOrderAllCorrect => Ok(self.order_receive_all_correct()),
        }
    }

    fn reveal_slot(&self, k: u64) -> Result<(RandomValue, Vec<crate::sro::Signature>), SimError> {
        let certificate = match &self.certificate_signers {
            Some(nodes) => self.sro.keys().certificate(k, nodes.iter().copied()),
            None => self.sro.certificate(k),
        };
        let sro_err = |source| SimError::Sro { slot: k, source };
        let req = RevealRequest::new(k, certificate.clone()).map_err(sro_err)?;
        let r = self.sro.reveal(&req).map_err(sro_err)?;
        Ok((r, certificate))
    }

    fn run_slotted(&self, delta_noise: Micros) -> Result<RunOutcome, SimError> {
        let mut clamp_violations = 0;
        let mut by_slot: std::collections::BTreeMap<u64, Vec<TimestampedCommand>> =
            Default::default();
        for (i, sub) in self.submissions.iter().enumerate() {
            let c = self.collect(i);
            clamp_violations += c.clamp_violations;
            let cmd = TimestampedCommand::assign(sub.invocation.clone(), c.quorum, self.f)?;
            let k = self
                .schedule
                .slot_of(cmd.assigned_ts())
                .ok_or(SimError::CommandBeforeFirstSlot(sub.invocation.command_id))?;
            by_slot.entry(k).or_default().push(cmd);
        }

        let mut ledger = Ledger::default();
        let mut slots = Vec::new();
        let mut pending: Vec<TimestampedCommand> = Vec::new();
        let Some(&first) = by_slot.keys().next() else {
            return Ok(RunOutcome {
                ledger,
                slots,
                clamp_violations,
            });
        };
        let mut k = first;
        while !by_slot.is_empty() || !pending.is_empty() {
            let (start, end) = self.schedule.bounds(k);
            let decided = by_slot.remove(&k).unwrap_or_default();
            let emits_now = pending.iter().any(|c| c.modified_ts() < end);
            if decided.is_empty() && !emits_now {
                // Nothing to order and nothing becomes stable: no reveal needed.
                k += 1;
                continue;
            }
            let (r, certificate) = self.reveal_slot(k)?;
            let mut decided_commands = Vec::with_capacity(decided.len());
            for cmd in decided {
                let noise = derive_noise(&r, &cmd.command_id(), delta_noise);
                let cmd = cmd.with_noise(noise, delta_noise)?;
                decided_commands.push(cmd.clone());
                pending.push(cmd);
            }
            let seed = r.seed32();
            let (mut ready, rest): (Vec<_>, Vec<_>) =
                pending.into_iter().partition(|c| c.modified_ts() < end);
            pending = rest;
            ready.sort_by(|a, b| {
                ledger_cmp(
                    (&a.command_id(), a.modified_ts()),
                    (&b.command_id(), b.modified_ts()),
                    &seed,
                )
            });
            ledger.entries.extend(ready.iter().map(|c| LedgerEntry {
                command_id: c.command_id(),
                assigned_ts: c.assigned_ts(),
                noise: c.noise(),
                modified_ts: c.modified_ts(),
                emitted_in: k,
            }));
            ledger.stable_watermark = end;
            slots.push(Slot {
                index: k,
                interval_start: start,
                interval_end: end,
                decided_commands,
                decision_certificate: certificate,
            });
            k += 1;
        }
        Ok(RunOutcome {
            ledger,
            slots,
            clamp_violations,
        })
    }

    /// Rotating-leader baseline. Every node leads for `period` in round-robin
    /// order starting from a random phase; at the end of its term the leader
    /// proposes every pending command it has received, sorted by the
    /// timestamp it assigns (its receive time, or its override if Byzantine).
    pub fn order_leader_rotation(&self, period: Micros) -> RunOutcome {
        let n = self.n();
        let collected: Vec<Collected> = (0..self.submissions.len())
            .map(|i| self.collect(i))
            .collect();
        let clamp_violations = collected.iter().map(|c| c.clamp_violations).sum();
        let mut ledger = Ledger::default();
        if self.submissions.is_empty() {
            return RunOutcome {
                ledger,
                slots: Vec::new(),
                clamp_violations,
            };
        }
        let cycle = period * n as Micros;
        let mut phase_rng = stream_rng(self.rng_seed, u64::MAX);
        let phase = phase_rng.gen_range(0..cycle);
        let tie_seed = self.baseline_tie_seed();
        let earliest = self
            .submissions
            .iter()
            .map(|s| s.invocation.invoke_time)
            .min()
            .unwrap_or(0);
        // Term j covers [origin + j*period, origin + (j+1)*period) and is led
        // by node j mod n.
        let origin = earliest - phase;
        let mut pending: Vec<usize> = (0..self.submissions.len()).collect();
        let mut term: u64 = 0;
        while !pending.is_empty() {
            let leader = (term % n as u64) as NodeId;
            let end = origin + (term as Micros + 1) * period;
            let view = |i: usize| {
                let id = self.submissions[i].invocation.command_id;
                self.overrides
                    .get(&id, leader)
                    .unwrap_or(collected[i].receive[leader])
            };
            let (mut batch, rest): (Vec<usize>, Vec<usize>) = pending
                .into_iter()
                .partition(|&i| collected[i].receive[leader] < end);
            pending = rest;
            batch.sort_by(|&a, &b| {
                let ia = self.submissions[a].invocation.command_id;
                let ib = self.submissions[b].invocation.command_id;
                ledger_cmp((&ia, view(a)), (&ib, view(b)), &tie_seed)
            });
            ledger
                .entries
                .extend(batch.into_iter().map(|i| LedgerEntry {
                    command_id: self.submissions[i].invocation.command_id,
                    assigned_ts: collected[i].receive[leader],
                    noise: 0,
                    modified_ts: view(i),
                    emitted_in: term,
                }));
            ledger.stable_watermark = end;
            term += 1;
        }
        RunOutcome {
            ledger,
            slots: Vec::new(),
            clamp_violations,
        }
    }

    /// Receive-order baseline: `a` precedes `b` whenever every correct node
    /// received `a` strictly first. Unrelated commands are ordered by their
    /// median receive time across correct nodes, then by the tie-break hash.
    pub fn order_receive_all_correct(&self) -> RunOutcome {
        let byzantine = self.overrides.nodes();
        let correct: Vec<NodeId> = (0..self.n()).filter(|v| !byzantine.contains(v)).collect();
        let collected: Vec<Collected> = (0..self.submissions.len())
            .map(|i| self.collect(i))
            .collect();
        let clamp_violations = collected.iter().map(|c| c.clamp_violations).sum();
        let receive: Vec<Vec<Micros>> = collected
            .iter()
            .map(|c| correct.iter().map(|&v| c.receive[v]).collect())
            .collect();
        let ids: Vec<CommandId> = self
            .submissions
            .iter()
            .map(|s| s.invocation.command_id)
            .collect();
        let order = receive_order(&receive, &ids, &self.baseline_tie_seed());
        let ledger = Ledger {
            entries: order
                .into_iter()
                .map(|i| {
                    let m = lower_median(&receive[i]);
                    LedgerEntry {
                        command_id: ids[i],
                        assigned_ts: m,
                        noise: 0,
                        modified_ts: m,
                        emitted_in: 0,
                    }
                })
                .collect(),
            stable_watermark: 0,
        };
        RunOutcome {
            ledger,
            slots: Vec::new(),
            clamp_violations,
        }
    }
}

fn lower_median(xs: &[Micros]) -> Micros {
    if xs.is_empty() {
        return 0;
    }
    let mut v = xs.to_vec();
    let mid = (v.len() - 1) / 2;
    *v.select_nth_unstable(mid).1
}

/// `true` if every observer saw `a` strictly before `b`.
pub fn all_receive_before(a: &[Micros], b: &[Micros]) -> bool {
    !a.is_empty() && a.iter().zip(b).all(|(x, y)| x < y)
}

/// Topological order of the all-observers precedence relation.
/// `receive[i][v]` is the time observer `v` received command `i`.
pub fn receive_order(
    receive: &[Vec<Micros>],
    ids: &[CommandId],
    tie_seed: &[u8; 32],
) -> Vec<usize> {
    let m = receive.len();
    let mut indegree = vec![0usize; m];
    let mut succ = vec![Vec::new(); m];
    for a in 0..m {
        for b in 0..m {
            if a != b && all_receive_before(&receive[a], &receive[b]) {
                succ[a].push(b);
                indegree[b] += 1;
            }
        }
    }
    let key = |i: usize| (lower_median(&receive[i]), tie_key(tie_seed, &ids[i]));
    let mut ready: BTreeSet<(Micros, [u8; 32], usize)> = (0..m)
        .filter(|&i| indegree[i] == 0)
        .map(|i| {
            let (t, h) = key(i);
            (t, h, i)
        })
        .collect();
    let mut out = Vec::with_capacity(m);
    while let Some(first) = ready.pop_first() {
        let i = first.2;
        out.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                let (t, h) = key(j);
                ready.insert((t, h, j));
            }
        }
    }
    debug_assert_eq!(out.len(), m, "strict precedence is acyclic");
    out
}
