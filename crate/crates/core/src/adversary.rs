//! Adversarial control over assigned timestamps.
//!
//! In the interval model the adversary picks each command's assigned
//! timestamp anywhere in `[T, T + delta_net]`; with at most `f` faulty
//! reports that is exactly the range a median of `2f + 1` can be pushed to.
//! [`private_relay_placement`] is the mechanism-level counterpart, producing
//! concrete per-node reports for colluding nodes.

use rand::Rng;
use thiserror::Error;

use crate::consensus::TimestampOverrides;
use crate::domain::{CommandId, Micros, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("noise bound {delta_noise} must exceed the network bound {delta_net}")]
    NoiseTooSmall {
        delta_net: Micros,
        delta_noise: Micros,
    },
    #[error("{colluders} colluders exceed the fault bound f = {f}")]
    TooManyColluders { colluders: usize, f: usize },
    #[error("need at least {min} commands, got {got}")]
    TooFewCommands { min: usize, got: usize },
    #[error("network bound must be non-negative, got {0}")]
    NegativeBound(Micros),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Favored {
    First,
    Second,
}

/// Best pair assignment for the adversary: the disfavored command gets
/// `T + delta_net`, the favored one `T`.
pub fn assign_worst_case_pair(t: Micros, delta_net: Micros, favored: Favored) -> (Micros, Micros) {
    match favored {
        Favored::First => (t, t + delta_net),
        Favored::Second => (t + delta_net, t),
    }
}

/// Adaptive strategy maximizing the chance of `target` order. Each command
/// after the first is placed at the previous command's modified timestamp,
/// capped at `T + delta_net`. `reveal` returns the modified timestamp for
/// a command once its assigned timestamp is fixed.
pub fn assign_worst_case_permutation<F>(
    t: Micros,
    delta_net: Micros,
    delta_noise: Micros,
    target: &[CommandId],
    mut reveal: F,
) -> Result<Vec<Micros>, AdversaryError>
where
    F: FnMut(&CommandId, Micros) -> Micros,
{
    if delta_noise <= delta_net {
        return Err(AdversaryError::NoiseTooSmall {
            delta_net,
            delta_noise,
        });
    }
    let cap = t + delta_net;
    let mut out = Vec::with_capacity(target.len());
    let mut next = t;
    for id in target {
        out.push(next);
        let modified = reveal(id, next);
        next = modified.clamp(t, cap);
    }
    Ok(out)
}

/// Assignment minimizing the chance of the target order: first and middle
/// commands at `T + delta_net`, the last at `T`.
pub fn assign_lower_bound_strategy(t: Micros, delta_net: Micros, n: usize) -> Vec<Micros> {
    match n {
        0 => Vec::new(),
        1 => vec![t],
        _ => {
            let mut v = vec![t + delta_net; n];
            v[n - 1] = t;
            v
        }
    }
}

/// Non-adaptive assignment favoring the target order by spreading the
/// commands evenly over `[T, T + delta_net]`.
pub fn assign_spread(t: Micros, delta_net: Micros, n: usize) -> Vec<Micros> {
    if n <= 1 {
        return vec![t; n];
    }
    (0..n)
        .map(|j| t + delta_net * j as Micros / (n as Micros - 1))
        .collect()
}

/// Reports for colluding nodes that squeeze the victim between the
/// attacker's buy (just below the victim's timestamp) and sell (just above).
pub fn private_relay_placement(
    victim_ts: Micros,
    attacker: (CommandId, CommandId),
    colluders: &[NodeId],
    f: usize,
) -> Result<TimestampOverrides, AdversaryError> {
    if colluders.len() > f {
        return Err(AdversaryError::TooManyColluders {
            colluders: colluders.len(),
            f,
        });
    }
    let mut o = TimestampOverrides::default();
    for &node in colluders {
        o.set(attacker.0, node, victim_ts - 1);
        o.set(attacker.1, node, victim_ts + 1);
    }
    Ok(o)
}

/// Interval-model strategies over `n` simultaneous commands whose target
/// order is their index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryStrategy {
    /// Every command gets `T`.
    Honest,
    WorstCasePair(Favored),
    /// Adaptive upper-bound strategy.
    WorstCasePermutation,
    LowerBound,
    /// Spread evenly, chosen without seeing any noise.
    Spread,
    /// Explicit offsets from `T`.
    Fixed(Vec<Micros>),
}

impl AdversaryStrategy {
    /// Samples modified timestamps for one trial, with `T = 0` and noise
    /// uniform on `[0, delta_noise)`.
    pub fn play<R: Rng + ?Sized>(
        &self,
        n: usize,
        delta_net: Micros,
        delta_noise: Micros,
        rng: &mut R,
    ) -> Vec<Micros> {
        let mut noise = |ats: Micros| ats + rng.gen_range(0..delta_noise.max(1));
        match self {
            AdversaryStrategy::Honest => (0..n).map(|_| noise(0)).collect(),
            AdversaryStrategy::WorstCasePair(fav) => {
                let (a, b) = assign_worst_case_pair(0, delta_net, *fav);
                vec![noise(a), noise(b)]
            }
            AdversaryStrategy::WorstCasePermutation => {
                let cap = delta_net;
                let mut out = Vec::with_capacity(n);
                let mut next = 0;
                for _ in 0..n {
                    let m = noise(next);
                    out.push(m);
                    next = m.min(cap);
                }
                out
            }
            AdversaryStrategy::LowerBound => assign_lower_bound_strategy(0, delta_net, n)
                .into_iter()
                .map(noise)
                .collect(),
            AdversaryStrategy::Spread => assign_spread(0, delta_net, n)
                .into_iter()
                .map(noise)
                .collect(),
            AdversaryStrategy::Fixed(ats) => ats.iter().map(|&a| noise(a)).collect(),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, AdversaryStrategy::WorstCasePermutation)
    }

    /// Assigned timestamps for non-adaptive strategies, offsets from `T`.
    pub fn fixed_assignment(&self, n: usize, delta_net: Micros) -> Option<Vec<Micros>> {
        match self {
            AdversaryStrategy::Honest => Some(vec![0; n]),
            AdversaryStrategy::WorstCasePair(fav) => {
                let (a, b) = assign_worst_case_pair(0, delta_net, *fav);
                Some(vec![a, b])
            }
            AdversaryStrategy::WorstCasePermutation => None,
            AdversaryStrategy::LowerBound => Some(assign_lower_bound_strategy(0, delta_net, n)),
            AdversaryStrategy::Spread => Some(assign_spread(0, delta_net, n)),
            AdversaryStrategy::Fixed(v) => Some(v.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_assignment() {
        assert_eq!(
            assign_worst_case_pair(0, 300_000, Favored::Second),
            (300_000, 0)
        );
        assert_eq!(
            assign_worst_case_pair(7, 300_000, Favored::First),
            (7, 300_007)
        );
        assert_eq!(assign_worst_case_pair(5, 0, Favored::Second), (5, 5));
    }

    #[test]
    fn lower_bound_layout() {
        assert_eq!(assign_lower_bound_strategy(10, 5, 1), vec![10]);
        assert_eq!(assign_lower_bound_strategy(10, 5, 2), vec![15, 10]);
        assert_eq!(assign_lower_bound_strategy(10, 5, 4), vec![15, 15, 15, 10]);
        assert_eq!(assign_lower_bound_strategy(10, 0, 3), vec![10; 3]);
    }

    #[test]
    fn adaptive_follows_observed_timestamps() {
        let ids: Vec<CommandId> = ["a", "b", "c", "d"].map(CommandId::from_label).to_vec();
        let noises = [100, 50, 400, 10];
        let mut i = 0;
        let ats = assign_worst_case_permutation(1000, 300, 600, &ids, |_, a| {
            let m = a + noises[i];
            i += 1;
            m
        })
        .unwrap();
        // 1000 -> 1100 -> 1150 -> capped at 1300.
        assert_eq!(ats, vec![1000, 1100, 1150, 1300]);
        assert_eq!(
            assign_worst_case_permutation(0, 300, 300, &ids, |_, a| a),
            Err(AdversaryError::NoiseTooSmall {
                delta_net: 300,
                delta_noise: 300
            })
        );
        assert_eq!(
            assign_worst_case_permutation(0, 3, 6, &ids[..1], |_, a| a).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn relay_respects_fault_bound() {
        let a = (CommandId::from_label("buy"), CommandId::from_label("sell"));
        assert!(private_relay_placement(100, a, &[], 1).unwrap().is_empty());
        let o = private_relay_placement(100, a, &[3, 4], 2).unwrap();
        assert_eq!(o.get(&a.0, 3), Some(99));
        assert_eq!(o.get(&a.1, 4), Some(101));
        assert_eq!(
            private_relay_placement(100, a, &[1, 2, 3], 2),
            Err(AdversaryError::TooManyColluders { colluders: 3, f: 2 })
        );
    }

    #[test]
    fn all_strategies_stay_in_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let strategies = [
            AdversaryStrategy::Honest,
            AdversaryStrategy::WorstCasePermutation,
            AdversaryStrategy::LowerBound,
            AdversaryStrategy::Spread,
        ];
        for s in &strategies {
            for _ in 0..200 {
                let m = s.play(4, 300, 1000, &mut rng);
                assert_eq!(m.len(), 4);
                // Modified = ats + noise with ats in [0, 300] and noise < 1000.
                assert!(m.iter().all(|&x| (0..1300).contains(&x)));
            }
        }
        assert_eq!(assign_spread(0, 300, 4), vec![0, 100, 200, 300]);
    }
}
