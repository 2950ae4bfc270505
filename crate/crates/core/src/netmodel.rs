//! City-level latency topology and the per-node timestamp model.
//!
//! Topology files are line oriented:
//!
//! ```text
//! # comment
//! intra 1
//! city Washington 15
//! city Tokyo 2
//! delay Washington Tokyo 150
//! ```
//!
//! Delays are one-way milliseconds (decimals allowed). A pair given in only
//! one direction is used for both.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Micros, NodeId, MICROS_PER_MS};

const BUNDLED_ETHEREUM80: &str = include_str!("../data/ethereum80.topo");

/// File name of the bundled 80-node topology.
pub const ETHEREUM80: &str = "ethereum80.topo";

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read topology {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology declares no cities")]
    Empty,
    #[error("topology has no nodes")]
    NoNodes,
    #[error("unknown city `{0}`")]
    UnknownCity(String),
    #[error("no delay given between `{0}` and `{1}`")]
    MissingDelay(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityTopology {
    cities: Vec<(String, usize)>,
    /// One-way delay in µs, `delays[from][to]`.
    delays: Vec<Vec<Micros>>,
    intra: Micros,
    node_city: Vec<usize>,
}

fn parse_ms(tok: &str, line: usize) -> Result<Micros, TopologyError> {
    let v: f64 = tok.parse().map_err(|_| TopologyError::Parse {
        line,
        msg: format!("`{tok}` is not a number"),
    })?;
    if !v.is_finite() || v < 0.0 {
        return Err(TopologyError::Parse {
            line,
            msg: format!("negative or invalid latency `{tok}`"),
        });
    }
    Ok((v * MICROS_PER_MS as f64).round() as Micros)
}

impl CityTopology {
    /// Builds a topology from explicit parts. `delays` lists one-way delays in
    /// µs; a pair present in one direction only is mirrored.
    pub fn new(
        cities: Vec<(String, usize)>,
        intra: Micros,
        delays: &[(String, String, Micros)],
    ) -> Result<Self, TopologyError> {
        if cities.is_empty() {
            return Err(TopologyError::Empty);
        }
        let index: HashMap<&str, usize> = cities
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.as_str(), i))
            .collect();
        let c = cities.len();
        let mut given: Vec<Vec<Option<Micros>>> = vec![vec![None; c]; c];
        for (a, b, d) in delays {
            let ia = *index
                .get(a.as_str())
                .ok_or_else(|| TopologyError::UnknownCity(a.clone()))?;
            let ib = *index
                .get(b.as_str())
                .ok_or_else(|| TopologyError::UnknownCity(b.clone()))?;
            given[ia][ib] = Some(*d);
        }
        let mut matrix = vec![vec![0; c]; c];
        for i in 0..c {
            for j in 0..c {
                matrix[i][j] = if i == j {
                    intra
                } else {
                    match (given[i][j], given[j][i]) {
                        (Some(x), Some(y)) => {
                            if x != y && i < j {
                                log::warn!(
                                    "asymmetric delay {} <-> {}: {} vs {} us",
                                    cities[i].0,
                                    cities[j].0,
                                    x,
                                    y
                                );
                            }
                            x
                        }
                        (Some(x), None) | (None, Some(x)) => x,
                        (None, None) => {
                            return Err(TopologyError::MissingDelay(
                                cities[i].0.clone(),
                                cities[j].0.clone(),
                            ))
                        }
                    }
                };
            }
        }
        let node_city: Vec<usize> = cities
            .iter()
            .enumerate()
            .flat_map(|(i, &(_, count))| std::iter::repeat_n(i, count))
            .collect();
        if node_city.is_empty() {
            return Err(TopologyError::NoNodes);
        }
        Ok(CityTopology {
            cities,
            delays: matrix,
            intra,
            node_city,
        })
    }

    /// All nodes in one city.
    pub fn single_city(name: &str, nodes: usize, intra: Micros) -> Result<Self, TopologyError> {
        Self::new(vec![(name.to_string(), nodes)], intra, &[])
    }

    pub fn num_nodes(&self) -> usize {
        self.node_city.len()
    }

    pub fn cities(&self) -> &[(String, usize)] {
        &self.cities
    }

    pub fn intra_city(&self) -> Micros {
        self.intra
    }

    pub fn city_index(&self, name: &str) -> Result<usize, TopologyError> {
        self.cities
            .iter()
            .position(|(c, _)| c == name)
            .ok_or_else(|| TopologyError::UnknownCity(name.to_string()))
    }

    pub fn city_name(&self, city: usize) -> &str {
        &self.cities[city].0
    }

    /// City hosting `node`. Nodes are numbered in declaration order.
    pub fn city_of(&self, node: NodeId) -> usize {
        self.node_city[node]
    }

    pub fn delay(&self, from_city: usize, to_city: usize) -> Micros {
        self.delays[from_city][to_city]
    }

    pub fn delay_to_node(&self, from_city: usize, node: NodeId) -> Micros {
        self.delays[from_city][self.node_city[node]]
    }

    /// Largest base delay over all city pairs.
    pub fn max_delay(&self) -> Micros {
        self.delays
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Nodes ordered by base delay from `city`, ties by node id.
    pub fn nodes_by_distance(&self, city: usize) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = (0..self.num_nodes()).collect();
        nodes.sort_by_key(|&n| (self.delay_to_node(city, n), n));
        nodes
    }
}

pub fn parse_topology(text: &str) -> Result<CityTopology, TopologyError> {
    let mut cities = Vec::new();
    let mut delays = Vec::new();
    let mut intra = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let bad = |msg: &str| TopologyError::Parse {
            line,
            msg: msg.to_string(),
        };
        match toks.as_slice() {
            ["intra", ms] => intra = parse_ms(ms, line)?,
            ["city", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| bad("node count must be a non-negative integer"))?;
                if cities.iter().any(|(c, _): &(String, usize)| c == name) {
                    return Err(bad("duplicate city"));
                }
                cities.push((name.to_string(), count));
            }
            ["delay", a, b, ms] => delays.push((a.to_string(), b.to_string(), parse_ms(ms, line)?)),
            _ => return Err(bad("expected `city`, `delay` or `intra` directive")),
        }
    }
    CityTopology::new(cities, intra, &delays)
}

pub fn load_topology(path: &Path) -> Result<CityTopology, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_topology(&text)
}

/// The bundled 80-node topology, compiled into the binary.
pub fn bundled_ethereum80() -> CityTopology {
    parse_topology(BUNDLED_ETHEREUM80).expect("bundled topology parses")
}

/// Loads `path`, falling back to the bundled copy for its bare file name.
pub fn resolve_topology(path: &Path) -> Result<CityTopology, TopologyError> {
    if !path.exists() && path.file_name().and_then(|s| s.to_str()) == Some(ETHEREUM80) {
        return Ok(bundled_ethereum80());
    }
    load_topology(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Jitter {
    #[default]
    None,
    /// Uniform integer offset in `[-max, max]` µs per observation.
    Uniform { max: Micros },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayModel {
    pub jitter: Jitter,
    /// Bound on each node's fixed clock offset, in µs.
    pub clock_drift_max: Micros,
    pub delta_net: Micros,
    /// Seed of the per-node clock offsets.
    pub drift_seed: u64,
}

impl DelayModel {
    pub fn fixed(delta_net: Micros) -> Self {
        DelayModel {
            jitter: Jitter::None,
            clock_drift_max: 0,
            delta_net,
            drift_seed: 0,
        }
    }

    /// Fixed clock offset of `node` in `[-clock_drift_max, clock_drift_max]`.
    pub fn node_drift(&self, node: NodeId) -> Micros {
        if self.clock_drift_max == 0 {
            return 0;
        }
        let mut h = Sha256::new();
        h.update(b"bercow/drift/");
        h.update(self.drift_seed.to_be_bytes());
        h.update((node as u64).to_be_bytes());
        let d = h.finalize();
        let x = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
        let span = 2 * self.clock_drift_max as u64 + 1;
        (x % span) as Micros - self.clock_drift_max
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    /// Receive timestamp of every node, indexed by node id.
    pub timestamps: Vec<Micros>,
    /// Raw timestamps that fell outside `[T, T + delta_net]` and were clamped.
    pub clamp_violations: usize,
}

/// Per-node receive timestamps for an invocation made at `invoke_time` from
/// `origin_city`.
pub fn observe<R: Rng + ?Sized>(
    invoke_time: Micros,
    origin_city: usize,
    topology: &CityTopology,
    model: &DelayModel,
    rng: &mut R,
) -> Observation {
    let lo = invoke_time;
    let hi = invoke_time + model.delta_net;
    let mut clamp_violations = 0;
    let timestamps = (0..topology.num_nodes())
        .map(|node| {
            let jitter = match model.jitter {
                Jitter::None => 0,
                Jitter::Uniform { max } if max > 0 => rng.gen_range(-max..=max),
                Jitter::Uniform { .. } => 0,
            };
            let raw = invoke_time
                + topology.delay_to_node(origin_city, node)
                + jitter
                + model.node_drift(node);
            if raw < lo || raw > hi {
                clamp_violations += 1;
            }
            raw.clamp(lo, hi)
        })
        .collect();
    Observation {
        timestamps,
        clamp_violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ms;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_counts_and_extremes() {
        let t = bundled_ethereum80();
        assert_eq!(t.num_nodes(), 80);
        assert_eq!(t.max_delay(), ms(296));
        let canberra = t.city_index("Canberra").unwrap();
        let oulu = t.city_index("Oulu").unwrap();
        assert_eq!(t.delay(canberra, oulu), ms(296));
        assert_eq!(t.delay(oulu, canberra), ms(296));
        let us: usize = ["Washington", "SanFrancisco", "Austin"]
            .iter()
            .map(|c| t.cities()[t.city_index(c).unwrap()].1)
            .sum();
        assert_eq!(us, 40);
    }

    #[test]
    fn bundled_matrix_is_symmetric_with_intra_diagonal() {
        let t = bundled_ethereum80();
        let c = t.cities().len();
        for i in 0..c {
            assert_eq!(t.delay(i, i), t.intra_city());
            for j in 0..c {
                assert_eq!(t.delay(i, j), t.delay(j, i));
                assert!(t.delay(i, j) >= 0);
            }
        }
    }

    #[test]
    fn observations_stay_within_delta_net() {
        let t = bundled_ethereum80();
        let model = DelayModel {
            jitter: Jitter::Uniform { max: ms(3) },
            clock_drift_max: 500,
            delta_net: ms(300),
            drift_seed: 7,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for city in 0..t.cities().len() {
            let obs = observe(ms(1000), city, &t, &model, &mut rng);
            assert_eq!(obs.timestamps.len(), 80);
            assert!(obs
                .timestamps
                .iter()
                .all(|&ts| (ms(1000)..=ms(1300)).contains(&ts)));
        }
    }

    #[test]
    fn zero_latency_gives_invocation_time() {
        let t = CityTopology::single_city("Here", 4, 0).unwrap();
        let obs = observe(
            123,
            0,
            &t,
            &DelayModel::fixed(ms(300)),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(obs.timestamps, vec![123; 4]);
        assert_eq!(obs.clamp_violations, 0);
    }

    #[test]
    fn clamping_is_counted() {
        let t = parse_topology("city A 1\ncity B 2\ndelay A B 500").unwrap();
        let obs = observe(
            0,
            0,
            &t,
            &DelayModel::fixed(ms(300)),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(obs.timestamps, vec![0, ms(300), ms(300)]);
        assert_eq!(obs.clamp_violations, 2);
    }

    #[test]
    fn observe_is_deterministic_per_seed() {
        let t = bundled_ethereum80();
        let model = DelayModel {
            jitter: Jitter::Uniform { max: ms(10) },
            ..DelayModel::fixed(ms(300))
        };
        let a = observe(0, 3, &t, &model, &mut ChaCha8Rng::seed_from_u64(9));
        let b = observe(0, 3, &t, &model, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn single_city_uses_intra_everywhere() {
        let t = parse_topology("intra 2.5\ncity Solo 5").unwrap();
        assert_eq!(t.max_delay(), 2500);
        assert!((0..5).all(|n| t.delay_to_node(0, n) == 2500));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_topology(""), Err(TopologyError::Empty)));
        assert!(matches!(
            parse_topology("city A 1\ncity B 1\ndelay A B -3"),
            Err(TopologyError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_topology("city A 1\ncity B 1"),
            Err(TopologyError::MissingDelay(..))
        ));
        assert!(matches!(
            parse_topology("city A 1\ndelay A C 3"),
            Err(TopologyError::UnknownCity(c)) if c == "C"
        ));
        assert!(matches!(
            parse_topology("city A 1\nroute A A 3"),
            Err(TopologyError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_topology("city A 0"),
            Err(TopologyError::NoNodes)
        ));
    }

    #[test]
    fn asymmetric_pairs_keep_direction() {
        let t = parse_topology("city A 1\ncity B 1\ndelay A B 10\ndelay B A 12").unwrap();
        assert_eq!(t.delay(0, 1), ms(10));
        assert_eq!(t.delay(1, 0), ms(12));
    }

    #[test]
    fn drift_is_bounded() {
        let model = DelayModel {
            clock_drift_max: 250,
            drift_seed: 3,
            ..DelayModel::fixed(ms(300))
        };
        let drifts: Vec<Micros> = (0..200).map(|n| model.node_drift(n)).collect();
        assert!(drifts.iter().all(|d| d.abs() <= 250));
        assert!(drifts.iter().any(|&d| d != drifts[0]));
    }
}
