//! `key = value` experiment files.
//!
//! ```text
//! # Washington vs. Tokyo, both policies
//! scenario = geo_bias
//! topology = ethereum80.topo
//! policies = pompe, bercow
//! cities = Washington, Tokyo
//! trials = 10000
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use crate::consensus::DEFAULT_SLOT_INTERVAL;
use crate::domain::{ms, Micros};
use crate::netmodel::ETHEREUM80;

use super::HarnessError;

/// Environment variable naming the directory searched for relative
/// topology paths.
pub const TOPOLOGY_DIR_ENV: &str = "BERCOW_TOPOLOGY_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    GeoBias,
    TradeoffCurve,
    Sandwich,
    Liquidation,
    BoundsTable,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "geo_bias" => Scenario::GeoBias,
            "tradeoff_curve" => Scenario::TradeoffCurve,
            "sandwich" => Scenario::Sandwich,
            "liquidation" => Scenario::Liquidation,
            "bounds_table" => Scenario::BoundsTable,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::GeoBias => "geo_bias",
            Scenario::TradeoffCurve => "tradeoff_curve",
            Scenario::Sandwich => "sandwich",
            Scenario::Liquidation => "liquidation",
            Scenario::BoundsTable => "bounds_table",
        }
    }
}

/// A policy named in a config. `bercow@M` sets the noise bound to `M`
/// times `delta_net`; plain `bercow` uses the config's multiplier.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Pompe,
    Bercow { noise_mult: Option<f64> },
    Leader,
    Receive,
}

impl PolicySpec {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        let s = s.trim();
        Ok(match s {
            "pompe" => PolicySpec::Pompe,
            "bercow" => PolicySpec::Bercow { noise_mult: None },
            "leader" => PolicySpec::Leader,
            "receive" => PolicySpec::Receive,
            _ => match s.strip_prefix("bercow@") {
                Some(m) => {
                    let mult: f64 = m
                        .parse()
                        .map_err(|_| HarnessError::UnknownPolicy(s.to_string()))?;
                    if !(mult > 0.0 && mult.is_finite()) {
                        return Err(HarnessError::UnknownPolicy(s.to_string()));
                    }
                    PolicySpec::Bercow {
                        noise_mult: Some(mult),
                    }
                }
                None => return Err(HarnessError::UnknownPolicy(s.to_string())),
            },
        })
    }

    pub fn label(&self) -> String {
        match self {
            PolicySpec::Pompe => "pompe".into(),
            PolicySpec::Bercow { noise_mult: None } => "bercow".into(),
            PolicySpec::Bercow {
                noise_mult: Some(m),
            } => format!("bercow@{m}"),
            PolicySpec::Leader => "leader".into(),
            PolicySpec::Receive => "receive".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub topology: PathBuf,
    pub policies: Vec<PolicySpec>,
    pub delta_net: Micros,
    pub noise_mult: f64,
    pub trials: u64,
    pub seed: u64,
    pub cities: Vec<String>,
    pub gaps_ms: Vec<i64>,
    pub output: Option<PathBuf>,
    pub plot_output: Option<PathBuf>,
    pub faults: Option<usize>,
    pub slot_interval: Micros,
    pub rotation_period: Micros,
    pub victim_city: String,
    pub attacker_city: String,
    pub front_offset: Micros,
    pub back_offset: Micros,
    pub prize_usd: f64,
    pub n_values: Vec<usize>,
    pub alphas: Vec<String>,
    pub jitter: Micros,
    pub clock_drift: Micros,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            topology: PathBuf::from(ETHEREUM80),
            policies: vec![PolicySpec::Pompe, PolicySpec::Bercow { noise_mult: None }],
            delta_net: ms(300),
            noise_mult: 5.0,
            trials: 10_000,
            seed: 0,
            cities: vec!["Washington".into(), "Tokyo".into()],
            gaps_ms: Vec::new(),
            output: None,
            plot_output: None,
            faults: None,
            slot_interval: DEFAULT_SLOT_INTERVAL,
            rotation_period: DEFAULT_SLOT_INTERVAL,
            victim_city: "Munich".into(),
            attacker_city: "London".into(),
            front_offset: ms(5),
            back_offset: ms(60),
            prize_usd: 200_000.0,
            n_values: vec![2, 3, 4],
            alphas: vec!["0.1".into(), "0.2".into(), "0.5".into()],
            jitter: 0,
            clock_drift: 0,
        }
    }

    /// Noise bound for `policy`, or 0 for non-noise policies.
    pub fn delta_noise(&self, policy: &PolicySpec) -> Micros {
        match policy {
            PolicySpec::Bercow { noise_mult } => {
                (noise_mult.unwrap_or(self.noise_mult) * self.delta_net as f64).round() as Micros
            }
            _ => 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| HarnessError::Config {
                    line,
                    msg: "expected `key = value`".into(),
                })?;
            pairs.push((line, k.trim().to_string(), v.trim().to_string()));
        }
        let scenario = pairs
            .iter()
            .find(|(_, k, _)| k == "scenario")
            .ok_or_else(|| HarnessError::Config {
                line: 0,
                msg: "missing `scenario`".into(),
            })?;
        let scenario = Scenario::parse(&scenario.2).ok_or_else(|| HarnessError::Config {
            line: scenario.0,
            msg: format!("unknown scenario `{}`", scenario.2),
        })?;
        let mut cfg = ExperimentConfig::new(scenario);
        for (line, key, value) in &pairs {
            let line = *line;
            let bad = |msg: String| HarnessError::Config { line, msg };
            let int = |v: &str| -> Result<i64, HarnessError> {
                v.parse()
                    .map_err(|_| bad(format!("`{key}` expects an integer, got `{v}`")))
            };
            let float = |v: &str| -> Result<f64, HarnessError> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("`{key}` expects a number, got `{v}`")))
            };
            let list = |v: &str| -> Vec<String> {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match key.as_str() {
                "scenario" => {}
                "topology" => cfg.topology = PathBuf::from(value),
                "policies" => {
                    cfg.policies = list(value)
                        .iter()
                        .map(|p| PolicySpec::parse(p))
                        .collect::<Result<_, _>>()?
                }
                "delta_net_ms" => cfg.delta_net = ms(int(value)?),
                "delta_noise_mult" => cfg.noise_mult = float(value)?,
                "trials" => {
                    let t = int(value)?;
                    if t < 1 {
                        return Err(bad("`trials` must be at least 1".into()));
                    }
                    cfg.trials = t as u64
                }
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| {
                        bad(format!("`seed` expects an unsigned integer, got `{value}`"))
                    })?
                }
                "cities" => cfg.cities = list(value),
                "gaps_ms" => {
                    cfg.gaps_ms = list(value)
                        .iter()
                        .map(|g| int(g))
                        .collect::<Result<_, _>>()?;
                    if cfg.gaps_ms.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(bad("`gaps_ms` must be strictly increasing".into()));
                    }
                }
                "output" => cfg.output = Some(PathBuf::from(value)),
                "plot_output" => cfg.plot_output = Some(PathBuf::from(value)),
                "faults" => {
                    cfg.faults = Some(
                        int(value)?
                            .try_into()
                            .map_err(|_| bad("negative `faults`".into()))?,
                    )
                }
                "slot_interval_ms" => cfg.slot_interval = ms(int(value)?),
                "rotation_period_ms" => cfg.rotation_period = ms(int(value)?),
                "victim_city" => cfg.victim_city = value.clone(),
                "attacker_city" => cfg.attacker_city = value.clone(),
                "front_offset_ms" => cfg.front_offset = ms(int(value)?),
                "back_offset_ms" => cfg.back_offset = ms(int(value)?),
                "prize_usd" => cfg.prize_usd = float(value)?,
                "n_values" => {
                    cfg.n_values = list(value)
                        .iter()
                        .map(|n| int(n).map(|x| x.max(0) as usize))
                        .collect::<Result<_, _>>()?
                }
                "alphas" => cfg.alphas = list(value),
                "jitter_ms" => cfg.jitter = ms(int(value)?),
                "clock_drift_us" => cfg.clock_drift = int(value)?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        if cfg.delta_net < 0 {
            return Err(HarnessError::Config {
                line: 0,
                msg: "`delta_net_ms` must be non-negative".into(),
            });
        }
        if cfg.slot_interval <= 0 || cfg.rotation_period <= 0 {
            return Err(HarnessError::Config {
                line: 0,
                msg: "intervals must be positive".into(),
            });
        }
        Ok(cfg)
    }

    /// Reads a config; relative output paths are left as written.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Where to look for the topology: absolute paths as given, relative ones
    /// under the topology directory variable if set, else under `base`.
    pub fn topology_path(&self, base: Option<&Path>) -> PathBuf {
        if self.topology.is_absolute() {
            return self.topology.clone();
        }
        if let Some(dir) = std::env::var_os(TOPOLOGY_DIR_ENV) {
            return PathBuf::from(dir).join(&self.topology);
        }
        match base {
            Some(b) => b.join(&self.topology),
            None => self.topology.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = ExperimentConfig::parse(
            "# comment\nscenario = tradeoff_curve\npolicies = bercow@1, bercow@5, pompe\n\
             gaps_ms = 0, 100, 200\ntrials = 50\nseed = 9 # trailing\ncities = Tokyo,Washington\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::TradeoffCurve);
        assert_eq!(cfg.gaps_ms, vec![0, 100, 200]);
        assert_eq!(cfg.trials, 50);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.policies.len(), 3);
        assert_eq!(cfg.delta_noise(&cfg.policies[0]), ms(300));
        assert_eq!(cfg.delta_noise(&cfg.policies[1]), ms(1500));
        assert_eq!(cfg.delta_noise(&cfg.policies[2]), 0);
        assert_eq!(cfg.policies[1].label(), "bercow@5");
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            ("trials = 3", "missing"),
            ("scenario = nope", "unknown scenario"),
            ("scenario = geo_bias\ncolor = red", "unknown key"),
            ("scenario = geo_bias\ntrials = 0", "at least 1"),
            ("scenario = geo_bias\ngaps_ms = 5, 1", "increasing"),
            ("scenario = geo_bias\nthis line", "key = value"),
        ];
        for (text, needle) in cases {
            let err = ExperimentConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
        assert!(matches!(
            ExperimentConfig::parse("scenario = geo_bias\npolicies = fifo"),
            Err(HarnessError::UnknownPolicy(_))
        ));
    }
}
