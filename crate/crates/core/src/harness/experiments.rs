use std::path::Path;

use num_traits::ToPrimitive;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adversary::private_relay_placement;
use crate::analysis::{epsilon_pair, order_prob_bounds, parse_decimal, to_f64, Rational};
use crate::attacks::{
    liquidation_expected_values, observed_order, order_index, order_label, sandwich_profits,
    SandwichScenario, SandwichTx, ALL_ORDERS,
};
use crate::consensus::{OrderingPolicy, SimulationRun, Submission};
use crate::domain::{ms, CommandId, Invocation, Ledger, Micros, SlotSchedule, TimestampedCommand};
use crate::netmodel::{resolve_topology, CityTopology, DelayModel, Jitter};
use crate::sro::{Backend, SroConfig, SroHandle};

use super::config::{ExperimentConfig, PolicySpec, Scenario};
use super::output::{emit_csv, emit_plot_data, PlotPoint, Table};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub table: Table,
    pub plot: Vec<PlotPoint>,
}

impl ExperimentResult {
    /// Writes the configured outputs, if any.
    pub fn emit(&self, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        if let Some(p) = &cfg.output {
            emit_csv(&self.table, p)?;
        }
        if let Some(p) = &cfg.plot_output {
            emit_plot_data(&self.plot, p)?;
        }
        Ok(())
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Shared state for the simulation-backed experiments.
struct Env<'a> {
    cfg: &'a ExperimentConfig,
    topology: &'a CityTopology,
    sro: SroHandle,
    f: usize,
    stride: Micros,
}

impl<'a> Env<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        topology: &'a CityTopology,
        extra_span: Micros,
    ) -> Result<Self, HarnessError> {
        let n = topology.num_nodes();
        let f = cfg.faults.unwrap_or((n - 1) / 3);
        let mut seed = Sha256::new();
        seed.update(b"bercow/harness/sro/");
        seed.update(cfg.seed.to_be_bytes());
        let sro = SroHandle::init(
            SroConfig::new(n, f, Backend::SeededHash)?,
            seed.finalize().into(),
        )?;
        let max_noise = cfg
            .policies
            .iter()
            .map(|p| cfg.delta_noise(p))
            .max()
            .unwrap_or(0);
        let span = cfg.delta_net + max_noise + extra_span;
        let stride = (span / cfg.slot_interval + 2) * cfg.slot_interval;
        Ok(Env {
            cfg,
            topology,
            sro,
            f,
            stride,
        })
    }

    fn city(&self, name: &str) -> Result<usize, HarnessError> {
        Ok(self.topology.city_index(name)?)
    }

    fn policy(&self, spec: &PolicySpec) -> OrderingPolicy {
        match spec {
            PolicySpec::Pompe => OrderingPolicy::PompeMedian,
            PolicySpec::Bercow { .. } => OrderingPolicy::BercowNoise {
                delta_noise: self.cfg.delta_noise(spec),
            },
            PolicySpec::Leader => OrderingPolicy::LeaderRotation {
                rotation_period: self.cfg.rotation_period,
            },
            PolicySpec::Receive => OrderingPolicy::ReceiveOrderAllCorrect,
        }
    }

    /// Base run for `trial`: its own slots, delay stream and leader phase.
    fn run(&self, spec: &PolicySpec, trial: u64) -> SimulationRun<'_> {
        let mut run = SimulationRun::new(
            self.topology,
            &self.sro,
            self.policy(spec),
            self.cfg.delta_net,
        );
        run.f = self.f;
        run.schedule = SlotSchedule::new(0, self.cfg.slot_interval).expect("validated interval");
        run.delay_model = DelayModel {
            jitter: if self.cfg.jitter > 0 {
                Jitter::Uniform {
                    max: self.cfg.jitter,
                }
            } else {
                Jitter::None
            },
            clock_drift_max: self.cfg.clock_drift,
            delta_net: self.cfg.delta_net,
            drift_seed: self.cfg.seed,
        };
        run.rng_seed = self
            .cfg
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(trial);
        run
    }

    /// Start time of `trial`, leaving room for earlier offsets.
    fn base_time(&self, trial: u64, lead: Micros) -> Micros {
        trial as Micros * self.stride + self.cfg.slot_interval + lead
    }

    /// Runs every trial in parallel; results come back in trial order.
    fn trials<T, F>(&self, f: F) -> Result<Vec<T>, HarnessError>
    where
        T: Send,
        F: Fn(u64) -> Result<T, HarnessError> + Sync + Send,
    {
        (0..self.cfg.trials).into_par_iter().map(f).collect()
    }
}

fn submission(label: &str, t: Micros, city: usize) -> Submission {
    Submission {
        invocation: Invocation::labeled(label, t).expect("non-negative time"),
        origin_city: city,
    }
}

fn first_of(ledger: &Ledger, a: &CommandId, b: &CommandId) -> Result<bool, HarnessError> {
    ledger
        .precedes(a, b)
        .ok_or_else(|| HarnessError::Experiment("command missing from ledger".into()))
}

fn load_topology(
    cfg: &ExperimentConfig,
    base: Option<&Path>,
) -> Result<CityTopology, HarnessError> {
    Ok(resolve_topology(&cfg.topology_path(base))?)
}

/// Runs the experiment a config describes. Relative topology paths resolve
/// against `base` (usually the config file's directory).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base: Option<&Path>,
) -> Result<ExperimentResult, HarnessError> {
    if cfg.scenario == Scenario::BoundsTable {
        return run_bounds_table(cfg);
    }
    let topology = load_topology(cfg, base)?;
    match cfg.scenario {
        Scenario::GeoBias => {
            let rows = run_geo_bias(cfg, &topology)?;
            let mut table = Table::new([
                "city_a",
                "city_b",
                "policy",
                "pr_a_first",
                "pr_b_first",
                "difference",
                "epsilon_bound",
                "trials",
            ]);
            let mut plot = Vec::new();
            for r in &rows {
                table.push(vec![
                    r.city_a.clone(),
                    r.city_b.clone(),
                    r.policy.clone(),
                    f6(r.pr_a_first()),
                    f6(1.0 - r.pr_a_first()),
                    f6(r.difference()),
                    r.epsilon_bound.map(f6).unwrap_or_default(),
                    r.trials.to_string(),
                ]);
                plot.push(PlotPoint {
                    x: format!("{}-{}", r.city_a, r.city_b),
                    series: r.policy.clone(),
                    y: r.difference(),
                });
            }
            Ok(ExperimentResult { table, plot })
        }
        Scenario::TradeoffCurve => {
            let rows = run_tradeoff_curve(cfg, &topology)?;
            let mut table = Table::new(["gap_ms", "policy", "pr_early_first", "trials"]);
            let mut plot = Vec::new();
            for r in &rows {
                table.push(vec![
                    r.gap_ms.to_string(),
                    r.policy.clone(),
                    f6(r.probability()),
                    r.trials.to_string(),
                ]);
                plot.push(PlotPoint {
                    x: r.gap_ms.to_string(),
                    series: r.policy.clone(),
                    y: r.probability(),
                });
            }
            Ok(ExperimentResult { table, plot })
        }
        Scenario::Sandwich => {
            let outcomes = run_sandwich(cfg, &topology)?;
            let scenario = SandwichScenario::reference();
            let mut table = Table::new([
                "policy",
                "order",
                "count",
                "frequency",
                "victim_usd",
                "attacker_usd",
            ]);
            let mut plot = Vec::new();
            for o in &outcomes {
                for (i, order) in ALL_ORDERS.iter().enumerate() {
                    let (v, a) = sandwich_profits(&scenario, order)?;
                    table.push(vec![
                        o.policy.clone(),
                        order_label(order),
                        o.counts[i].to_string(),
                        f6(o.frequency(i)),
                        f6(to_f64(&v)),
                        f6(to_f64(&a)),
                    ]);
                    plot.push(PlotPoint {
                        x: order_label(order),
                        series: o.policy.clone(),
                        y: o.frequency(i),
                    });
                }
                table.push(vec![
                    o.policy.clone(),
                    "expected".into(),
                    o.trials.to_string(),
                    f6(1.0),
                    f6(o.expected_victim),
                    f6(o.expected_attacker),
                ]);
            }
            Ok(ExperimentResult { table, plot })
        }
        Scenario::Liquidation => {
            let rows = run_liquidation(cfg, &topology)?;
            let mut table = Table::new(["policy", "city", "pr_first", "expected_usd"]);
            let mut plot = Vec::new();
            for r in &rows {
                table.push(vec![
                    r.policy.clone(),
                    r.city.clone(),
                    f6(r.prob_first),
                    format!("{:.2}", r.expected_usd),
                ]);
                plot.push(PlotPoint {
                    x: r.city.clone(),
                    series: r.policy.clone(),
                    y: r.expected_usd,
                });
            }
            Ok(ExperimentResult { table, plot })
        }
        Scenario::BoundsTable => unreachable!("handled above"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoBiasRow {
    pub city_a: String,
    pub city_b: String,
    pub policy: String,
    pub a_first: u64,
    pub trials: u64,
    /// Pairwise equality bound for noise policies.
    pub epsilon_bound: Option<f64>,
}

impl GeoBiasRow {
    pub fn pr_a_first(&self) -> f64 {
        self.a_first as f64 / self.trials as f64
    }

    /// `Pr[a first] - Pr[b first]`.
    pub fn difference(&self) -> f64 {
        2.0 * self.pr_a_first() - 1.0
    }
}

fn pair_epsilon(cfg: &ExperimentConfig, spec: &PolicySpec) -> Option<f64> {
    let noise = cfg.delta_noise(spec);
    if noise <= 0 {
        return None;
    }
    let alpha = Rational::new(cfg.delta_net.into(), noise.into());
    if alpha > Rational::from_integer(1.into()) {
        return Some(1.0);
    }
    epsilon_pair(&alpha).ok().map(|e| to_f64(&e))
}

/// Simultaneous invocations from every configured city; one row per city
/// pair and policy.
pub fn run_geo_bias(
    cfg: &ExperimentConfig,
    topology: &CityTopology,
) -> Result<Vec<GeoBiasRow>, HarnessError> {
    if cfg.cities.len() < 2 {
        return Err(HarnessError::Experiment(
            "geo_bias needs at least two cities".into(),
        ));
    }
    let env = Env::new(cfg, topology, 0)?;
    let cities: Vec<usize> = cfg
        .cities
        .iter()
        .map(|c| env.city(c))
        .collect::<Result<_, _>>()?;
    let ids: Vec<CommandId> = cfg
        .cities
        .iter()
        .enumerate()
        .map(|(i, c)| CommandId::from_label(&format!("client{i}@{c}")))
        .collect();
    let m = cities.len();
    let mut rows = Vec::new();
    for spec in &cfg.policies {
        let per_trial = env.trials(|trial| {
            let mut run = env.run(spec, trial);
            let t = env.base_time(trial, 0);
            run.submissions = cities
                .iter()
                .enumerate()
                .map(|(i, &c)| submission(&format!("client{i}@{}", cfg.cities[i]), t, c))
                .collect();
            let ledger = run.run()?.ledger;
            let mut wins = vec![0u64; m * m];
            for a in 0..m {
                for b in a + 1..m {
                    if first_of(&ledger, &ids[a], &ids[b])? {
                        wins[a * m + b] += 1;
                    }
                }
            }
            Ok(wins)
        })?;
        for a in 0..m {
            for b in a + 1..m {
                rows.push(GeoBiasRow {
                    city_a: cfg.cities[a].clone(),
                    city_b: cfg.cities[b].clone(),
                    policy: spec.label(),
                    a_first: per_trial.iter().map(|w| w[a * m + b]).sum(),
                    trials: cfg.trials,
                    epsilon_bound: pair_epsilon(cfg, spec),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub gap_ms: i64,
    pub policy: String,
    pub early_first: u64,
    pub trials: u64,
}

impl TradeoffRow {
    pub fn probability(&self) -> f64 {
        self.early_first as f64 / self.trials as f64
    }
}

/// The second configured city invokes `gap` before the first; reports how
/// often the early command is ordered first.
pub fn run_tradeoff_curve(
    cfg: &ExperimentConfig,
    topology: &CityTopology,
) -> Result<Vec<TradeoffRow>, HarnessError> {
    if cfg.cities.len() != 2 {
        return Err(HarnessError::Experiment(
            "tradeoff_curve needs exactly two cities".into(),
        ));
    }
    if cfg.gaps_ms.is_empty() {
        return Err(HarnessError::Experiment(
            "tradeoff_curve needs `gaps_ms`".into(),
        ));
    }
    let max_gap = cfg.gaps_ms.iter().map(|g| ms(g.abs())).max().unwrap_or(0);
    let env = Env::new(cfg, topology, 2 * max_gap)?;
    let late_city = env.city(&cfg.cities[0])?;
    let early_city = env.city(&cfg.cities[1])?;
    let late = CommandId::from_label("late");
    let early = CommandId::from_label("early");
    let mut rows = Vec::new();
    for spec in &cfg.policies {
        for &gap in &cfg.gaps_ms {
            let wins = env.trials(|trial| {
                let mut run = env.run(spec, trial);
                let t = env.base_time(trial, max_gap);
                run.submissions = vec![
                    submission("early", t - ms(gap), early_city),
                    submission("late", t, late_city),
                ];
                first_of(&run.run()?.ledger, &early, &late)
            })?;
            rows.push(TradeoffRow {
                gap_ms: gap,
                policy: spec.label(),
                early_first: wins.iter().filter(|&&w| w).count() as u64,
                trials: cfg.trials,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichOutcome {
    pub policy: String,
    /// Occurrences of each order, indexed like `ALL_ORDERS`.
    pub counts: [u64; 6],
    pub trials: u64,
    pub expected_victim: f64,
    pub expected_attacker: f64,
}

impl SandwichOutcome {
    pub fn frequency(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.trials as f64
    }

    pub fn frequencies(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.frequency(i))
    }
}

/// Victim buy from `victim_city`; the attacker's buy and sell follow from
/// `attacker_city` at the configured offsets, and the `f` nodes closest to
/// the attacker report timestamps that bracket the victim's.
pub fn run_sandwich(
    cfg: &ExperimentConfig,
    topology: &CityTopology,
) -> Result<Vec<SandwichOutcome>, HarnessError> {
    let span = cfg.front_offset.abs().max(cfg.back_offset.abs());
    let env = Env::new(cfg, topology, span)?;
    let victim_city = env.city(&cfg.victim_city)?;
    let attacker_city = env.city(&cfg.attacker_city)?;
    let colluders: Vec<_> = topology.nodes_by_distance(attacker_city)[..env.f].to_vec();
    let victim = CommandId::from_label("victim-buy");
    let front = CommandId::from_label("attacker-buy");
    let back = CommandId::from_label("attacker-sell");
    let ids = [
        (SandwichTx::Victim, victim),
        (SandwichTx::Front, front),
        (SandwichTx::Back, back),
    ];
    let scenario = SandwichScenario::reference();
    let payoffs: Vec<(f64, f64)> = ALL_ORDERS
        .iter()
        .map(|o| sandwich_profits(&scenario, o).map(|(v, a)| (to_f64(&v), to_f64(&a))))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for spec in &cfg.policies {
        let orders = env.trials(|trial| {
            let mut run = env.run(spec, trial);
            let t = env.base_time(trial, span);
            run.submissions = vec![
                submission("victim-buy", t, victim_city),
                submission("attacker-buy", t + cfg.front_offset, attacker_city),
                submission("attacker-sell", t + cfg.back_offset, attacker_city),
            ];
            let honest = run.collect(0);
            let victim_ts = TimestampedCommand::assign(
                run.submissions[0].invocation.clone(),
                honest.quorum,
                env.f,
            )
            .map_err(crate::consensus::SimError::from)?
            .assigned_ts();
            run.overrides = private_relay_placement(victim_ts, (front, back), &colluders, env.f)?;
            let ledger = run.run()?.ledger;
            let order = observed_order(&ledger, &ids)
                .ok_or_else(|| HarnessError::Experiment("sandwich command missing".into()))?;
            Ok(order_index(&order))
        })?;
        let mut counts = [0u64; 6];
        for i in orders {
            counts[i] += 1;
        }
        let freq = |i: usize| counts[i] as f64 / cfg.trials as f64;
        out.push(SandwichOutcome {
            policy: spec.label(),
            counts,
            trials: cfg.trials,
            expected_victim: (0..6).map(|i| freq(i) * payoffs[i].0).sum(),
            expected_attacker: (0..6).map(|i| freq(i) * payoffs[i].1).sum(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiquidationRow {
    pub policy: String,
    pub city: String,
    pub prob_first: f64,
    pub expected_usd: f64,
}

/// Two clients race for one liquidation prize with simultaneous commands.
pub fn run_liquidation(
    cfg: &ExperimentConfig,
    topology: &CityTopology,
) -> Result<Vec<LiquidationRow>, HarnessError> {
    if cfg.cities.len() != 2 {
        return Err(HarnessError::Experiment(
            "liquidation needs exactly two cities".into(),
        ));
    }
    let env = Env::new(cfg, topology, 0)?;
    let a_city = env.city(&cfg.cities[0])?;
    let b_city = env.city(&cfg.cities[1])?;
    let a = CommandId::from_label("liquidate-a");
    let b = CommandId::from_label("liquidate-b");
    let mut rows = Vec::new();
    for spec in &cfg.policies {
        let wins = env.trials(|trial| {
            let mut run = env.run(spec, trial);
            let t = env.base_time(trial, 0);
            run.submissions = vec![
                submission("liquidate-a", t, a_city),
                submission("liquidate-b", t, b_city),
            ];
            first_of(&run.run()?.ledger, &a, &b)
        })?;
        let pa = wins.iter().filter(|&&w| w).count() as f64 / cfg.trials as f64;
        let values = liquidation_expected_values(&[pa, 1.0 - pa], cfg.prize_usd)?;
        for (i, city) in cfg.cities.iter().enumerate() {
            rows.push(LiquidationRow {
                policy: spec.label(),
                city: city.clone(),
                prob_first: if i == 0 { pa } else { 1.0 - pa },
                expected_usd: values[i],
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub n: usize,
    pub alpha: Rational,
    pub epsilon: Rational,
    pub lower: Rational,
    pub upper: Rational,
    /// `delta_net + delta_net / alpha`, floored to whole microseconds.
    pub delta_us: Micros,
}

pub fn bounds_rows(
    n_values: &[usize],
    alphas: &[Rational],
    delta_net: Micros,
) -> Result<Vec<BoundsRow>, HarnessError> {
    let mut rows = Vec::new();
    for &n in n_values {
        for alpha in alphas {
            let (lower, upper) = order_prob_bounds(n, alpha)?;
            let noise = (Rational::from_integer(delta_net.into()) / alpha)
                .floor()
                .to_integer();
            rows.push(BoundsRow {
                n,
                alpha: alpha.clone(),
                epsilon: &upper - &lower,
                lower,
                upper,
                delta_us: delta_net + noise.to_i64().unwrap_or(Micros::MAX - delta_net),
            });
        }
    }
    Ok(rows)
}

pub fn bounds_table(rows: &[BoundsRow]) -> Table {
    let mut table = Table::new(["n", "alpha", "epsilon", "lower", "upper", "delta_us"]);
    for r in rows {
        table.push(vec![
            r.n.to_string(),
            format!("{:.6}", to_f64(&r.alpha)),
            format!("{:.10}", to_f64(&r.epsilon)),
            format!("{:.10}", to_f64(&r.lower)),
            format!("{:.10}", to_f64(&r.upper)),
            r.delta_us.to_string(),
        ]);
    }
    table
}

pub fn run_bounds_table(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let alphas: Vec<Rational> = cfg
        .alphas
        .iter()
        .map(|a| parse_decimal(a))
        .collect::<Result<_, _>>()?;
    let rows = bounds_rows(&cfg.n_values, &alphas, cfg.delta_net)?;
    let plot = rows
        .iter()
        .map(|r| PlotPoint {
            x: format!("{:.6}", to_f64(&r.alpha)),
            series: format!("n={}", r.n),
            y: to_f64(&r.epsilon),
        })
        .collect();
    Ok(ExperimentResult {
        table: bounds_table(&rows),
        plot,
    })
}
