use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bercow_core::analysis::{
    delta_linearizability, order_prob_bounds, order_prob_integrate, parse_decimal, to_f64, Rational,
};
use bercow_core::attacks::{order_label, sandwich_profits, SandwichScenario, ALL_ORDERS};
use bercow_core::consensus::derive_noise;
use bercow_core::harness::{run_experiment, run_sandwich, write_csv, Table, TOPOLOGY_DIR_ENV};
use bercow_core::netmodel::resolve_topology;
use bercow_core::sro::{DprfField, RevealRequest};
use bercow_core::{
    ms, Backend, CommandId, ExperimentConfig, HarnessError, PolicySpec, Scenario, SroConfig,
    SroHandle,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bercow",
    version,
    about = "Equal-opportunity ordering simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Simulate {
        config: PathBuf,
        /// Directory for relative output paths (default: current directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the configured trial count.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the table to stdout instead of writing the configured files.
        #[arg(long)]
        stdout: bool,
    },
    /// Print the ordering-probability bounds for `n` commands.
    Bounds {
        #[arg(long)]
        n: usize,
        /// Ratio of network bound to noise bound, as a decimal or fraction.
        #[arg(long)]
        alpha: String,
        #[arg(long, default_value_t = 300)]
        dnet_ms: i64,
        /// Also tabulate epsilon over alpha = 0.05, 0.10, ..., 1.
        #[arg(long)]
        curve: bool,
    },
    /// Attack scenarios.
    Attack {
        #[command(subcommand)]
        attack: Attack,
    },
    /// Reveal a few oracle values and verify their proofs.
    SroDemo {
        #[arg(long, value_enum, default_value_t = BackendArg::Seeded)]
        backend: BackendArg,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        f: usize,
        /// First slot index to reveal.
        #[arg(long, default_value_t = 0)]
        k: u64,
        #[arg(long, default_value_t = 3)]
        count: u64,
        /// Use a small prime field instead of the production group.
        #[arg(long)]
        test_field: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Attack {
    /// Private-relay sandwich against a Munich victim on the bundled topology.
    Sandwich {
        #[arg(long, default_value = "bercow")]
        policy: String,
        /// Noise bound as a multiple of the network bound (Bercow only).
        #[arg(long, default_value_t = 5.0)]
        dnoise: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = TOPOLOGY_DIR_ENV)]
        topology_dir: Option<PathBuf>,
    },
    /// Print the payoff of every order of the reference sandwich.
    Payoffs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Seeded,
    Threshold,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{category}]: {e}");
            ExitCode::from(exit_code(category))
        }
    }
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "topology" => 4,
        "sro" => 5,
        "sim" => 6,
        "analysis" => 7,
        _ => 1,
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Simulate {
            config,
            out_dir,
            trials,
            seed,
            stdout,
        } => simulate(&config, out_dir.as_deref(), trials, seed, stdout),
        Command::Bounds {
            n,
            alpha,
            dnet_ms,
            curve,
        } => bounds(n, &alpha, dnet_ms, curve),
        Command::Attack { attack } => match attack {
            Attack::Sandwich {
                policy,
                dnoise,
                trials,
                seed,
                topology_dir,
            } => sandwich(&policy, dnoise, trials, seed, topology_dir),
            Attack::Payoffs => payoffs(),
        },
        Command::SroDemo {
            backend,
            n,
            f,
            k,
            count,
            test_field,
            seed,
        } => sro_demo(backend, n, f, k, count, test_field, seed),
    }
}

fn print_table(table: &Table) -> Result<(), HarnessError> {
    write_csv(table, std::io::stdout().lock()).map_err(|source| HarnessError::Csv {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn simulate(
    path: &Path,
    out_dir: Option<&Path>,
    trials: Option<u64>,
    seed: Option<u64>,
    stdout: bool,
) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(t) = trials {
        if t == 0 {
            return Err(HarnessError::Config {
                line: 0,
                msg: "`--trials` must be at least 1".into(),
            });
        }
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = out_dir {
        cfg.output = cfg.output.map(|p| dir.join(p));
        cfg.plot_output = cfg.plot_output.map(|p| dir.join(p));
    }
    let base = path.parent();
    log::info!("running {} with {} trials", cfg.scenario.name(), cfg.trials);
    let result = run_experiment(&cfg, base)?;
    if stdout || cfg.output.is_none() {
        print_table(&result.table)
    } else {
        result.emit(&cfg)?;
        for p in [&cfg.output, &cfg.plot_output].into_iter().flatten() {
            eprintln!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn bounds(n: usize, alpha: &str, dnet_ms: i64, curve: bool) -> Result<(), HarnessError> {
    let alpha = parse_decimal(alpha)?;
    let (lower, upper) = order_prob_bounds(n, &alpha)?;
    let epsilon = &upper - &lower;
    println!("n        {n}");
    println!("alpha    {}", alpha);
    println!("lower    {} ({:.10})", lower, to_f64(&lower));
    println!("upper    {} ({:.10})", upper, to_f64(&upper));
    println!("epsilon  {} ({:.10})", epsilon, to_f64(&epsilon));
    let dnet = ms(dnet_ms);
    if alpha > Rational::from_integer(0.into()) {
        let noise = (Rational::from_integer(dnet.into()) / &alpha)
            .floor()
            .to_integer();
        if let Ok(noise) = i64::try_from(noise) {
            println!("delta_us {}", delta_linearizability(dnet, noise)?);
        }
    }
    if n == 2
        && alpha > Rational::from_integer(0.into())
        && alpha <= Rational::from_integer(1.into())
    {
        // Two commands a full network bound apart: the exact integral must equal the lower bound.
        let noise = Rational::from_integer(dnet.into()) / &alpha;
        let dnet_q = Rational::from_integer(dnet.into());
        let exact = order_prob_integrate(
            &[dnet_q.clone(), Rational::from_integer(0.into())],
            &dnet_q,
            &noise,
            &[0, 1],
        )?;
        println!("integral {} ({:.10})", exact, to_f64(&exact));
    }
    if curve {
        let mut table = Table::new(["alpha", "lower", "upper", "epsilon"]);
        for i in 1..=20 {
            let a = Rational::new(i.into(), 20.into());
            let (lo, hi) = order_prob_bounds(n, &a)?;
            table.push(vec![
                format!("{:.2}", to_f64(&a)),
                format!("{:.10}", to_f64(&lo)),
                format!("{:.10}", to_f64(&hi)),
                format!("{:.10}", to_f64(&(&hi - &lo))),
            ]);
        }
        print_table(&table)?;
    }
    Ok(())
}

fn sandwich(
    policy: &str,
    dnoise: f64,
    trials: u64,
    seed: u64,
    topology_dir: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let mut spec = PolicySpec::parse(policy)?;
    if let PolicySpec::Bercow { noise_mult: None } = spec {
        spec = PolicySpec::Bercow {
            noise_mult: Some(dnoise),
        };
    }
    let mut cfg = ExperimentConfig::new(Scenario::Sandwich);
    cfg.policies = vec![spec];
    cfg.trials = trials.max(1);
    cfg.seed = seed;
    let topology = resolve_topology(&cfg.topology_path(topology_dir.as_deref()))?;
    let outcome = run_sandwich(&cfg, &topology)?.remove(0);
    let mut table = Table::new(["order", "count", "frequency"]);
    for (i, order) in ALL_ORDERS.iter().enumerate() {
        table.push(vec![
            order_label(order),
            outcome.counts[i].to_string(),
            format!("{:.6}", outcome.frequency(i)),
        ]);
    }
    print_table(&table)?;
    println!("policy {}", outcome.policy);
    println!(
        "expected victim profit   {:.2} USD",
        outcome.expected_victim
    );
    println!(
        "expected attacker profit {:.2} USD",
        outcome.expected_attacker
    );
    Ok(())
}

fn payoffs() -> Result<(), HarnessError> {
    let scenario = SandwichScenario::reference();
    let mut table = Table::new(["order", "victim_usd", "attacker_usd"]);
    for order in &ALL_ORDERS {
        let (v, a) = sandwich_profits(&scenario, order)?;
        table.push(vec![order_label(order), v.to_string(), a.to_string()]);
    }
    print_table(&table)
}

fn sro_demo(
    backend: BackendArg,
    n: usize,
    f: usize,
    k: u64,
    count: u64,
    test_field: Option<u64>,
    seed: u64,
) -> Result<(), HarnessError> {
    let backend = match (backend, test_field) {
        (BackendArg::Seeded, _) => Backend::SeededHash,
        (BackendArg::Threshold, Some(p)) => Backend::ThresholdDprf(DprfField::Test(p)),
        (BackendArg::Threshold, None) => Backend::ThresholdDprf(DprfField::Production),
    };
    let mut rng_seed = [0u8; 32];
    rng_seed[..8].copy_from_slice(&seed.to_be_bytes());
    let handle = SroHandle::init(SroConfig::new(n, f, backend)?, rng_seed)?;
    println!("n={n} f={f} quorum={}", handle.config().quorum());
    let probe = CommandId::from_label("demo");
    for slot in k..k.saturating_add(count) {
        let (r, shares) =
            handle.reveal_with_transcript(&RevealRequest::new(slot, handle.certificate(slot))?)?;
        let proof = handle.generate_proof(slot).with_shares(shares);
        let ok = handle.verify(slot, &proof, &r);
        println!(
            "k={slot} R={} verified={ok}",
            hex::encode(&r.as_bytes()[..16])
        );
        println!(
            "    noise(demo, 1500ms) = {} us",
            derive_noise(&r, &probe, ms(1500))
        );
    }
    let short = handle.certificate(k)[..handle.config().quorum() - 1].to_vec();
    match RevealRequest::new(k, short).and_then(|req| handle.reveal(&req)) {
        Ok(_) => println!("short certificate unexpectedly accepted"),
        Err(e) => println!("short certificate rejected: {e}"),
    }
    Ok(())
}
