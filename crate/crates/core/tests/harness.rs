use std::path::{Path, PathBuf};

use bercow_core::harness::{run_experiment, run_geo_bias, run_tradeoff_curve};
use bercow_core::netmodel::bundled_ethereum80;
use bercow_core::{ms, CityTopology, ExperimentConfig, PolicySpec, Scenario};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs_dir().join("geo_bias.cfg")).unwrap();
    cfg.trials = 300;
    let mut outputs = Vec::new();
    for (i, seed) in [7, 7, 8].into_iter().enumerate() {
        cfg.seed = seed;
        cfg.output = Some(dir.path().join(format!("table{i}.csv")));
        cfg.plot_output = Some(dir.path().join(format!("plot{i}.csv")));
        run_experiment(&cfg, Some(&configs_dir()))
            .unwrap()
            .emit(&cfg)
            .unwrap();
        let read = |p: &Option<PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
        outputs.push((read(&cfg.output), read(&cfg.plot_output)));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0].0, outputs[2].0);
}

#[test]
fn differences_stay_within_epsilon_bound() {
    let topo = bundled_ethereum80();
    let mut cfg = ExperimentConfig::new(Scenario::GeoBias);
    cfg.cities = [
        "Washington",
        "SanFrancisco",
        "Singapore",
        "Tokyo",
        "Oulu",
        "Canberra",
    ]
    .map(String::from)
    .to_vec();
    cfg.policies = (1..=5)
        .map(|m| PolicySpec::Bercow {
            noise_mult: Some(m as f64),
        })
        .collect();
    cfg.trials = 2000;
    cfg.seed = 17;
    let rows = run_geo_bias(&cfg, &topo).unwrap();
    assert_eq!(rows.len(), 15 * 5);
    for r in &rows {
        let eps = r.epsilon_bound.unwrap();
        // Standard error of a difference of complementary frequencies.
        let sigma = 2.0 * (0.25 / r.trials as f64).sqrt();
        assert!(r.difference().abs() <= eps + 4.0 * sigma, "{r:?}");
    }
}

#[test]
fn symmetric_cities_split_evenly_at_zero_gap() {
    let cities = vec![("East".to_string(), 10), ("West".to_string(), 10)];
    let topo =
        CityTopology::new(cities, ms(2), &[("East".into(), "West".into(), ms(120))]).unwrap();
    let mut cfg = ExperimentConfig::new(Scenario::TradeoffCurve);
    cfg.cities = vec!["East".into(), "West".into()];
    cfg.policies = vec![
        PolicySpec::Pompe,
        PolicySpec::Receive,
        PolicySpec::Leader,
        PolicySpec::Bercow {
            noise_mult: Some(1.0),
        },
    ];
    cfg.gaps_ms = vec![0];
    cfg.faults = Some(6);
    cfg.trials = 4000;
    for row in run_tradeoff_curve(&cfg, &topo).unwrap() {
        let sigma = (0.25 / row.trials as f64).sqrt();
        assert!((row.probability() - 0.5).abs() <= 4.0 * sigma, "{row:?}");
    }
}

#[test]
fn bundled_configs_run() {
    let mut names: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for path in names {
        let mut cfg = ExperimentConfig::load(&path).unwrap();
        cfg.trials = 40;
        let res = run_experiment(&cfg, path.parent()).unwrap();
        assert!(!res.table.rows.is_empty(), "{}", path.display());
    }
}

#[test]
fn tradeoff_reaches_one_past_the_window() {
    let topo = bundled_ethereum80();
    let mut cfg = ExperimentConfig::new(Scenario::TradeoffCurve);
    cfg.policies = vec![
        PolicySpec::Bercow {
            noise_mult: Some(1.0),
        },
        PolicySpec::Bercow {
            noise_mult: Some(5.0),
        },
    ];
    cfg.gaps_ms = vec![400, 601, 1801];
    cfg.trials = 2000;
    let rows = run_tradeoff_curve(&cfg, &topo).unwrap();
    let p = |policy: &str, gap: i64| {
        rows.iter()
            .find(|r| r.policy == policy && r.gap_ms == gap)
            .unwrap()
            .probability()
    };
    assert_eq!(p("bercow@1", 601), 1.0);
    assert_eq!(p("bercow@5", 1801), 1.0);
    assert!(p("bercow@5", 400) < 0.8);
}
