mod common;

use leo_control::config::{Overrides, ScenarioConfig};
use leo_control::pipeline::{run_config, run_pipeline, Stage};
use leo_control::placement::{PlacementMethod, PlacementSolution};
use leo_control::protocol::Protocol;
use leo_control::PipelineError;

use common::{fixture, load};

#[test]
fn every_fixture_loads() {
    for name in [
        "desk.json",
        "near_zero_rtt.json",
        "placement_m6.json",
        "starlink.json",
        "kuiper.json",
        "oneweb.json",
    ] {
        let cfg = load(name);
        assert!(!cfg.stations().is_empty(), "{name}");
    }
    assert_eq!(load("starlink.json").shell.total(), 1584);
    assert_eq!(load("placement_m6.json").stations().len(), 6);
}

#[test]
fn place_writes_a_two_station_solution() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("placement_m6.json");
    cfg.output_dir = dir.path().to_path_buf();
    let summary = run_config(&cfg, Stage::Place).unwrap();
    assert_eq!(summary.lines.len(), 3);
    assert!(summary.lines[2].starts_with("place:"));

    let sol: PlacementSolution =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("placement.json")).unwrap()).unwrap();
    assert_eq!(sol.selected.len(), 2);
    assert_eq!(sol.method, PlacementMethod::Cnpa);
    let table = std::fs::read_to_string(dir.path().join("placement_comparison.csv")).unwrap();
    for method in ["cnpa", "exhaustive", "random", "single", "random_mean"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{method},"))), "{method} row missing");
    }
    // Later stages did not run.
    assert!(!dir.path().join("schedule.csv").exists());
}

#[test]
fn overrides_show_up_in_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        seed: Some(1234),
        output_dir: Some(dir.path().to_path_buf()),
        protocol: Some(Protocol::Legacy),
        method: Some(PlacementMethod::Exhaustive),
        delta: Some(0.75),
        k: Some(3),
        clusters: Some(4),
        record_trace: Some(true),
    };
    run_pipeline(&fixture("desk.json"), Stage::Gen, &overrides).unwrap();
    let echoed = std::fs::read_to_string(dir.path().join("effective_config.json")).unwrap();
    let effective = ScenarioConfig::from_json(&echoed, "echo", dir.path()).unwrap();
    let original = load("desk.json");

    assert_eq!(effective.seed, 1234);
    assert_eq!(effective.simulation.protocol, Protocol::Legacy);
    assert_eq!(effective.placement.method, PlacementMethod::Exhaustive);
    assert_eq!(effective.assignment.delta, 0.75);
    assert_eq!(effective.placement.k, 3);
    assert_eq!(effective.placement.clusters, Some(4));
    assert!(effective.simulation.record_trace);
    // Everything else is untouched.
    assert_eq!(effective.shell, original.shell);
    assert_eq!(effective.stations(), original.stations());
    assert_eq!(effective.delays, original.delays);
}

#[test]
fn legacy_simulation_on_near_zero_rtt_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("near_zero_rtt.json");
    cfg.output_dir = dir.path().to_path_buf();
    run_config(&cfg, Stage::Simulate).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("handovers.csv")).unwrap();
    let durations: Vec<f64> = rdr
        .deserialize::<(String, f64, f64, f64, f64, String, usize, usize)>()
        .map(|r| r.unwrap().2)
        .collect();
    assert!(!durations.is_empty());
    let mean = durations.iter().sum::<f64>() / durations.len() as f64;
    assert!((mean - 8.35).abs() <= 0.835, "mean legacy duration {mean}");
}

#[test]
fn report_writes_table_and_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("desk.json");
    cfg.output_dir = dir.path().to_path_buf();
    let summary = run_config(&cfg, Stage::Report).unwrap();
    assert_eq!(summary.lines.len(), 6);
    let table = std::fs::read_to_string(dir.path().join("overhead_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,protocol,total_handovers,avg_duration_per_handover_s,total_node_invisibility_h,total_pod_unavailability_h"
    );
    assert!(lines.next().unwrap().ends_with(",0.00,0.00"));
    let cdf = std::fs::read_to_string(dir.path().join("cdf_report_latency.csv")).unwrap();
    assert!(cdf.starts_with("value,fraction\n"));
    assert!(cdf.trim_end().ends_with(",1"));
    assert!(!dir.path().join("trace.jsonl").exists());
}

#[test]
fn failing_stage_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = load("placement_m6.json");
    cfg.output_dir = dir.path().to_path_buf();
    cfg.placement.method = PlacementMethod::Exhaustive;
    cfg.placement.exhaustive_budget = 2.0;
    match run_config(&cfg, Stage::All) {
        Err(PipelineError::Stage { stage, message }) => {
            assert_eq!(stage, "place");
            assert!(message.contains("budget"), "{message}");
        }
        other => panic!("expected a place failure, got {other:?}"),
    }
}

#[test]
fn bad_override_is_a_config_error() {
    let overrides = Overrides {
        k: Some(9),
        ..Overrides::default()
    };
    match run_pipeline(&fixture("desk.json"), Stage::Gen, &overrides) {
        Err(PipelineError::Config(leo_control::ConfigError::Invalid { field, .. })) => assert_eq!(field, "placement.k"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
