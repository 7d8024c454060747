//! End-to-end scenario stages: constellation, snapshots, placement,
//! handover prediction, protocol simulation.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::assignment::{
    predict_handovers, sample_distances, sample_network_distances, Controller, DistanceMetric, HandoverSchedule,
};
use crate::config::{stage_seed, LatencyConfig, ScenarioConfig};
use crate::error::{PipelineError, PlacementError};
use crate::orbit::{generate_constellation, station_position, GroundStation, SatId, SatelliteElement, WalkerShell};
use crate::placement::{
    best_single, cnpa, exhaustive_optimal, random_select, PlacementMethod, PlacementProblem, PlacementSolution,
};
use crate::protocol::{HandoverRecord, HandoverRequest, LatencyModel, SimParams, Simulation, TraceEntry};
use crate::topology::{build_fields, distance_to_latency, sample_times, DistanceField};

/// How long the run may continue past the configured duration so that
/// handovers already started can complete.
const DRAIN_LIMIT_S: f64 = 3600.0;

#[derive(Debug, Clone)]
pub struct Constellation {
    pub shell: WalkerShell,
    pub elements: Vec<SatelliteElement>,
    pub stations: Vec<GroundStation>,
}

impl Constellation {
    pub fn sat_ids(&self) -> Vec<SatId> {
        self.elements.iter().map(|e| e.sat_id).collect()
    }
}

pub fn generate(config: &ScenarioConfig) -> Constellation {
    Constellation {
        shell: config.shell,
        elements: generate_constellation(&config.shell),
        stations: config.stations().to_vec(),
    }
}

pub fn snapshot_times(config: &ScenarioConfig) -> Vec<f64> {
    sample_times(config.snapshot_horizon(), config.snapshots.cadence_s)
}

pub fn snapshots(config: &ScenarioConfig, constellation: &Constellation) -> Vec<DistanceField> {
    build_fields(
        &constellation.shell,
        &constellation.elements,
        &constellation.stations,
        &snapshot_times(config),
        &config.topology,
    )
}

/// One line in the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub selected: Vec<usize>,
    pub objective_km: f64,
    pub objective_ms: f64,
    pub note: String,
}

impl ComparisonRow {
    fn from_solution(label: &str, sol: &PlacementSolution) -> Self {
        Self {
            method: label.to_string(),
            selected: sol.selected.clone(),
            objective_km: sol.objective_km,
            objective_ms: sol.objective_ms,
            note: String::new(),
        }
    }

    fn failed(label: &str, err: &PlacementError) -> Self {
        Self {
            method: label.to_string(),
            selected: Vec::new(),
            objective_km: f64::NAN,
            objective_ms: f64::NAN,
            note: err.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlacementOutcome {
    pub chosen: PlacementSolution,
    pub comparison: Vec<ComparisonRow>,
}

fn random_mean(config: &ScenarioConfig, fields: &[DistanceField], candidates: &[usize]) -> Result<f64, PlacementError> {
    let base = stage_seed(config.seed, "random");
    let trials = config.placement.random_trials;
    let mut total = 0.0;
    for i in 0..trials {
        total += random_select(fields, candidates, config.placement.k, base.wrapping_add(i as u64))?.objective_km;
    }
    Ok(total / trials as f64)
}

/// Runs the configured method plus every baseline for comparison.
pub fn place(config: &ScenarioConfig, fields: &[DistanceField]) -> Result<PlacementOutcome, PipelineError> {
    let stage = |e: PlacementError| PipelineError::stage("place", e);
    let candidates = config.candidates();
    let k = config.placement.k;

    let mut problem = PlacementProblem::new(
        fields.to_vec(),
        candidates.clone(),
        k,
        config.clusters(),
        stage_seed(config.seed, "place"),
    );
    problem.greedy_on_full = config.placement.greedy_on_full;
    problem.max_passes = config.placement.max_passes;

    let cnpa_sol = cnpa(&problem);
    let exhaustive = exhaustive_optimal(fields, &candidates, k, config.placement.exhaustive_budget);
    let random = random_select(fields, &candidates, k, stage_seed(config.seed, "random"));
    let single = best_single(fields, &candidates);

    let mut comparison = Vec::new();
    for (label, result) in [
        ("cnpa", &cnpa_sol),
        ("exhaustive", &exhaustive),
        ("random", &random),
        ("single", &single),
    ] {
        comparison.push(match result {
            Ok(sol) => ComparisonRow::from_solution(label, sol),
            Err(e) => ComparisonRow::failed(label, e),
        });
    }
    match random_mean(config, fields, &candidates) {
        Ok(mean) => comparison.push(ComparisonRow {
            method: "random_mean".into(),
            selected: Vec::new(),
            objective_km: mean,
            objective_ms: distance_to_latency(mean),
            note: format!("mean over {} draws", config.placement.random_trials),
        }),
        Err(e) => comparison.push(ComparisonRow::failed("random_mean", &e)),
    }

    let chosen = match config.placement.method {
        PlacementMethod::Cnpa => cnpa_sol,
        PlacementMethod::Exhaustive => exhaustive,
        PlacementMethod::Random => random,
        PlacementMethod::Single => single,
    }
    .map_err(stage)?;
    Ok(PlacementOutcome { chosen, comparison })
}

/// Per-satellite schedules over the selected controllers, in satellite order.
pub fn assign(
    config: &ScenarioConfig,
    constellation: &Constellation,
    fields: &[DistanceField],
    selected: &[usize],
) -> Result<Vec<HandoverSchedule>, PipelineError> {
    let params = config.assignment_params();
    let controllers: Vec<Controller> = selected
        .iter()
        .map(|&g| Controller {
            gs_id: g,
            position: station_position(&constellation.stations[g]),
        })
        .collect();
    constellation
        .elements
        .par_iter()
        .enumerate()
        .map(|(i, elem)| {
            let series = match params.metric {
                DistanceMetric::Geometric => sample_distances(elem, &controllers, &params)?,
                DistanceMetric::Network => sample_network_distances(i, fields, &controllers, &params)?,
            };
            predict_handovers(&series, &params)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::stage("assign", e))
}

#[derive(Debug, Clone, Default)]
pub struct SimulationOutcome {
    pub records: Vec<HandoverRecord>,
    /// Per-satellite report latencies, ms, in satellite order.
    pub report_latencies: Vec<(SatId, Vec<f64>)>,
    pub requests: Vec<HandoverRequest>,
    pub trace: Vec<TraceEntry>,
    /// Time at which the run stopped, including the drain of in-flight handovers.
    pub end_time: f64,
}

/// Builds the simulation with every scheduled handover that starts before
/// the configured duration already queued.
pub fn prepare_simulation(
    config: &ScenarioConfig,
    constellation: &Constellation,
    fields: Arc<Vec<DistanceField>>,
    schedules: &[HandoverSchedule],
    params: SimParams,
) -> Simulation {
    let latency = match config.simulation.latency {
        LatencyConfig::Fixed { one_way_ms } => LatencyModel::Fixed { one_way_ms },
        LatencyConfig::Topology { terrestrial_factor } => LatencyModel::Topology {
            fields,
            stations: Arc::new(constellation.stations.clone()),
            terrestrial_factor,
        },
    };
    let initial: Vec<usize> = schedules.iter().map(|s| s.initial).collect();
    let mut sim = Simulation::new(
        &constellation.sat_ids(),
        &initial,
        latency,
        config.delays,
        params,
        stage_seed(config.seed, "simulate"),
    );
    let duration = config.simulation.duration_s;
    let protocol = config.simulation.protocol;
    for (sat, schedule) in schedules.iter().enumerate() {
        for ev in schedule.events.iter().filter(|e| e.t < duration) {
            sim.schedule_handover(sat, ev.target, ev.t, protocol);
        }
    }
    sim
}

/// Runs to the configured duration, then lets in-flight handovers finish.
/// Returns the time the run stopped.
pub fn drive(sim: &mut Simulation, duration: f64) -> Result<f64, PipelineError> {
    let stage = |e| PipelineError::stage("simulate", e);
    sim.run_until(duration).map_err(stage)?;
    let n = sim.agents().len();
    let mut end = duration;
    while (0..n).any(|s| sim.in_flight(s)) && end < duration + DRAIN_LIMIT_S {
        end += 1.0;
        sim.run_until(end).map_err(stage)?;
    }
    sim.finish(end);
    Ok(end)
}

pub fn outcome(sim: &Simulation, end_time: f64) -> SimulationOutcome {
    SimulationOutcome {
        records: sim.records().to_vec(),
        report_latencies: sim
            .agents()
            .iter()
            .map(|a| a.sat_id)
            .zip(sim.report_latencies().iter().cloned())
            .collect(),
        requests: sim.requests().to_vec(),
        trace: sim.trace().to_vec(),
        end_time,
    }
}

pub fn simulate(
    config: &ScenarioConfig,
    constellation: &Constellation,
    fields: Arc<Vec<DistanceField>>,
    schedules: &[HandoverSchedule],
) -> Result<SimulationOutcome, PipelineError> {
    let mut sim = prepare_simulation(config, constellation, fields, schedules, config.sim_params());
    let end = drive(&mut sim, config.simulation.duration_s)?;
    Ok(outcome(&sim, end))
}

/// Every stage's in-memory result.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub constellation: Constellation,
    pub fields: Arc<Vec<DistanceField>>,
    pub placement: PlacementOutcome,
    pub schedules: Vec<HandoverSchedule>,
    pub simulation: SimulationOutcome,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput, PipelineError> {
    let constellation = generate(config);
    let fields = Arc::new(snapshots(config, &constellation));
    let placement = place(config, &fields)?;
    let schedules = assign(config, &constellation, &fields, &placement.chosen.selected)?;
    let simulation = simulate(config, &constellation, Arc::clone(&fields), &schedules)?;
    Ok(ScenarioOutput {
        constellation,
        fields,
        placement,
        schedules,
        simulation,
    })
}
