//! Stage runner behind the command-line tool. Each subcommand runs every
//! stage it depends on and writes the artifacts of all stages it ran.
//!
//! Artifacts under the output directory:
//!
//! | stage    | files                                                        |
//! |----------|--------------------------------------------------------------|
//! | (always) | `effective_config.json`                                      |
//! | gen      | `constellation.json`, `stations.json`                        |
//! | snapshot | `distance_fields.csv`, `snapshot_t0.json`                    |
//! | place    | `placement.json`, `placement_comparison.csv`                 |
//! | assign   | `schedule.csv`, `schedule.json`                              |
//! | simulate | `handovers.csv`, `report_latency.csv`, `trace.jsonl` (opt.)  |
//! | report   | `metrics.json`, `overhead_table.csv`, `per_satellite.csv`,   |
//! |          | `cdf_report_latency.csv`, `cdf_handover_duration.csv`        |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::assignment::{write_schedules_csv, HandoverSchedule};
use crate::config::{Overrides, ScenarioConfig};
use crate::error::PipelineError;
use crate::orbit::SatId;
use crate::report::{aggregate, cdf, write_cdf, write_overhead_table, write_per_satellite, write_records, MetricsReport};
use crate::scenario::{self, ComparisonRow, Constellation, PlacementOutcome, SimulationOutcome};
use crate::topology::{build_snapshot, write_fields_csv, DistanceField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Gen,
    Snapshot,
    Place,
    Assign,
    Simulate,
    Report,
    All,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Snapshot => "snapshot",
            Self::Place => "place",
            Self::Assign => "assign",
            Self::Simulate => "simulate",
            Self::Report => "report",
            Self::All => "all",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "gen" => Self::Gen,
            "snapshot" => Self::Snapshot,
            "place" => Self::Place,
            "assign" => Self::Assign,
            "simulate" => Self::Simulate,
            "report" => Self::Report,
            "all" => Self::All,
            other => return Err(format!("unknown subcommand `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// One line per executed stage.
    pub lines: Vec<String>,
    pub metrics: Option<MetricsReport>,
}

/// Loads the config, applies overrides and runs up to `stage`.
pub fn run_pipeline(config_path: &Path, stage: Stage, overrides: &Overrides) -> Result<RunSummary, PipelineError> {
    let mut config = ScenarioConfig::load(config_path)?;
    config.apply(overrides)?;
    // A relative output directory is taken from the working directory.
    run_config(&config, stage)
}

fn create(dir: &Path, name: &str, stage: &'static str) -> Result<BufWriter<File>, PipelineError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T, stage: &'static str) -> Result<(), PipelineError> {
    let mut w = create(dir, name, stage)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::stage(stage, e))?;
    w.write_all(b"\n").map_err(|e| PipelineError::stage(stage, e))?;
    w.flush().map_err(|e| PipelineError::stage(stage, e))
}

fn write_csv<F>(dir: &Path, name: &str, stage: &'static str, body: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
{
    let mut w = create(dir, name, stage)?;
    body(&mut w).map_err(|e| PipelineError::stage(stage, e))?;
    w.flush().map_err(|e| PipelineError::stage(stage, e))
}

fn fmt_km(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else if v.is_nan() {
        String::new()
    } else {
        "inf".into()
    }
}

fn write_comparison(rows: &[ComparisonRow], w: &mut BufWriter<File>) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["method", "selected_ids", "objective_km", "objective_ms", "note"])?;
    for r in rows {
        let ids: Vec<String> = r.selected.iter().map(|g| g.to_string()).collect();
        wtr.write_record([
            r.method.clone(),
            ids.join(";"),
            fmt_km(r.objective_km),
            fmt_km(r.objective_ms),
            r.note.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScheduleEntry<'a> {
    sat_id: SatId,
    #[serde(flatten)]
    schedule: &'a HandoverSchedule,
}

#[derive(Serialize)]
struct ConstellationDump<'a> {
    shell: &'a crate::orbit::WalkerShell,
    satellites: &'a [crate::orbit::SatelliteElement],
}

/// Runs with an already-resolved config.
pub fn run_config(config: &ScenarioConfig, stage: Stage) -> Result<RunSummary, PipelineError> {
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::stage("output", format!("{}: {e}", out.display())))?;
    write_json(&out, "effective_config.json", config, "output")?;

    let mut summary = RunSummary {
        out_dir: out.clone(),
        ..RunSummary::default()
    };
    let reached = |s: Stage| stage == Stage::All || stage >= s;

    let constellation = scenario::generate(config);
    write_gen(&out, &constellation)?;
    summary.lines.push(format!(
        "gen: {} satellites in {} planes, {} stations",
        constellation.elements.len(),
        constellation.shell.planes,
        constellation.stations.len()
    ));
    if !reached(Stage::Snapshot) {
        return Ok(summary);
    }

    let fields = Arc::new(scenario::snapshots(config, &constellation));
    write_snapshot(&out, config, &constellation, &fields)?;
    let unreachable: usize = fields
        .iter()
        .map(|f| f.d.iter().filter(|d| !d.is_finite()).count())
        .sum();
    summary.lines.push(format!(
        "snapshot: {} distance fields every {} s, {} unreachable pairs",
        fields.len(),
        config.snapshots.cadence_s,
        unreachable
    ));
    if !reached(Stage::Place) {
        return Ok(summary);
    }

    let placement = scenario::place(config, &fields)?;
    write_place(&out, &placement)?;
    summary.lines.push(format!(
        "place: {} selected {:?}, worst-case {} km ({} ms)",
        placement.chosen.method.as_str(),
        placement.chosen.selected,
        fmt_km(placement.chosen.objective_km),
        fmt_km(placement.chosen.objective_ms),
    ));
    if !reached(Stage::Assign) {
        return Ok(summary);
    }

    let schedules = scenario::assign(config, &constellation, &fields, &placement.chosen.selected)?;
    write_assign(&out, &constellation, &schedules)?;
    let scheduled: usize = schedules.iter().map(|s| s.events.len()).sum();
    summary.lines.push(format!(
        "assign: {scheduled} handovers predicted for {} satellites (delta {})",
        schedules.len(),
        config.assignment.delta
    ));
    if !reached(Stage::Simulate) {
        return Ok(summary);
    }

    let sim = scenario::simulate(config, &constellation, Arc::clone(&fields), &schedules)?;
    write_simulate(&out, config, &sim)?;
    summary.lines.push(format!(
        "simulate: {} {} handovers completed by t={} s",
        sim.records.len(),
        config.simulation.protocol.as_str(),
        sim.end_time
    ));
    if !reached(Stage::Report) {
        return Ok(summary);
    }

    let report = aggregate(&sim.records, &sim.report_latencies);
    write_report(&out, config, &sim, &report)?;
    let a = &report.aggregate;
    summary.lines.push(format!(
        "report: {} handovers, mean {:.2} s, invisibility {:.2} h, pod unavailability {:.2} h",
        a.total_handovers, a.mean_handover_duration_s, a.total_invisibility_h, a.total_pod_unavail_h
    ));
    summary.metrics = Some(report);
    Ok(summary)
}

fn write_gen(out: &Path, c: &Constellation) -> Result<(), PipelineError> {
    write_json(
        out,
        "constellation.json",
        &ConstellationDump {
            shell: &c.shell,
            satellites: &c.elements,
        },
        "gen",
    )?;
    write_json(out, "stations.json", &c.stations, "gen")
}

fn write_snapshot(
    out: &Path,
    config: &ScenarioConfig,
    c: &Constellation,
    fields: &[DistanceField],
) -> Result<(), PipelineError> {
    write_csv(out, "distance_fields.csv", "snapshot", |w| write_fields_csv(fields, w))?;
    let t0 = build_snapshot(&c.shell, &c.elements, &c.stations, 0.0, &config.topology);
    write_json(out, "snapshot_t0.json", &t0, "snapshot")
}

fn write_place(out: &Path, p: &PlacementOutcome) -> Result<(), PipelineError> {
    write_json(out, "placement.json", &p.chosen, "place")?;
    write_csv(out, "placement_comparison.csv", "place", |w| write_comparison(&p.comparison, w))
}

fn write_assign(out: &Path, c: &Constellation, schedules: &[HandoverSchedule]) -> Result<(), PipelineError> {
    let labelled: Vec<(String, HandoverSchedule)> = c
        .elements
        .iter()
        .zip(schedules)
        .map(|(e, s)| (e.sat_id.to_string(), s.clone()))
        .collect();
    write_csv(out, "schedule.csv", "assign", |w| write_schedules_csv(&labelled, w))?;
    let entries: Vec<ScheduleEntry> = c
        .elements
        .iter()
        .zip(schedules)
        .map(|(e, schedule)| ScheduleEntry {
            sat_id: e.sat_id,
            schedule,
        })
        .collect();
    write_json(out, "schedule.json", &entries, "assign")
}

fn write_simulate(out: &Path, config: &ScenarioConfig, sim: &SimulationOutcome) -> Result<(), PipelineError> {
    write_csv(out, "handovers.csv", "simulate", |w| write_records(&sim.records, w))?;
    write_csv(out, "report_latency.csv", "simulate", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sat_id", "reports", "mean_ms", "max_ms"])?;
        for (sat, samples) in &sim.report_latencies {
            let n = samples.len();
            let mean = if n == 0 { f64::NAN } else { samples.iter().sum::<f64>() / n as f64 };
            let max = samples.iter().copied().fold(f64::NAN, f64::max);
            wtr.write_record([sat.to_string(), n.to_string(), fmt_km(mean), fmt_km(max)])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    if config.simulation.record_trace {
        let mut w = create(out, "trace.jsonl", "simulate")?;
        for entry in &sim.trace {
            serde_json::to_writer(&mut w, entry).map_err(|e| PipelineError::stage("simulate", e))?;
            w.write_all(b"\n").map_err(|e| PipelineError::stage("simulate", e))?;
        }
        w.flush().map_err(|e| PipelineError::stage("simulate", e))?;
    }
    Ok(())
}

fn write_report(
    out: &Path,
    config: &ScenarioConfig,
    sim: &SimulationOutcome,
    report: &MetricsReport,
) -> Result<(), PipelineError> {
    write_json(out, "metrics.json", report, "report")?;
    let protocol = config.simulation.protocol.as_str();
    write_csv(out, "overhead_table.csv", "report", |w| {
        write_overhead_table(&[(config.name.as_str(), protocol, report)], w)
    })?;
    write_csv(out, "per_satellite.csv", "report", |w| write_per_satellite(report, w))?;
    write_csv(out, "cdf_report_latency.csv", "report", |w| write_cdf(&report.cdf_points, w))?;
    let durations: Vec<f64> = sim.records.iter().map(|r| r.duration).collect();
    let duration_cdf = cdf(&durations).unwrap_or_default();
    write_csv(out, "cdf_handover_duration.csv", "report", |w| write_cdf(&duration_cdf, w))
}
