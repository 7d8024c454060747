//! Strict JSON scenario configuration.
//!
//! Unknown keys are rejected at every level. Station lists may be inline or
//! loaded from a file next to the config; either way the resolved list is
//! what gets echoed into the effective config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::{AssignmentParams, DistanceMetric};
use crate::error::ConfigError;
use crate::orbit::{GroundStation, WalkerShell};
use crate::placement::{PlacementMethod, DEFAULT_EXHAUSTIVE_BUDGET, DEFAULT_MAX_PASSES};
use crate::protocol::{DelayProfile, Protocol, SimParams};
use crate::topology::TopologyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub shell: WalkerShell,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<GroundStation>>,
    /// JSON array of stations, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations_file: Option<PathBuf>,
    #[serde(default)]
    pub topology: TopologyParams,
    #[serde(default)]
    pub snapshots: SnapshotConfig,
    pub placement: PlacementConfig,
    #[serde(default)]
    pub assignment: AssignmentConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub delays: DelayProfile,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotConfig {
    pub cadence_s: f64,
    /// Defaults to the simulated duration.
    pub horizon_s: Option<f64>,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            cadence_s: 60.0,
            horizon_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementConfig {
    pub k: usize,
    /// Representative snapshots; defaults to `min(10, snapshots)`.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default = "default_method")]
    pub method: PlacementMethod,
    /// Station ids eligible to host a controller; defaults to all.
    #[serde(default)]
    pub candidates: Option<Vec<usize>>,
    #[serde(default)]
    pub greedy_on_full: bool,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    #[serde(default = "default_budget")]
    pub exhaustive_budget: f64,
    /// Draws averaged for the random baseline row.
    #[serde(default = "default_random_trials")]
    pub random_trials: usize,
}

fn default_method() -> PlacementMethod {
    PlacementMethod::Cnpa
}
fn default_max_passes() -> usize {
    DEFAULT_MAX_PASSES
}
fn default_budget() -> f64 {
    DEFAULT_EXHAUSTIVE_BUDGET
}
fn default_random_trials() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentConfig {
    /// Defaults to the simulated duration.
    #[serde(default)]
    pub horizon_s: Option<f64>,
    #[serde(default = "default_sample_dt")]
    pub sample_dt_s: f64,
    #[serde(default = "default_decide_dt")]
    pub decide_dt_s: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub metric: DistanceMetric,
}

fn default_sample_dt() -> f64 {
    60.0
}
fn default_decide_dt() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.9
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self {
            horizon_s: None,
            sample_dt_s: default_sample_dt(),
            decide_dt_s: default_decide_dt(),
            delta: default_delta(),
            metric: DistanceMetric::Geometric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyConfig {
    Fixed {
        one_way_ms: f64,
    },
    Topology {
        #[serde(default = "default_terrestrial_factor")]
        terrestrial_factor: f64,
    },
}

fn default_terrestrial_factor() -> f64 {
    2.0
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self::Topology {
            terrestrial_factor: default_terrestrial_factor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub protocol: Protocol,
    pub duration_s: f64,
    pub report_interval_s: f64,
    /// Defaults to one report interval.
    pub grace_s: Option<f64>,
    pub pods_per_sat: usize,
    pub latency: LatencyConfig,
    /// Dump every simulation event as JSON lines.
    pub record_trace: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Seamless,
            duration_s: 7200.0,
            report_interval_s: 10.0,
            grace_s: None,
            pods_per_sat: 1,
            latency: LatencyConfig::default(),
            record_trace: false,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub protocol: Option<Protocol>,
    pub method: Option<PlacementMethod>,
    pub delta: Option<f64>,
    pub k: Option<usize>,
    pub clusters: Option<usize>,
    pub record_trace: Option<bool>,
}

/// Derives an independent seed per stage from the top-level seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    /// Reads, resolves the station list and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, &path.display().to_string(), base)
    }

    /// Parses JSON text; `base` anchors a relative `stations_file`.
    pub fn from_json(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.resolve_stations(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_stations(&mut self, base: &Path) -> Result<(), ConfigError> {
        let mut stations = match (self.stations.take(), self.stations_file.take()) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid("stations_file", "give either `stations` or `stations_file`"));
            }
            (Some(inline), None) => inline,
            (None, Some(file)) => {
                let path = base.join(&file);
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.display().to_string(),
                    source,
                })?
            }
            (None, None) => return Err(ConfigError::invalid("stations", "no stations given")),
        };
        for (i, gs) in stations.iter_mut().enumerate() {
            gs.gs_id = i;
        }
        self.stations = Some(stations);
        Ok(())
    }

    pub fn stations(&self) -> &[GroundStation] {
        self.stations.as_deref().unwrap_or(&[])
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(p) = o.protocol {
            self.simulation.protocol = p;
        }
        if let Some(m) = o.method {
            self.placement.method = m;
        }
        if let Some(d) = o.delta {
            self.assignment.delta = d;
        }
        if let Some(k) = o.k {
            self.placement.k = k;
        }
        if let Some(c) = o.clusters {
            self.placement.clusters = Some(c);
        }
        if let Some(t) = o.record_trace {
            self.simulation.record_trace = t;
        }
        self.validate()
    }

    pub fn snapshot_horizon(&self) -> f64 {
        self.snapshots.horizon_s.unwrap_or(self.simulation.duration_s)
    }

    pub fn snapshot_count(&self) -> usize {
        (self.snapshot_horizon() / self.snapshots.cadence_s + 1e-9).floor() as usize + 1
    }

    pub fn clusters(&self) -> usize {
        self.placement.clusters.unwrap_or_else(|| self.snapshot_count().min(10))
    }

    pub fn candidates(&self) -> Vec<usize> {
        self.placement
            .candidates
            .clone()
            .unwrap_or_else(|| (0..self.stations().len()).collect())
    }

    pub fn assignment_params(&self) -> AssignmentParams {
        AssignmentParams {
            horizon_s: self.assignment.horizon_s.unwrap_or(self.simulation.duration_s),
            sample_dt_s: self.assignment.sample_dt_s,
            decide_dt_s: self.assignment.decide_dt_s,
            delta: self.assignment.delta,
            metric: self.assignment.metric,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            report_interval_s: self.simulation.report_interval_s,
            grace_s: self.simulation.grace_s,
            pods_per_sat: self.simulation.pods_per_sat,
            record_history: false,
            record_trace: self.simulation.record_trace,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.shell.validate()?;
        let stations = self.stations();
        if stations.is_empty() {
            return Err(ConfigError::invalid("stations", "at least one station is required"));
        }
        for gs in stations {
            gs.validate()?;
        }

        let el = self.topology.min_elevation_deg;
        if !(-90.0..90.0).contains(&el) {
            return Err(ConfigError::invalid("topology.min_elevation_deg", "must lie in [-90, 90)"));
        }
        if self.topology.max_gsl_per_sat == Some(0) {
            return Err(ConfigError::invalid("topology.max_gsl_per_sat", "must be at least 1"));
        }

        positive("snapshots.cadence_s", self.snapshots.cadence_s)?;
        if let Some(h) = self.snapshots.horizon_s {
            if !(h.is_finite() && h >= 0.0) {
                return Err(ConfigError::invalid("snapshots.horizon_s", "must be non-negative"));
            }
        }

        let candidates = self.candidates();
        if candidates.is_empty() {
            return Err(ConfigError::invalid("placement.candidates", "must not be empty"));
        }
        if let Some(bad) = candidates.iter().find(|&&g| g >= stations.len()) {
            return Err(ConfigError::invalid(
                "placement.candidates",
                format!("station {bad} does not exist ({} stations)", stations.len()),
            ));
        }
        let mut unique = candidates.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != candidates.len() {
            return Err(ConfigError::invalid("placement.candidates", "ids must be distinct"));
        }
        if self.placement.k == 0 || self.placement.k > candidates.len() {
            return Err(ConfigError::invalid(
                "placement.k",
                format!("must lie in 1..={}", candidates.len()),
            ));
        }
        let clusters = self.clusters();
        if clusters == 0 || clusters > self.snapshot_count() {
            return Err(ConfigError::invalid(
                "placement.clusters",
                format!("must lie in 1..={}", self.snapshot_count()),
            ));
        }
        if self.placement.max_passes == 0 {
            return Err(ConfigError::invalid("placement.max_passes", "must be at least 1"));
        }
        if !(self.placement.exhaustive_budget >= 1.0) {
            return Err(ConfigError::invalid("placement.exhaustive_budget", "must be at least 1"));
        }
        if self.placement.random_trials == 0 {
            return Err(ConfigError::invalid("placement.random_trials", "must be at least 1"));
        }

        if let Some(h) = self.assignment.horizon_s {
            positive("assignment.horizon_s", h)?;
        }
        positive("assignment.sample_dt_s", self.assignment.sample_dt_s)?;
        positive("assignment.decide_dt_s", self.assignment.decide_dt_s)?;
        let delta = self.assignment.delta;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(ConfigError::invalid("assignment.delta", format!("must lie in (0, 1], got {delta}")));
        }

        positive("simulation.duration_s", self.simulation.duration_s)?;
        positive("simulation.report_interval_s", self.simulation.report_interval_s)?;
        if let Some(g) = self.simulation.grace_s {
            if !(g.is_finite() && g >= 0.0) {
                return Err(ConfigError::invalid("simulation.grace_s", "must be non-negative"));
            }
        }
        if self.simulation.pods_per_sat == 0 {
            return Err(ConfigError::invalid("simulation.pods_per_sat", "must be at least 1"));
        }
        match self.simulation.latency {
            LatencyConfig::Fixed { one_way_ms } => {
                if !(one_way_ms.is_finite() && one_way_ms >= 0.0) {
                    return Err(ConfigError::invalid("simulation.latency.one_way_ms", "must be non-negative"));
                }
            }
            LatencyConfig::Topology { terrestrial_factor } => {
                positive("simulation.latency.terrestrial_factor", terrestrial_factor)?;
            }
        }
        self.delays
            .validate()
            .map_err(|reason| ConfigError::invalid("delays", reason))?;
        Ok(())
    }
}
