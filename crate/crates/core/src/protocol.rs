//! Discrete-event simulation of control nodes and satellite agents.
//!
//! Two handover procedures are modelled. The seamless one moves a node
//! between control nodes through a `HandoverRequest` and per-controller
//! binding states while the agent keeps reporting and its pods keep
//! running. The legacy one drains the node, removes it, cleans up,
//! re-authenticates, re-registers and restarts the pods.
//!
//! All events go through one queue ordered by `(time, sequence)`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::orbit::{great_circle_km, GroundStation, SatId};
use crate::topology::{distance_to_latency, nearest_field, DistanceField, LIGHT_KM_PER_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BindingState {
    Bound,
    Binding,
    Releasing,
    Released,
}

impl BindingState {
    /// States in which the control node still answers for the node.
    pub fn holds(self) -> bool {
        matches!(self, Self::Bound | Self::Binding | Self::Releasing)
    }
}

/// Target side: (absent) -> Released -> Binding -> Bound.
/// Source side: Bound -> Releasing -> Released.
pub fn transition_allowed(from: Option<BindingState>, to: BindingState) -> bool {
    use BindingState::*;
    matches!(
        (from, to),
        (None, Released) | (Some(Released), Binding) | (Some(Binding), Bound) | (Some(Bound), Releasing) | (Some(Releasing), Released)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestStatus {
    Created,
    Processing,
    Finished,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverRequest {
    pub request_id: u64,
    pub node_id: SatId,
    pub source_gs: usize,
    pub target_gs: usize,
    pub status: RequestStatus,
    pub timestamps: Vec<(RequestStatus, f64)>,
    /// When the target committed `Bound`.
    pub target_bound_at: Option<f64>,
    /// When the source committed `Released`.
    pub source_released_at: Option<f64>,
}

impl HandoverRequest {
    fn new(request_id: u64, node_id: SatId, source_gs: usize, target_gs: usize, t: f64) -> Self {
        Self {
            request_id,
            node_id,
            source_gs,
            target_gs,
            status: RequestStatus::Created,
            timestamps: vec![(RequestStatus::Created, t)],
            target_bound_at: None,
            source_released_at: None,
        }
    }

    fn advance(&mut self, next: RequestStatus, t: f64) {
        debug_assert!(next > self.status, "request status must move forward");
        self.status = next;
        self.timestamps.push((next, t));
    }
}

/// Local processing delays, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelayProfile {
    pub controller_process: f64,
    pub persist: f64,
    pub client_init: f64,
    pub status_report_process: f64,
    pub pod_stop: f64,
    pub pod_start: f64,
    pub drain_per_pod: f64,
    pub register: f64,
    pub legacy_cleanup: f64,
    /// Authentication round trips for a legacy re-join. Seamless handovers
    /// use preloaded credentials and never authenticate.
    pub auth_roundtrips: u32,
}

impl Default for DelayProfile {
    /// Calibrated so a single-pod legacy handover over a sub-millisecond
    /// link lasts 8.35 s, hides the node for 4.5 s and interrupts the pod
    /// for 9.7 s.
    fn default() -> Self {
        Self {
            controller_process: 0.1,
            persist: 0.05,
            client_init: 0.2,
            status_report_process: 0.05,
            pod_stop: 1.2,
            pod_start: 3.9,
            drain_per_pod: 2.55,
            register: 2.5,
            legacy_cleanup: 2.0,
            auth_roundtrips: 2,
        }
    }
}

impl DelayProfile {
    pub fn zero() -> Self {
        Self {
            controller_process: 0.0,
            persist: 0.0,
            client_init: 0.0,
            status_report_process: 0.0,
            pod_stop: 0.0,
            pod_start: 0.0,
            drain_per_pod: 0.0,
            register: 0.0,
            legacy_cleanup: 0.0,
            auth_roundtrips: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("controller_process", self.controller_process),
            ("persist", self.persist),
            ("client_init", self.client_init),
            ("status_report_process", self.status_report_process),
            ("pod_stop", self.pod_stop),
            ("pod_start", self.pod_start),
            ("drain_per_pod", self.drain_per_pod),
            ("register", self.register),
            ("legacy_cleanup", self.legacy_cleanup),
        ];
        match all.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            Some((name, _)) => Err(format!("delays.{name} must be a non-negative number")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Seamless,
    Legacy,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Seamless => "seamless",
            Self::Legacy => "legacy",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seamless" => Ok(Self::Seamless),
            "legacy" => Ok(Self::Legacy),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverRecord {
    pub sat_id: SatId,
    pub t_start: f64,
    pub t_end: f64,
    pub duration: f64,
    pub invisibility: f64,
    pub pod_unavailability: f64,
    pub protocol: Protocol,
    pub source: usize,
    pub target: usize,
}

/// Either end of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Satellite(usize),
    Station(usize),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Satellite(s) => write!(f, "sat#{s}"),
            Self::Station(g) => write!(f, "gs#{g}"),
        }
    }
}

/// One-way message latency.
#[derive(Debug, Clone)]
pub enum LatencyModel {
    /// Every message between distinct endpoints takes the same time.
    Fixed { one_way_ms: f64 },
    /// Satellite legs follow the nearest-in-time shortest-path snapshot;
    /// station legs follow the great circle stretched by `terrestrial_factor`.
    Topology {
        fields: Arc<Vec<DistanceField>>,
        stations: Arc<Vec<GroundStation>>,
        terrestrial_factor: f64,
    },
}

impl LatencyModel {
    /// One-way latency in milliseconds.
    pub fn latency(&self, a: Endpoint, b: Endpoint, t: f64) -> Result<f64, SimError> {
        if a == b {
            return Ok(0.0);
        }
        let unreachable = || SimError::Unreachable {
            a: a.to_string(),
            b: b.to_string(),
            t,
        };
        match self {
            Self::Fixed { one_way_ms } => Ok(*one_way_ms),
            Self::Topology {
                fields,
                stations,
                terrestrial_factor,
            } => match (a, b) {
                (Endpoint::Satellite(s), Endpoint::Station(g)) | (Endpoint::Station(g), Endpoint::Satellite(s)) => {
                    let km = nearest_field(fields, t).map_or(f64::INFINITY, |f| f.get(s, g));
                    if km.is_finite() {
                        Ok(distance_to_latency(km))
                    } else {
                        Err(unreachable())
                    }
                }
                (Endpoint::Station(x), Endpoint::Station(y)) => {
                    let (Some(gx), Some(gy)) = (stations.get(x), stations.get(y)) else {
                        return Err(unreachable());
                    };
                    Ok(great_circle_km(gx, gy) * terrestrial_factor / LIGHT_KM_PER_MS)
                }
                (Endpoint::Satellite(_), Endpoint::Satellite(_)) => Err(unreachable()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub report_interval_s: f64,
    /// Extra allowance beyond one interval before a silent node counts as
    /// invisible. `None` means one report interval.
    pub grace_s: Option<f64>,
    pub pods_per_sat: usize,
    /// Keep every registry change for offline invariant checks.
    pub record_history: bool,
    /// Keep a per-event trace.
    pub record_trace: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            report_interval_s: 10.0,
            grace_s: None,
            pods_per_sat: 1,
            record_history: false,
            record_trace: false,
        }
    }
}

impl SimParams {
    pub fn visibility_window(&self) -> f64 {
        self.report_interval_s + self.grace_s.unwrap_or(self.report_interval_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub state: BindingState,
    pub pods: Vec<String>,
    pub last_report: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ControlNodeState {
    pub gs_id: usize,
    pub registry: BTreeMap<usize, RegistryEntry>,
}

impl ControlNodeState {
    pub fn new(gs_id: usize) -> Self {
        Self {
            gs_id,
            registry: BTreeMap::new(),
        }
    }

    pub fn state_of(&self, sat: usize) -> Option<BindingState> {
        self.registry.get(&sat).map(|e| e.state)
    }

    /// Nodes eligible for scheduling and health checks.
    pub fn bound_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.registry
            .iter()
            .filter(|(_, e)| e.state == BindingState::Bound)
            .map(|(&s, _)| s)
    }

    pub fn transition(&mut self, sat: usize, node: SatId, to: BindingState) -> Result<(), SimError> {
        let from = self.state_of(sat);
        if !transition_allowed(from, to) {
            return Err(SimError::ProtocolViolation {
                sat: node,
                gs: self.gs_id,
                from,
                to,
            });
        }
        self.registry
            .entry(sat)
            .or_insert_with(|| RegistryEntry {
                state: to,
                pods: Vec::new(),
                last_report: None,
            })
            .state = to;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pod {
    pub name: String,
    pub running: bool,
}

#[derive(Debug, Clone)]
pub struct SatelliteAgent {
    pub sat_id: SatId,
    pub current_gs: Option<usize>,
    pub pending_gs: Option<usize>,
    pub pods: Vec<Pod>,
    pub pod_cidr: String,
    pub report_interval: f64,
}

/// A registry change or accepted report, kept when history recording is on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistryEvent {
    pub t: f64,
    pub seq: u64,
    pub sat: usize,
    pub gs: usize,
    /// `None` when the entry was removed.
    pub state: Option<BindingState>,
    pub report: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub t: f64,
    pub seq: u64,
    pub sat: String,
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    ReportTick { sat: usize },
    ReportArrive { sat: usize, gs: usize, sent_at: f64 },
    Start { sat: usize, target: usize, protocol: Protocol },

    HrCreated { sat: usize },
    HrProcess { sat: usize },
    SyncArrive { sat: usize },
    SyncPersisted { sat: usize },
    SyncAck { sat: usize },
    WatchArrive { sat: usize },
    ClientReady { sat: usize },
    TargetReport { sat: usize },
    TargetBound { sat: usize },
    BoundAck { sat: usize },
    ReleaseArrive { sat: usize },

    EvictStart { sat: usize, pod: usize },
    PodStopBegin { sat: usize, pod: usize },
    PodStopped { sat: usize, pod: usize },
    EvictConfirmed { sat: usize, pod: usize },
    RemovalNotice { sat: usize },
    CleanupDone { sat: usize },
    AuthDone { sat: usize },
    RegisterArrive { sat: usize },
    RegisterCommit { sat: usize },
    RegisterAck { sat: usize },
    PodSyncDone { sat: usize },
    PodBinding { sat: usize },
    PodsRunning { sat: usize },
}

impl Event {
    fn name(&self) -> &'static str {
        match self {
            Self::ReportTick { .. } => "report_tick",
            Self::ReportArrive { .. } => "report_arrive",
            Self::Start { .. } => "handover_start",
            Self::HrCreated { .. } => "request_created",
            Self::HrProcess { .. } => "request_processing",
            Self::SyncArrive { .. } => "sync_arrive",
            Self::SyncPersisted { .. } => "sync_persisted",
            Self::SyncAck { .. } => "request_finished",
            Self::WatchArrive { .. } => "watch_push",
            Self::ClientReady { .. } => "client_ready",
            Self::TargetReport { .. } => "target_report",
            Self::TargetBound { .. } => "target_bound",
            Self::BoundAck { .. } => "bound_ack",
            Self::ReleaseArrive { .. } => "source_released",
            Self::EvictStart { .. } => "evict",
            Self::PodStopBegin { .. } => "pod_stop_begin",
            Self::PodStopped { .. } => "pod_stopped",
            Self::EvictConfirmed { .. } => "evict_confirmed",
            Self::RemovalNotice { .. } => "removal_notice",
            Self::CleanupDone { .. } => "cleanup_done",
            Self::AuthDone { .. } => "auth_done",
            Self::RegisterArrive { .. } => "register_arrive",
            Self::RegisterCommit { .. } => "register_commit",
            Self::RegisterAck { .. } => "register_ack",
            Self::PodSyncDone { .. } => "pod_sync_done",
            Self::PodBinding { .. } => "pod_binding",
            Self::PodsRunning { .. } => "pods_running",
        }
    }

    fn sat(&self) -> usize {
        match *self {
            Self::ReportTick { sat }
            | Self::ReportArrive { sat, .. }
            | Self::Start { sat, .. }
            | Self::HrCreated { sat }
            | Self::HrProcess { sat }
            | Self::SyncArrive { sat }
            | Self::SyncPersisted { sat }
            | Self::SyncAck { sat }
            | Self::WatchArrive { sat }
            | Self::ClientReady { sat }
            | Self::TargetReport { sat }
            | Self::TargetBound { sat }
            | Self::BoundAck { sat }
            | Self::ReleaseArrive { sat }
            | Self::EvictStart { sat, .. }
            | Self::PodStopBegin { sat, .. }
            | Self::PodStopped { sat, .. }
            | Self::EvictConfirmed { sat, .. }
            | Self::RemovalNotice { sat }
            | Self::CleanupDone { sat }
            | Self::AuthDone { sat }
            | Self::RegisterArrive { sat }
            | Self::RegisterCommit { sat }
            | Self::RegisterAck { sat }
            | Self::PodSyncDone { sat }
            | Self::PodBinding { sat }
            | Self::PodsRunning { sat } => sat,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    t: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    protocol: Protocol,
    source: usize,
    target: usize,
    t_start: f64,
    request: Option<usize>,
    node_visible_again: bool,
    binding_received: Option<f64>,
}

/// Per-satellite bookkeeping for measured invisibility and pod outages.
#[derive(Debug, Clone, Default)]
struct Outages {
    /// Per control node: the last instant this node is known to be held
    /// there, given its state and last accepted report.
    visible_until: BTreeMap<usize, f64>,
    gaps: Vec<(f64, f64)>,
    pods_down_since: Option<f64>,
    pod_outages: Vec<(f64, f64)>,
}

impl Outages {
    fn horizon(&self) -> f64 {
        self.visible_until.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn overlap(intervals: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    intervals.iter().map(|&(a, b)| (b.min(hi) - a.max(lo)).max(0.0)).fold(0.0, |acc, x| acc + x)
}

/// The whole simulated control plane.
pub struct Simulation {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    latency: LatencyModel,
    delays: DelayProfile,
    params: SimParams,
    control_nodes: BTreeMap<usize, ControlNodeState>,
    agents: Vec<SatelliteAgent>,
    inflight: Vec<Option<InFlight>>,
    deferred: Vec<VecDeque<(usize, Protocol)>>,
    outages: Vec<Outages>,
    records: Vec<HandoverRecord>,
    requests: Vec<HandoverRequest>,
    report_latencies: Vec<Vec<f64>>,
    history: Vec<RegistryEvent>,
    trace: Vec<TraceEntry>,
}

impl Simulation {
    /// Registers every satellite as `Bound` at its initial controller at
    /// t = 0 and starts periodic status reports with seeded phases.
    pub fn new(
        sats: &[SatId],
        initial: &[usize],
        latency: LatencyModel,
        delays: DelayProfile,
        params: SimParams,
        seed: u64,
    ) -> Self {
        assert_eq!(sats.len(), initial.len(), "one initial controller per satellite");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sim = Self {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            latency,
            delays,
            params,
            control_nodes: BTreeMap::new(),
            agents: Vec::with_capacity(sats.len()),
            inflight: vec![None; sats.len()],
            deferred: vec![VecDeque::new(); sats.len()],
            outages: vec![Outages::default(); sats.len()],
            records: Vec::new(),
            requests: Vec::new(),
            report_latencies: vec![Vec::new(); sats.len()],
            history: Vec::new(),
            trace: Vec::new(),
        };
        let window = params.visibility_window();
        for (idx, (&sat_id, &gs)) in sats.iter().zip(initial).enumerate() {
            let pods: Vec<Pod> = (0..params.pods_per_sat)
                .map(|p| Pod {
                    name: format!("{sat_id}-pod{p}"),
                    running: true,
                })
                .collect();
            sim.control_nodes
                .entry(gs)
                .or_insert_with(|| ControlNodeState::new(gs))
                .registry
                .insert(
                    idx,
                    RegistryEntry {
                        state: BindingState::Bound,
                        pods: pods.iter().map(|p| p.name.clone()).collect(),
                        last_report: Some(0.0),
                    },
                );
            sim.outages[idx].visible_until.insert(gs, window);
            sim.agents.push(SatelliteAgent {
                sat_id,
                current_gs: Some(gs),
                pending_gs: None,
                pods,
                pod_cidr: format!("10.{}.{}.0/24", idx / 256, idx % 256),
                report_interval: params.report_interval_s,
            });
            sim.log_registry(idx, gs, Some(BindingState::Bound), true);
            let phase = rng.gen::<f64>() * params.report_interval_s;
            sim.push(phase, Event::ReportTick { sat: idx });
        }
        sim
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn agents(&self) -> &[SatelliteAgent] {
        &self.agents
    }

    pub fn control_node(&self, gs: usize) -> Option<&ControlNodeState> {
        self.control_nodes.get(&gs)
    }

    pub fn records(&self) -> &[HandoverRecord] {
        &self.records
    }

    pub fn requests(&self) -> &[HandoverRequest] {
        &self.requests
    }

    pub fn history(&self) -> &[RegistryEvent] {
        &self.history
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn report_latencies(&self) -> &[Vec<f64>] {
        &self.report_latencies
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn in_flight(&self, sat: usize) -> bool {
        self.inflight[sat].is_some()
    }

    pub fn latency(&self, a: Endpoint, b: Endpoint, t: f64) -> Result<f64, SimError> {
        self.latency.latency(a, b, t)
    }

    /// Queues a handover to start at `t0`. Handovers that arrive while one
    /// is already running for the satellite wait for it to finish.
    pub fn schedule_handover(&mut self, sat: usize, target: usize, t0: f64, protocol: Protocol) {
        self.push(t0, Event::Start { sat, target, protocol });
    }

    /// Processes every event with time `<= until`.
    pub fn run_until(&mut self, until: f64) -> Result<(), SimError> {
        while let Some(next) = self.queue.peek() {
            if next.t > until {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.dispatch(ev)?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    /// Closes open invisibility and outage intervals at `end`.
    pub fn finish(&mut self, end: f64) {
        for o in &mut self.outages {
            let h = o.horizon();
            if h < end {
                o.gaps.push((h.max(0.0), end));
                o.visible_until.clear();
            }
            if let Some(since) = o.pods_down_since.take() {
                o.pod_outages.push((since, end));
            }
        }
    }

    pub fn run_seamless_handover(&mut self, sat: usize, target: usize, t0: f64) -> Result<HandoverRecord, SimError> {
        self.run_direct(sat, target, t0, Protocol::Seamless)
    }

    pub fn run_legacy_handover(&mut self, sat: usize, target: usize, t0: f64) -> Result<HandoverRecord, SimError> {
        self.run_direct(sat, target, t0, Protocol::Legacy)
    }

    fn run_direct(&mut self, sat: usize, target: usize, t0: f64, protocol: Protocol) -> Result<HandoverRecord, SimError> {
        // Everything strictly before t0 happens first.
        while let Some(next) = self.queue.peek() {
            if next.t >= t0 {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.dispatch(ev)?;
        }
        self.now = self.now.max(t0);
        self.begin(sat, target, protocol)?;
        let done = self.records.len();
        while self.records.len() == done {
            let Some(ev) = self.queue.pop() else {
                unreachable!("a started handover always has pending events");
            };
            self.dispatch(ev)?;
        }
        Ok(self.records[done].clone())
    }

    /// Whether some control node holds the node in a holding state with a
    /// report inside the visibility window at `t`. Valid for `t` up to the
    /// current simulation time.
    pub fn node_visible(&self, sat: usize, t: f64) -> bool {
        let o = &self.outages[sat];
        if o.gaps.iter().any(|&(a, b)| t >= a && t < b) {
            return false;
        }
        // Still-open gap that has not been closed by an event yet.
        !(t > o.horizon() && t <= self.now)
    }

    /// Closed intervals during which the node was invisible.
    pub fn invisibility_gaps(&self, sat: usize) -> &[(f64, f64)] {
        &self.outages[sat].gaps
    }

    fn push(&mut self, t: f64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { t, seq: self.seq, event });
    }

    fn after(&mut self, delay_s: f64, event: Event) {
        self.push(self.now + delay_s, event);
    }

    fn one_way(&self, a: Endpoint, b: Endpoint) -> Result<f64, SimError> {
        Ok(self.latency.latency(a, b, self.now)? / 1000.0)
    }

    fn node_id(&self, sat: usize) -> SatId {
        self.agents[sat].sat_id
    }

    fn log_registry(&mut self, sat: usize, gs: usize, state: Option<BindingState>, report: bool) {
        if self.params.record_history {
            self.seq += 1;
            self.history.push(RegistryEvent {
                t: self.now,
                seq: self.seq,
                sat,
                gs,
                state,
                report,
            });
        }
    }

    /// Records a gap if the node's visibility lapsed before `now`, then
    /// applies `update` to the per-controller horizon.
    fn touch_visibility(&mut self, sat: usize, gs: usize, visible_until: Option<f64>) {
        let now = self.now;
        let o = &mut self.outages[sat];
        let h = o.horizon();
        if h < now {
            o.gaps.push((h.max(0.0), now));
        }
        match visible_until {
            Some(v) => {
                o.visible_until.insert(gs, v);
            }
            None => {
                // Visible up to this instant through `gs`, no further.
                if let Some(v) = o.visible_until.get_mut(&gs) {
                    *v = v.min(now);
                }
            }
        }
    }

    fn set_state(&mut self, gs: usize, sat: usize, to: BindingState) -> Result<(), SimError> {
        let node = self.node_id(sat);
        let cn = self.control_nodes.entry(gs).or_insert_with(|| ControlNodeState::new(gs));
        cn.transition(sat, node, to)?;
        let entry = &cn.registry[&sat];
        let until = match (to.holds(), entry.last_report) {
            (true, Some(r)) => Some(r + self.params.visibility_window()),
            _ => None,
        };
        self.touch_visibility(sat, gs, until);
        self.log_registry(sat, gs, Some(to), false);
        Ok(())
    }

    fn accept_report(&mut self, gs: usize, sat: usize) -> bool {
        let now = self.now;
        let Some(entry) = self
            .control_nodes
            .get_mut(&gs)
            .and_then(|cn| cn.registry.get_mut(&sat))
        else {
            return false;
        };
        if !entry.state.holds() {
            return false;
        }
        entry.last_report = Some(now);
        let state = entry.state;
        self.touch_visibility(sat, gs, Some(now + self.params.visibility_window()));
        self.log_registry(sat, gs, Some(state), true);
        true
    }

    fn set_pods_running(&mut self, sat: usize, pod: Option<usize>, running: bool) {
        let now = self.now;
        let agent = &mut self.agents[sat];
        match pod {
            Some(p) => agent.pods[p].running = running,
            None => agent.pods.iter_mut().for_each(|p| p.running = running),
        }
        let all_up = agent.pods.iter().all(|p| p.running);
        let o = &mut self.outages[sat];
        match (all_up, o.pods_down_since) {
            (false, None) => o.pods_down_since = Some(now),
            (true, Some(since)) => {
                o.pod_outages.push((since, now));
                o.pods_down_since = None;
            }
            _ => {}
        }
    }

    fn log_trace(&mut self, sat: usize, seq: u64, event: &str) {
        if self.params.record_trace {
            self.trace.push(TraceEntry {
                t: self.now,
                seq,
                sat: self.agents[sat].sat_id.to_string(),
                event: event.to_string(),
            });
        }
    }

    fn begin(&mut self, sat: usize, target: usize, protocol: Protocol) -> Result<(), SimError> {
        let node = self.node_id(sat);
        if self.inflight[sat].is_some() {
            return Err(SimError::ConcurrentHandover(node));
        }
        let Some(source) = self.agents[sat].current_gs else {
            return Err(SimError::Precondition {
                sat: node,
                reason: "no active control channel".into(),
            });
        };
        if source == target {
            return Err(SimError::Precondition {
                sat: node,
                reason: format!("already managed by control node {target}"),
            });
        }
        if self.control_nodes.get(&source).and_then(|c| c.state_of(sat)) != Some(BindingState::Bound) {
            return Err(SimError::Precondition {
                sat: node,
                reason: format!("not bound at control node {source}"),
            });
        }
        self.control_nodes.entry(target).or_insert_with(|| ControlNodeState::new(target));
        self.inflight[sat] = Some(InFlight {
            protocol,
            source,
            target,
            t_start: self.now,
            request: None,
            node_visible_again: false,
            binding_received: None,
        });
        let sat_ep = Endpoint::Satellite(sat);
        match protocol {
            Protocol::Seamless => {
                let leg = self.one_way(sat_ep, Endpoint::Station(source))?;
                self.after(leg, Event::HrCreated { sat });
            }
            Protocol::Legacy => {
                let drain = self.delays.drain_per_pod;
                if self.agents[sat].pods.is_empty() {
                    self.after(drain, Event::EvictConfirmed { sat, pod: usize::MAX });
                } else {
                    self.after(drain, Event::EvictStart { sat, pod: 0 });
                }
            }
        }
        Ok(())
    }

    fn flight(&self, sat: usize) -> &InFlight {
        self.inflight[sat].as_ref().expect("handover event without a handover in flight")
    }

    fn request_mut(&mut self, sat: usize) -> &mut HandoverRequest {
        let idx = self.flight(sat).request.expect("request created");
        &mut self.requests[idx]
    }

    fn complete(&mut self, sat: usize, t_end: f64) {
        let f = self.inflight[sat].take().expect("in flight");
        let o = &self.outages[sat];
        let invisibility = overlap(&o.gaps, f.t_start, t_end);
        let pod_unavailability = overlap(&o.pod_outages, f.t_start, f64::INFINITY);
        self.records.push(HandoverRecord {
            sat_id: self.agents[sat].sat_id,
            t_start: f.t_start,
            t_end,
            duration: t_end - f.t_start,
            invisibility,
            pod_unavailability,
            protocol: f.protocol,
            source: f.source,
            target: f.target,
        });
        self.start_deferred(sat);
    }

    fn start_deferred(&mut self, sat: usize) {
        while let Some((target, protocol)) = self.deferred[sat].pop_front() {
            if self.agents[sat].current_gs != Some(target) {
                self.push(self.now, Event::Start { sat, target, protocol });
                break;
            }
        }
    }

    fn dispatch(&mut self, ev: Scheduled) -> Result<(), SimError> {
        self.now = ev.t;
        let sat = ev.event.sat();
        if !matches!(ev.event, Event::ReportTick { .. } | Event::ReportArrive { .. }) {
            self.log_trace(sat, ev.seq, ev.event.name());
        }
        let sat_ep = Endpoint::Satellite(sat);
        match ev.event {
            Event::ReportTick { sat } => {
                if let Some(gs) = self.agents[sat].current_gs {
                    let leg = self.one_way(sat_ep, Endpoint::Station(gs))?;
                    self.after(leg, Event::ReportArrive { sat, gs, sent_at: self.now });
                }
                self.after(self.params.report_interval_s, Event::ReportTick { sat });
            }
            Event::ReportArrive { sat, gs, sent_at } => {
                if self.accept_report(gs, sat) {
                    self.report_latencies[sat].push((self.now - sent_at) * 1000.0);
                    let legacy_rejoin = self.inflight[sat]
                        .as_ref()
                        .is_some_and(|f| f.protocol == Protocol::Legacy && f.target == gs && !f.node_visible_again);
                    if legacy_rejoin {
                        self.log_trace(sat, ev.seq, "first_report_accepted");
                        let f = self.inflight[sat].as_mut().expect("in flight");
                        f.node_visible_again = true;
                        self.maybe_finish_legacy(sat);
                    }
                }
            }
            Event::Start { sat, target, protocol } => {
                if self.inflight[sat].is_some() {
                    self.deferred[sat].push_back((target, protocol));
                } else if self.agents[sat].current_gs != Some(target) {
                    self.begin(sat, target, protocol)?;
                }
            }

            // Seamless handover.
            Event::HrCreated { sat } => {
                let f = self.flight(sat).clone();
                let id = self.requests.len();
                self.requests.push(HandoverRequest::new(
                    id as u64,
                    self.node_id(sat),
                    f.source,
                    f.target,
                    self.now,
                ));
                self.inflight[sat].as_mut().expect("in flight").request = Some(id);
                // The watch on the request rides the already-open channel.
                self.after(self.delays.controller_process, Event::HrProcess { sat });
            }
            Event::HrProcess { sat } => {
                let f = self.flight(sat).clone();
                let now = self.now;
                self.request_mut(sat).advance(RequestStatus::Processing, now);
                self.set_state(f.source, sat, BindingState::Releasing)?;
                let leg = self.one_way(Endpoint::Station(f.source), Endpoint::Station(f.target))?;
                self.after(leg, Event::SyncArrive { sat });
            }
            Event::SyncArrive { sat } => {
                self.after(self.delays.persist, Event::SyncPersisted { sat });
            }
            Event::SyncPersisted { sat } => {
                let f = self.flight(sat).clone();
                self.set_state(f.target, sat, BindingState::Released)?;
                let pods = self.control_nodes[&f.source].registry[&sat].pods.clone();
                self.control_nodes
                    .get_mut(&f.target)
                    .expect("target exists")
                    .registry
                    .get_mut(&sat)
                    .expect("entry created")
                    .pods = pods;
                let leg = self.one_way(Endpoint::Station(f.target), Endpoint::Station(f.source))?;
                self.after(leg, Event::SyncAck { sat });
            }
            Event::SyncAck { sat } => {
                let f = self.flight(sat).clone();
                let now = self.now;
                self.request_mut(sat).advance(RequestStatus::Finished, now);
                let leg = self.one_way(Endpoint::Station(f.source), sat_ep)?;
                self.after(leg, Event::WatchArrive { sat });
            }
            Event::WatchArrive { sat } => {
                self.after(self.delays.client_init, Event::ClientReady { sat });
            }
            Event::ClientReady { sat } => {
                let target = self.flight(sat).target;
                self.agents[sat].pending_gs = Some(target);
                let leg = self.one_way(sat_ep, Endpoint::Station(target))?;
                self.after(leg, Event::TargetReport { sat });
            }
            Event::TargetReport { sat } => {
                self.after(self.delays.status_report_process, Event::TargetBound { sat });
            }
            Event::TargetBound { sat } => {
                let target = self.flight(sat).target;
                self.set_state(target, sat, BindingState::Binding)?;
                self.set_state(target, sat, BindingState::Bound)?;
                self.accept_report(target, sat);
                let now = self.now;
                self.request_mut(sat).target_bound_at = Some(now);
                let leg = self.one_way(Endpoint::Station(target), sat_ep)?;
                self.after(leg, Event::BoundAck { sat });
            }
            Event::BoundAck { sat } => {
                let f = self.flight(sat).clone();
                let agent = &mut self.agents[sat];
                agent.current_gs = Some(f.target);
                agent.pending_gs = None;
                let leg = self.one_way(sat_ep, Endpoint::Station(f.source))?;
                self.after(leg, Event::ReleaseArrive { sat });
            }
            Event::ReleaseArrive { sat } => {
                let f = self.flight(sat).clone();
                self.set_state(f.source, sat, BindingState::Released)?;
                self.control_nodes
                    .get_mut(&f.source)
                    .expect("source exists")
                    .registry
                    .remove(&sat);
                let now = self.now;
                let req = self.request_mut(sat);
                req.source_released_at = Some(now);
                req.advance(RequestStatus::Completed, now);
                self.complete(sat, now);
            }

            // Legacy drain and re-join.
            Event::EvictStart { sat, pod } => {
                let source = self.flight(sat).source;
                let leg = self.one_way(Endpoint::Station(source), sat_ep)?;
                self.after(leg, Event::PodStopBegin { sat, pod });
            }
            Event::PodStopBegin { sat, pod } => {
                self.set_pods_running(sat, Some(pod), false);
                self.after(self.delays.pod_stop, Event::PodStopped { sat, pod });
            }
            Event::PodStopped { sat, pod } => {
                let source = self.flight(sat).source;
                let leg = self.one_way(sat_ep, Endpoint::Station(source))?;
                self.after(leg, Event::EvictConfirmed { sat, pod });
            }
            Event::EvictConfirmed { sat, pod } => {
                let next = pod.wrapping_add(1);
                if next < self.agents[sat].pods.len() {
                    self.after(self.delays.drain_per_pod, Event::EvictStart { sat, pod: next });
                } else {
                    // Node object deleted on the source.
                    let source = self.flight(sat).source;
                    self.control_nodes
                        .get_mut(&source)
                        .expect("source exists")
                        .registry
                        .remove(&sat);
                    self.touch_visibility(sat, source, None);
                    self.log_registry(sat, source, None, false);
                    self.agents[sat].current_gs = None;
                    let leg = self.one_way(Endpoint::Station(source), sat_ep)?;
                    self.after(leg, Event::RemovalNotice { sat });
                }
            }
            Event::RemovalNotice { sat } => {
                self.after(self.delays.legacy_cleanup, Event::CleanupDone { sat });
            }
            Event::CleanupDone { sat } => {
                let target = self.flight(sat).target;
                let rtt = 2.0 * self.one_way(sat_ep, Endpoint::Station(target))?;
                self.after(f64::from(self.delays.auth_roundtrips) * rtt, Event::AuthDone { sat });
            }
            Event::AuthDone { sat } => {
                let target = self.flight(sat).target;
                let leg = self.one_way(sat_ep, Endpoint::Station(target))?;
                self.after(leg, Event::RegisterArrive { sat });
            }
            Event::RegisterArrive { sat } => {
                self.after(self.delays.register, Event::RegisterCommit { sat });
            }
            Event::RegisterCommit { sat } => {
                let f = self.flight(sat).clone();
                let cn = self.control_nodes.get_mut(&f.target).expect("target exists");
                cn.registry.insert(
                    sat,
                    RegistryEntry {
                        state: BindingState::Bound,
                        pods: Vec::new(),
                        last_report: None,
                    },
                );
                self.log_registry(sat, f.target, Some(BindingState::Bound), false);
                let leg = self.one_way(Endpoint::Station(f.target), sat_ep)?;
                self.after(leg, Event::RegisterAck { sat });
                // Pod specs are fetched from the old control node, then scheduled.
                let rtt = 2.0 * self.one_way(Endpoint::Station(f.target), Endpoint::Station(f.source))?;
                self.after(rtt + self.delays.controller_process, Event::PodSyncDone { sat });
            }
            Event::RegisterAck { sat } => {
                let target = self.flight(sat).target;
                self.agents[sat].current_gs = Some(target);
                let leg = self.one_way(sat_ep, Endpoint::Station(target))?;
                self.after(leg, Event::ReportArrive { sat, gs: target, sent_at: self.now });
            }
            Event::PodSyncDone { sat } => {
                let target = self.flight(sat).target;
                let pods: Vec<String> = self.agents[sat].pods.iter().map(|p| p.name.clone()).collect();
                if let Some(e) = self.control_nodes.get_mut(&target).and_then(|c| c.registry.get_mut(&sat)) {
                    e.pods = pods;
                }
                let leg = self.one_way(Endpoint::Station(target), sat_ep)?;
                self.after(leg, Event::PodBinding { sat });
            }
            Event::PodBinding { sat } => {
                self.inflight[sat].as_mut().expect("in flight").binding_received = Some(self.now);
                self.after(self.delays.pod_start, Event::PodsRunning { sat });
                self.maybe_finish_legacy(sat);
            }
            Event::PodsRunning { sat } => {
                self.set_pods_running(sat, None, true);
                self.maybe_finish_legacy(sat);
            }
        }
        Ok(())
    }

    /// A legacy handover ends once the node is visible again and its pods
    /// are bound; the record is written when the pods are back up.
    fn maybe_finish_legacy(&mut self, sat: usize) {
        let Some(f) = self.inflight[sat].as_ref() else { return };
        let all_running = self.agents[sat].pods.iter().all(|p| p.running);
        if let (true, Some(bound_at), true) = (f.node_visible_again, f.binding_received, all_running) {
            let visible_at = self.outages[sat].gaps.last().map_or(bound_at, |g| g.1);
            self.complete(sat, bound_at.max(visible_at));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sats(n: u32) -> Vec<SatId> {
        (0..n).map(|slot| SatId { plane: 0, slot }).collect()
    }

    fn fixed(ms: f64) -> LatencyModel {
        LatencyModel::Fixed { one_way_ms: ms }
    }

    fn traced() -> SimParams {
        SimParams {
            record_history: true,
            record_trace: true,
            ..SimParams::default()
        }
    }

    #[test]
    fn transition_relation() {
        use BindingState::*;
        assert!(transition_allowed(None, Released));
        assert!(transition_allowed(Some(Released), Binding));
        assert!(transition_allowed(Some(Binding), Bound));
        assert!(transition_allowed(Some(Bound), Releasing));
        assert!(transition_allowed(Some(Releasing), Released));
        assert!(!transition_allowed(Some(Bound), Released));
        assert!(!transition_allowed(Some(Released), Bound));
        assert!(!transition_allowed(Some(Releasing), Bound));
        assert!(!transition_allowed(None, Bound));
    }

    #[test]
    fn illegal_transition_is_a_violation() {
        let mut cn = ControlNodeState::new(3);
        let node = SatId { plane: 0, slot: 0 };
        cn.transition(0, node, BindingState::Released).unwrap();
        let err = cn.transition(0, node, BindingState::Bound).unwrap_err();
        assert!(matches!(err, SimError::ProtocolViolation { gs: 3, .. }));
    }

    #[test]
    fn only_bound_nodes_are_scheduled() {
        let mut cn = ControlNodeState::new(0);
        let node = SatId { plane: 0, slot: 0 };
        cn.transition(0, node, BindingState::Released).unwrap();
        cn.transition(1, node, BindingState::Released).unwrap();
        cn.transition(1, node, BindingState::Binding).unwrap();
        cn.transition(1, node, BindingState::Bound).unwrap();
        assert_eq!(cn.bound_nodes().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn zero_everything_is_instant() {
        let mut sim = Simulation::new(&sats(1), &[0], fixed(0.0), DelayProfile::zero(), traced(), 1);
        let rec = sim.run_seamless_handover(0, 1, 0.0).unwrap();
        assert_eq!(rec.duration, 0.0);
        assert_eq!(rec.invisibility, 0.0);
        let mut sim = Simulation::new(&sats(1), &[0], fixed(0.0), DelayProfile::zero(), traced(), 1);
        let rec = sim.run_legacy_handover(0, 1, 0.0).unwrap();
        assert_eq!((rec.duration, rec.invisibility, rec.pod_unavailability), (0.0, 0.0, 0.0));
    }

    #[test]
    fn seamless_chain_at_10ms() {
        let mut sim = Simulation::new(&sats(1), &[0], fixed(10.0), DelayProfile::zero(), traced(), 1);
        let rec = sim.run_seamless_handover(0, 1, 5.0).unwrap();
        assert_abs_diff_eq!(rec.duration, 0.070, epsilon = 1e-12);
        assert_eq!(rec.invisibility, 0.0);
        assert_eq!(rec.pod_unavailability, 0.0);
        let req = &sim.requests()[0];
        assert!(req.target_bound_at.unwrap() < req.source_released_at.unwrap());
        assert_eq!(sim.control_node(1).unwrap().state_of(0), Some(BindingState::Bound));
        assert_eq!(sim.control_node(0).unwrap().state_of(0), None);
        assert_eq!(sim.agents()[0].current_gs, Some(1));
    }

    #[test]
    fn legacy_calibration_single_pod() {
        let mut sim = Simulation::new(&sats(1), &[0], fixed(0.1), DelayProfile::default(), traced(), 1);
        let rec = sim.run_legacy_handover(0, 1, 30.0).unwrap();
        assert_abs_diff_eq!(rec.duration, 8.35, epsilon = 0.01);
        assert_abs_diff_eq!(rec.invisibility, 4.5, epsilon = 0.01);
        assert_abs_diff_eq!(rec.pod_unavailability, 9.7, epsilon = 0.01);
        assert!(!sim.node_visible(0, 30.0 + 5.0));
        assert!(sim.node_visible(0, 30.0 + 1.0));
    }

    #[test]
    fn legacy_outages_are_positive_when_delays_are() {
        let delays = DelayProfile {
            pod_stop: 0.3,
            register: 0.2,
            ..DelayProfile::zero()
        };
        let mut sim = Simulation::new(&sats(1), &[0], fixed(0.0), delays, traced(), 1);
        let rec = sim.run_legacy_handover(0, 1, 0.0).unwrap();
        assert!(rec.invisibility > 0.0);
        assert!(rec.pod_unavailability > 0.0);
        assert!(rec.invisibility <= rec.duration);
    }

    #[test]
    fn concurrent_and_precondition_errors() {
        let mut sim = Simulation::new(&sats(1), &[0], fixed(10.0), DelayProfile::default(), traced(), 1);
        assert!(matches!(
            sim.run_seamless_handover(0, 0, 0.0),
            Err(SimError::Precondition { .. })
        ));
        sim.schedule_handover(0, 1, 1.0, Protocol::Legacy);
        sim.run_until(2.0).unwrap();
        assert!(sim.in_flight(0));
        assert!(matches!(
            sim.run_seamless_handover(0, 2, 2.0),
            Err(SimError::ConcurrentHandover(_))
        ));
    }

    #[test]
    fn scheduled_handovers_queue_behind_running_one() {
        let mut sim = Simulation::new(&sats(1), &[0], fixed(1.0), DelayProfile::default(), traced(), 1);
        sim.schedule_handover(0, 1, 10.0, Protocol::Legacy);
        sim.schedule_handover(0, 2, 11.0, Protocol::Legacy);
        sim.run_until(100.0).unwrap();
        let recs = sim.records();
        assert_eq!(recs.len(), 2);
        assert!(recs[1].t_start >= recs[0].t_end);
        assert_eq!(sim.agents()[0].current_gs, Some(2));
    }

    #[test]
    fn latency_models() {
        let m = fixed(3.0);
        assert_eq!(m.latency(Endpoint::Station(1), Endpoint::Station(1), 0.0).unwrap(), 0.0);
        assert_eq!(m.latency(Endpoint::Satellite(0), Endpoint::Station(1), 0.0).unwrap(), 3.0);

        let field = DistanceField::from_rows(0.0, &[vec![299.792458, f64::INFINITY]]);
        let topo = LatencyModel::Topology {
            fields: Arc::new(vec![field]),
            stations: Arc::new(vec![
                GroundStation::new(0, "a", 0.0, 0.0),
                GroundStation::new(1, "b", 0.0, 180.0),
            ]),
            terrestrial_factor: 2.0,
        };
        assert_abs_diff_eq!(
            topo.latency(Endpoint::Satellite(0), Endpoint::Station(0), 0.0).unwrap(),
            1.0,
            epsilon = 1e-9
        );
        // 2 * pi * 6371 km / c
        assert_abs_diff_eq!(
            topo.latency(Endpoint::Station(0), Endpoint::Station(1), 0.0).unwrap(),
            133.526,
            epsilon = 1e-3
        );
        assert!(matches!(
            topo.latency(Endpoint::Satellite(0), Endpoint::Station(1), 0.0),
            Err(SimError::Unreachable { .. })
        ));
    }

    #[test]
    fn steady_state_reports_keep_node_visible() {
        let mut sim = Simulation::new(&sats(2), &[0, 1], fixed(5.0), DelayProfile::default(), traced(), 1);
        sim.run_until(300.0).unwrap();
        for t in (0..30_000).map(|i| i as f64 * 0.01) {
            assert!(sim.node_visible(0, t) && sim.node_visible(1, t));
        }
        assert!(sim.report_latencies()[0].len() >= 29);
        assert!(sim.report_latencies()[0].iter().all(|&ms| (ms - 5.0).abs() < 1e-9));
    }

    #[test]
    fn pod_cidrs_are_unique() {
        let sim = Simulation::new(&sats(300), &vec![0; 300], fixed(1.0), DelayProfile::default(), SimParams::default(), 1);
        let mut cidrs: Vec<&str> = sim.agents().iter().map(|a| a.pod_cidr.as_str()).collect();
        cidrs.sort_unstable();
        cidrs.dedup();
        assert_eq!(cidrs.len(), 300);
    }
}
