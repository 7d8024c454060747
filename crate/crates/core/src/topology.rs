//! Time-indexed satellite/ground graphs and shortest-path distance fields.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::orbit::{propagate, station_position, EcefPosition, GroundStation, SatelliteElement, WalkerShell};

/// Speed of light, km per millisecond.
pub const LIGHT_KM_PER_MS: f64 = 299.792_458;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IslMode {
    /// Same-slot pairing across adjacent planes.
    #[default]
    Grid,
    /// Nearest satellite in each adjacent plane, recomputed per snapshot.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyParams {
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: f64,
    /// Cap on simultaneous ground links per satellite (closest first).
    #[serde(default)]
    pub max_gsl_per_sat: Option<usize>,
    #[serde(default)]
    pub isl_mode: IslMode,
}

fn default_min_elevation() -> f64 {
    25.0
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            min_elevation_deg: default_min_elevation(),
            max_gsl_per_sat: None,
            isl_mode: IslMode::Grid,
        }
    }
}

/// The graph at one instant. Satellites are addressed by their flat,
/// plane-major index; stations by `gs_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub t: f64,
    pub sat_positions: Vec<EcefPosition>,
    pub station_positions: Vec<EcefPosition>,
    pub isl_edges: Vec<(usize, usize, f64)>,
    pub gsl_edges: Vec<(usize, usize, f64)>,
}

impl TopologySnapshot {
    pub fn n_sats(&self) -> usize {
        self.sat_positions.len()
    }

    pub fn n_stations(&self) -> usize {
        self.station_positions.len()
    }

    pub fn isl_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_sats()];
        for &(a, b, _) in &self.isl_edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

/// Shortest-path lengths from every satellite to every station at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub t: f64,
    pub n_sats: usize,
    pub n_stations: usize,
    /// Row-major `[sat][station]`, `f64::INFINITY` where unreachable.
    pub d: Vec<f64>,
}

impl DistanceField {
    pub fn new(t: f64, n_sats: usize, n_stations: usize) -> Self {
        Self {
            t,
            n_sats,
            n_stations,
            d: vec![f64::INFINITY; n_sats * n_stations],
        }
    }

    /// Builds a field from a `[sat][station]` matrix.
    pub fn from_rows(t: f64, rows: &[Vec<f64>]) -> Self {
        let n_sats = rows.len();
        let n_stations = rows.first().map_or(0, Vec::len);
        let mut field = Self::new(t, n_sats, n_stations);
        for (s, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n_stations, "ragged distance matrix");
            field.d[s * n_stations..(s + 1) * n_stations].copy_from_slice(row);
        }
        field
    }

    #[inline]
    pub fn get(&self, sat: usize, gs: usize) -> f64 {
        self.d[sat * self.n_stations + gs]
    }

    #[inline]
    pub fn set(&mut self, sat: usize, gs: usize, km: f64) {
        self.d[sat * self.n_stations + gs] = km;
    }

    pub fn reachable(&self, sat: usize, gs: usize) -> bool {
        self.get(sat, gs).is_finite()
    }

    pub fn row(&self, sat: usize) -> &[f64] {
        &self.d[sat * self.n_stations..(sat + 1) * self.n_stations]
    }
}

#[derive(Serialize, Deserialize)]
struct DistanceFieldRepr {
    t: f64,
    n_sats: usize,
    n_stations: usize,
    d: Vec<Vec<Option<f64>>>,
    reachable: Vec<Vec<bool>>,
}

impl Serialize for DistanceField {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows = (0..self.n_sats).map(|s| self.row(s));
        DistanceFieldRepr {
            t: self.t,
            n_sats: self.n_sats,
            n_stations: self.n_stations,
            d: rows
                .clone()
                .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
            reachable: rows.map(|r| r.iter().map(|v| v.is_finite()).collect()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DistanceField {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = DistanceFieldRepr::deserialize(deserializer)?;
        let mut field = DistanceField::new(repr.t, repr.n_sats, repr.n_stations);
        if repr.d.len() != repr.n_sats || repr.d.iter().any(|r| r.len() != repr.n_stations) {
            return Err(serde::de::Error::custom("distance matrix shape mismatch"));
        }
        for (s, row) in repr.d.iter().enumerate() {
            for (g, v) in row.iter().enumerate() {
                field.set(s, g, v.unwrap_or(f64::INFINITY));
            }
        }
        Ok(field)
    }
}

/// +Grid inter-satellite links as undirected flat-index pairs, each listed
/// once with the smaller index first.
pub fn build_isl_grid(shell: &WalkerShell) -> Vec<(usize, usize)> {
    let planes = shell.planes as usize;
    let spp = shell.sats_per_plane as usize;
    let idx = |p: usize, s: usize| p * spp + s;
    let mut edges = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    for p in 0..planes {
        for s in 0..spp {
            link(idx(p, s), idx(p, (s + 1) % spp));
            if p + 1 < planes {
                link(idx(p, s), idx(p + 1, s));
            } else if !shell.is_star() {
                link(idx(p, s), idx(0, s));
            }
        }
    }
    edges.into_iter().collect()
}

fn nearest_plane_links(shell: &WalkerShell, positions: &[EcefPosition]) -> Vec<(usize, usize)> {
    let planes = shell.planes as usize;
    let spp = shell.sats_per_plane as usize;
    let mut edges = BTreeSet::new();
    for p in 0..planes {
        for s in 0..spp {
            let a = p * spp + s;
            if spp > 1 {
                let b = p * spp + (s + 1) % spp;
                if a != b {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let neighbours = if shell.is_star() {
                [p.checked_add(1).filter(|&q| q < planes), p.checked_sub(1)]
            } else {
                [Some((p + 1) % planes), Some((p + planes - 1) % planes)]
            };
            for q in neighbours.into_iter().flatten().filter(|&q| q != p) {
                let b = (0..spp)
                    .map(|t| q * spp + t)
                    .min_by(|&x, &y| {
                        positions[a]
                            .distance(&positions[x])
                            .total_cmp(&positions[a].distance(&positions[y]))
                    })
                    .expect("plane has satellites");
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    edges.into_iter().collect()
}

/// Elevation of `sat` above the local horizon of a station at `gs`, degrees.
pub fn elevation_deg(sat: &EcefPosition, gs: &EcefPosition) -> f64 {
    let los = sat.sub(gs);
    let range = los.norm();
    if range == 0.0 {
        return 90.0;
    }
    let sin_el = (los.dot(gs) / (range * gs.norm())).clamp(-1.0, 1.0);
    sin_el.asin().to_degrees()
}

pub fn visible(sat: &EcefPosition, gs: &EcefPosition, min_elevation_deg: f64) -> bool {
    elevation_deg(sat, gs) >= min_elevation_deg
}

pub fn build_snapshot(
    shell: &WalkerShell,
    elements: &[SatelliteElement],
    stations: &[GroundStation],
    t: f64,
    params: &TopologyParams,
) -> TopologySnapshot {
    let sat_positions: Vec<EcefPosition> = elements.iter().map(|e| propagate(e, t)).collect();
    let station_positions: Vec<EcefPosition> = stations.iter().map(station_position).collect();

    let pairs = match params.isl_mode {
        IslMode::Grid => build_isl_grid(shell),
        IslMode::Nearest => nearest_plane_links(shell, &sat_positions),
    };
    let isl_edges = pairs
        .into_iter()
        .map(|(a, b)| (a, b, sat_positions[a].distance(&sat_positions[b])))
        .collect();

    let mut gsl_edges = Vec::new();
    for (s, sp) in sat_positions.iter().enumerate() {
        let mut links: Vec<(usize, usize, f64)> = station_positions
            .iter()
            .enumerate()
            .filter(|(_, gp)| visible(sp, gp, params.min_elevation_deg))
            .map(|(g, gp)| (s, g, sp.distance(gp)))
            .collect();
        if let Some(cap) = params.max_gsl_per_sat {
            links.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)));
            links.truncate(cap);
            links.sort_by_key(|l| l.1);
        }
        gsl_edges.extend(links);
    }

    TopologySnapshot {
        t,
        sat_positions,
        station_positions,
        isl_edges,
        gsl_edges,
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra over a weighted adjacency list.
pub fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in &adjacency[node] {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(HeapEntry { dist: nd, node: next });
            }
        }
    }
    dist
}

/// Runs one Dijkstra per station over the union of ISL and GSL edges.
/// Stations are graph nodes too, so paths may relay through another station.
pub fn shortest_distances(snapshot: &TopologySnapshot) -> DistanceField {
    let n_sats = snapshot.n_sats();
    let n_stations = snapshot.n_stations();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_sats + n_stations];
    for &(a, b, w) in &snapshot.isl_edges {
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    }
    for &(s, g, w) in &snapshot.gsl_edges {
        adjacency[s].push((n_sats + g, w));
        adjacency[n_sats + g].push((s, w));
    }

    let mut field = DistanceField::new(snapshot.t, n_sats, n_stations);
    for g in 0..n_stations {
        let dist = dijkstra(&adjacency, n_sats + g);
        for (s, d) in dist.iter().take(n_sats).enumerate() {
            field.set(s, g, *d);
        }
    }
    field
}

/// Builds the distance fields for every sample time, in order.
pub fn build_fields(
    shell: &WalkerShell,
    elements: &[SatelliteElement],
    stations: &[GroundStation],
    times: &[f64],
    params: &TopologyParams,
) -> Vec<DistanceField> {
    times
        .par_iter()
        .map(|&t| shortest_distances(&build_snapshot(shell, elements, stations, t, params)))
        .collect()
}

/// Sample instants `0, cadence, 2*cadence, ...` up to and including `horizon`.
pub fn sample_times(horizon: f64, cadence: f64) -> Vec<f64> {
    assert!(cadence > 0.0, "cadence must be positive");
    let n = (horizon / cadence + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * cadence).collect()
}

/// Index of the field nearest in time to `t`; earlier wins on a tie.
pub fn nearest_field(fields: &[DistanceField], t: f64) -> Option<&DistanceField> {
    let idx = fields.partition_point(|f| f.t < t);
    match (idx.checked_sub(1).and_then(|i| fields.get(i)), fields.get(idx)) {
        (Some(before), Some(after)) => {
            if t - before.t <= after.t - t {
                Some(before)
            } else {
                Some(after)
            }
        }
        (Some(f), None) | (None, Some(f)) => Some(f),
        (None, None) => None,
    }
}

pub fn distance_to_latency(km: f64) -> f64 {
    km / LIGHT_KM_PER_MS
}

/// One CSV row per (t, sat, station, km); unreachable pairs carry `inf`.
pub fn write_fields_csv<W: Write>(fields: &[DistanceField], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t_s", "sat", "station", "km"])?;
    for f in fields {
        for s in 0..f.n_sats {
            for g in 0..f.n_stations {
                let d = f.get(s, g);
                let km = if d.is_finite() { format!("{d:.6}") } else { "inf".to_string() };
                wtr.write_record([format!("{}", f.t), s.to_string(), g.to_string(), km])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
