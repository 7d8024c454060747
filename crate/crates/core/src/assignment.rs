//! Satellite-side controller assignment: sample distances to every
//! controller over a horizon, interpolate them, and scan at a finer
//! decision step for handovers gated by a hysteresis ratio.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::AssignmentError;
use crate::orbit::{propagate, EcefPosition, SatelliteElement};
use crate::topology::{nearest_field, DistanceField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Straight-line distance from satellite to station.
    #[default]
    Geometric,
    /// Shortest-path length through the satellite network.
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentParams {
    #[serde(default = "defaults::horizon")]
    pub horizon_s: f64,
    #[serde(default = "defaults::sample_dt")]
    pub sample_dt_s: f64,
    #[serde(default = "defaults::decide_dt")]
    pub decide_dt_s: f64,
    /// Hysteresis ratio. 0.9 is a local default, not a published value.
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default)]
    pub metric: DistanceMetric,
}

mod defaults {
    pub fn horizon() -> f64 {
        43_200.0
    }
    pub fn sample_dt() -> f64 {
        60.0
    }
    pub fn decide_dt() -> f64 {
        1.0
    }
    pub fn delta() -> f64 {
        0.9
    }
}

impl Default for AssignmentParams {
    fn default() -> Self {
        Self {
            horizon_s: defaults::horizon(),
            sample_dt_s: defaults::sample_dt(),
            decide_dt_s: defaults::decide_dt(),
            delta: defaults::delta(),
            metric: DistanceMetric::Geometric,
        }
    }
}

impl AssignmentParams {
    pub fn validate(&self) -> Result<(), AssignmentError> {
        let bad = |msg: &str| Err(AssignmentError::InvalidParams(msg.to_string()));
        if !(self.decide_dt_s > 0.0) {
            return bad("decide_dt_s must be positive");
        }
        if self.decide_dt_s > self.sample_dt_s {
            return bad("decide_dt_s must not exceed sample_dt_s");
        }
        if self.sample_dt_s > self.horizon_s {
            return bad("sample_dt_s must not exceed horizon_s");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A ground controller as seen by the assignment logic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub gs_id: usize,
    pub position: EcefPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub gs_id: usize,
    /// `(t, km)` pairs with strictly increasing `t`, spanning `[0, horizon]`.
    pub samples: Vec<(f64, f64)>,
    pub horizon: f64,
}

impl DistanceSeries {
    pub fn interpolate(&self, t: f64) -> Result<f64, AssignmentError> {
        interpolate(self, t)
    }
}

/// Piecewise-linear value of the series at `t`.
pub fn interpolate(series: &DistanceSeries, t: f64) -> Result<f64, AssignmentError> {
    if !(0.0..=series.horizon).contains(&t) {
        return Err(AssignmentError::OutOfHorizon {
            t,
            horizon: series.horizon,
        });
    }
    let samples = &series.samples;
    let i = samples.partition_point(|&(ts, _)| ts <= t);
    if i == 0 {
        return Ok(samples[0].1);
    }
    Ok(lerp(samples, i - 1, t))
}

fn lerp(samples: &[(f64, f64)], i: usize, t: f64) -> f64 {
    let (t0, d0) = samples[i];
    match samples.get(i + 1) {
        Some(&(t1, d1)) if t > t0 => d0 + (d1 - d0) * (t - t0) / (t1 - t0),
        _ => d0,
    }
}

/// Forward-only evaluation for monotone scans.
struct Cursor<'a> {
    samples: &'a [(f64, f64)],
    i: usize,
}

impl<'a> Cursor<'a> {
    fn new(series: &'a DistanceSeries) -> Self {
        Self {
            samples: &series.samples,
            i: 0,
        }
    }

    fn at(&mut self, t: f64) -> f64 {
        while self.i + 1 < self.samples.len() && self.samples[self.i + 1].0 <= t {
            self.i += 1;
        }
        lerp(self.samples, self.i, t)
    }
}

/// `0, dt, 2dt, ...` with `horizon` appended if the grid misses it.
fn sample_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    if horizon - times[n] > 1e-9 {
        times.push(horizon);
    }
    times
}

/// Samples `distance(t, controller)` on the `sample_dt_s` grid.
pub fn sample_with<F>(
    controllers: &[Controller],
    params: &AssignmentParams,
    distance: F,
) -> Result<Vec<DistanceSeries>, AssignmentError>
where
    F: Fn(f64, &Controller) -> f64,
{
    params.validate()?;
    if controllers.is_empty() {
        return Err(AssignmentError::NoControllers);
    }
    let times = sample_grid(params.horizon_s, params.sample_dt_s);
    let mut series: Vec<DistanceSeries> = controllers
        .iter()
        .map(|c| DistanceSeries {
            gs_id: c.gs_id,
            samples: times.iter().map(|&t| (t, distance(t, c))).collect(),
            horizon: params.horizon_s,
        })
        .collect();
    series.sort_by_key(|s| s.gs_id);
    Ok(series)
}

/// Straight-line distances from the propagated satellite to each controller.
pub fn sample_distances(
    sat: &SatelliteElement,
    controllers: &[Controller],
    params: &AssignmentParams,
) -> Result<Vec<DistanceSeries>, AssignmentError> {
    sample_with(controllers, params, |t, c| propagate(sat, t).distance(&c.position))
}

/// Network shortest-path distances, read from the snapshot nearest in time
/// to each sample instant.
pub fn sample_network_distances(
    sat_index: usize,
    fields: &[DistanceField],
    controllers: &[Controller],
    params: &AssignmentParams,
) -> Result<Vec<DistanceSeries>, AssignmentError> {
    if fields.is_empty() {
        return Err(AssignmentError::InvalidParams("network metric needs snapshots".into()));
    }
    sample_with(controllers, params, |t, c| {
        nearest_field(fields, t).map_or(f64::INFINITY, |f| f.get(sat_index, c.gs_id))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledHandover {
    pub t: f64,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverSchedule {
    pub initial: usize,
    pub events: Vec<ScheduledHandover>,
}

impl HandoverSchedule {
    /// Controller in charge at `t` (events take effect at their own instant).
    pub fn controller_at(&self, t: f64) -> usize {
        let i = self.events.partition_point(|e| e.t <= t);
        if i == 0 {
            self.initial
        } else {
            self.events[i - 1].target
        }
    }

    /// `(t, source, target)` for every event.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        let sources = std::iter::once(self.initial).chain(self.events.iter().map(|e| e.target));
        self.events.iter().zip(sources).map(|(e, src)| (e.t, src, e.target))
    }
}

fn decision_ticks(params: &AssignmentParams) -> impl Iterator<Item = f64> {
    let n = (params.horizon_s / params.decide_dt_s + 1e-9).floor() as usize;
    let dt = params.decide_dt_s;
    (0..=n).map(move |i| i as f64 * dt)
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Scans the decision grid and switches to the nearest controller only when
/// its distance is below `delta` times the current controller's distance.
pub fn predict_handovers(
    series_set: &[DistanceSeries],
    params: &AssignmentParams,
) -> Result<HandoverSchedule, AssignmentError> {
    params.validate()?;
    if series_set.is_empty() {
        return Err(AssignmentError::NoControllers);
    }
    if let Some(s) = series_set.iter().find(|s| s.horizon < params.horizon_s) {
        return Err(AssignmentError::OutOfHorizon {
            t: params.horizon_s,
            horizon: s.horizon,
        });
    }
    let mut ordered: Vec<&DistanceSeries> = series_set.iter().collect();
    ordered.sort_by_key(|s| s.gs_id);
    let mut cursors: Vec<Cursor> = ordered.iter().map(|s| Cursor::new(s)).collect();
    let mut values = vec![0.0; ordered.len()];

    let at_zero: Vec<f64> = cursors.iter_mut().map(|c| c.at(0.0)).collect();
    let initial = argmin(&at_zero);
    let mut current = initial;
    let mut events = Vec::new();
    for t in decision_ticks(params) {
        for (v, c) in values.iter_mut().zip(cursors.iter_mut()) {
            *v = c.at(t);
        }
        let nearest = argmin(&values);
        if nearest != current && values[nearest] / values[current] < params.delta {
            events.push(ScheduledHandover {
                t,
                target: ordered[nearest].gs_id,
            });
            current = nearest;
        }
    }
    Ok(HandoverSchedule {
        initial: ordered[initial].gs_id,
        events,
    })
}

/// Mean distance to the assigned controller over the decision grid.
pub fn mean_assigned_distance(
    schedule: &HandoverSchedule,
    series_set: &[DistanceSeries],
    params: &AssignmentParams,
) -> Result<f64, AssignmentError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in decision_ticks(params) {
        let gs = schedule.controller_at(t);
        let series = series_set
            .iter()
            .find(|s| s.gs_id == gs)
            .ok_or(AssignmentError::NoControllers)?;
        total += interpolate(series, t)?;
        n += 1;
    }
    Ok(total / n as f64)
}

/// CSV rows `(sat_id, t, source_gs, target_gs)`.
pub fn write_schedules_csv<W: Write>(schedules: &[(String, HandoverSchedule)], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["sat_id", "t", "source_gs", "target_gs"])?;
    for (sat, schedule) in schedules {
        for (t, src, dst) in schedule.transitions() {
            wtr.write_record([sat.clone(), format!("{t}"), src.to_string(), dst.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
