//! Control-node placement: minimise the worst satellite-to-controller
//! shortest-path distance over a set of topology snapshots.
//!
//! The main heuristic clusters snapshots into representatives, grows a
//! controller set greedily and then refines it with first-improvement swaps.
//! Exhaustive, random and single-station baselines share the same objective.

use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PlacementError;
use crate::topology::{distance_to_latency, DistanceField};

pub const DEFAULT_MAX_PASSES: usize = 50;
pub const DEFAULT_EXHAUSTIVE_BUDGET: f64 = 2e6;
const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMethod {
    Cnpa,
    Exhaustive,
    Random,
    Single,
}

impl PlacementMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cnpa => "cnpa",
            Self::Exhaustive => "exhaustive",
            Self::Random => "random",
            Self::Single => "single",
        }
    }
}

impl std::str::FromStr for PlacementMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnpa" => Ok(Self::Cnpa),
            "exhaustive" => Ok(Self::Exhaustive),
            "random" => Ok(Self::Random),
            "single" => Ok(Self::Single),
            other => Err(format!("unknown placement method `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlacementProblem {
    pub fields: Vec<DistanceField>,
    pub candidates: Vec<usize>,
    pub k: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Score greedy rounds on every snapshot instead of the representatives.
    pub greedy_on_full: bool,
    pub max_passes: usize,
}

impl PlacementProblem {
    pub fn new(fields: Vec<DistanceField>, candidates: Vec<usize>, k: usize, clusters: usize, seed: u64) -> Self {
        Self {
            fields,
            candidates,
            k,
            clusters,
            seed,
            greedy_on_full: false,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }

    pub fn validate(&self) -> Result<(), PlacementError> {
        if self.k == 0 || self.k > self.candidates.len() {
            return Err(PlacementError::InvalidProblem(format!(
                "k={} must lie in 1..={}",
                self.k,
                self.candidates.len()
            )));
        }
        if self.clusters == 0 || self.clusters > self.fields.len() {
            return Err(PlacementError::InvalidProblem(format!(
                "clusters={} must lie in 1..={}",
                self.clusters,
                self.fields.len()
            )));
        }
        let n_st = self.fields[0].n_stations;
        if let Some(bad) = self.candidates.iter().find(|&&g| g >= n_st) {
            return Err(PlacementError::InvalidProblem(format!("candidate {bad} is not a station")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSolution {
    #[serde(rename = "selected_ids")]
    pub selected: Vec<usize>,
    #[serde(with = "finite_or_null")]
    pub objective_km: f64,
    #[serde(with = "finite_or_null")]
    pub objective_ms: f64,
    pub method: PlacementMethod,
    pub seed: Option<u64>,
}

impl PlacementSolution {
    fn scored<F: Borrow<DistanceField>>(
        mut selected: Vec<usize>,
        fields: &[F],
        method: PlacementMethod,
        seed: Option<u64>,
    ) -> Result<Self, PlacementError> {
        selected.sort_unstable();
        let objective_km = evaluate(&selected, fields)?;
        Ok(Self {
            selected,
            objective_km,
            objective_ms: distance_to_latency(objective_km),
            method,
            seed,
        })
    }
}

/// JSON has no infinity; an infeasible objective is written as `null`.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Worst case over snapshots and satellites of the distance to the nearest
/// selected station. Infinite when some satellite reaches no selected station.
pub fn evaluate<F: Borrow<DistanceField>>(selected: &[usize], fields: &[F]) -> Result<f64, PlacementError> {
    if selected.is_empty() {
        return Err(PlacementError::EmptySelection);
    }
    let mut worst: f64 = 0.0;
    for field in fields {
        let field = field.borrow();
        for s in 0..field.n_sats {
            let row = field.row(s);
            let nearest = selected.iter().map(|&g| row[g]).fold(f64::INFINITY, f64::min);
            worst = worst.max(nearest);
            if worst == f64::INFINITY {
                return Ok(worst);
            }
        }
    }
    Ok(worst)
}

/// Flattened, z-scored feature vectors. Unreachable entries become twice the
/// largest finite distance so they stay comparable.
fn standardized_features(fields: &[DistanceField]) -> Vec<Vec<f64>> {
    let max_finite = fields
        .iter()
        .flat_map(|f| f.d.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let unreachable = 2.0 * max_finite;
    let mut rows: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| f.d.iter().map(|&v| if v.is_finite() { v } else { unreachable }).collect())
        .collect();

    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            for r in &mut rows {
                r[j] = (r[j] - mean) / sd;
            }
        }
    }
    rows
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Guard against rounding walking past the last positive weight.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // Every point coincides with a centre already; duplicates end up
            // as empty clusters and are dropped.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Indices (ascending) of the snapshots chosen as cluster representatives.
pub fn representative_indices(fields: &[DistanceField], c: usize, seed: u64) -> Vec<usize> {
    let n = fields.len();
    if n == 0 || c == 0 {
        return Vec::new();
    }
    if c >= n {
        return (0..n).collect();
    }
    let points = standardized_features(fields);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, c, &mut rng);
    let dim = points[0].len();
    let mut assignment = vec![0usize; n];

    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest_centroid(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; c];
        let mut counts = vec![0usize; c];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (cl, centroid) in centroids.iter_mut().enumerate() {
            if counts[cl] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[cl].iter().map(|s| s / counts[cl] as f64).collect();
            shift = shift.max(sq_dist(&updated, centroid).sqrt());
            *centroid = updated;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest_centroid(p, &centroids);
    }

    let mut reps: Vec<usize> = (0..c)
        .filter_map(|cl| {
            (0..n)
                .filter(|&i| assignment[i] == cl)
                .min_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[cl]).total_cmp(&sq_dist(&points[b], &centroids[cl]))
                })
        })
        .collect();
    reps.sort_unstable();
    reps
}

/// Clusters the snapshots and returns one representative per non-empty
/// cluster, in time order.
pub fn select_representatives(fields: &[DistanceField], c: usize, seed: u64) -> Vec<DistanceField> {
    representative_indices(fields, c, seed)
        .into_iter()
        .map(|i| fields[i].clone())
        .collect()
}

/// Grows the selection one station per round, each time adding the station
/// that minimises the objective. Among equal objectives the station leaving
/// fewer unreachable satellites wins, then the lowest id.
pub fn greedy_select<F: Borrow<DistanceField> + Sync>(
    fields: &[F],
    candidates: &[usize],
    k: usize,
) -> Result<Vec<usize>, PlacementError> {
    if k == 0 || k > candidates.len() {
        return Err(PlacementError::InvalidProblem(format!(
            "k={k} must lie in 1..={}",
            candidates.len()
        )));
    }
    let mut pool: Vec<usize> = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();

    // Current per-(snapshot, satellite) distance to the nearest selected station.
    let mut nearest: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| vec![f64::INFINITY; f.borrow().n_sats])
        .collect();
    let mut selected = Vec::with_capacity(k);
    let mut objective = f64::INFINITY;

    for _ in 0..k {
        // While some satellite is still unreachable every score is infinite;
        // the number of unreachable (snapshot, satellite) pairs then decides.
        let scores: Vec<(f64, usize, usize)> = pool
            .par_iter()
            .filter(|g| !selected.contains(*g))
            .map(|&g| {
                let mut worst: f64 = 0.0;
                let mut uncovered = 0usize;
                for (field, near) in fields.iter().zip(&nearest) {
                    let field = field.borrow();
                    for (s, &cur) in near.iter().enumerate() {
                        let d = cur.min(field.get(s, g));
                        worst = worst.max(d);
                        uncovered += usize::from(d == f64::INFINITY);
                    }
                }
                (worst, uncovered, g)
            })
            .collect();
        let &(score, _, best) = scores
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
            .expect("k <= candidates leaves a station to add");
        selected.push(best);
        objective = score;
        for (field, near) in fields.iter().zip(nearest.iter_mut()) {
            let field = field.borrow();
            for (s, cur) in near.iter_mut().enumerate() {
                *cur = cur.min(field.get(s, best));
            }
        }
    }
    if !objective.is_finite() {
        return Err(PlacementError::InfeasibleInstance { k });
    }
    selected.sort_unstable();
    Ok(selected)
}

/// First-improvement swap search. Each pass scans (selected, unselected)
/// pairs in id order and applies the first strictly improving swap.
pub fn local_search<F: Borrow<DistanceField>>(
    selected: &[usize],
    candidates: &[usize],
    fields: &[F],
    max_passes: usize,
) -> Result<Vec<usize>, PlacementError> {
    let mut current: Vec<usize> = selected.to_vec();
    current.sort_unstable();
    let mut best = evaluate(&current, fields)?;
    let mut outside: Vec<usize> = candidates.iter().copied().filter(|g| !current.contains(g)).collect();
    outside.sort_unstable();
    outside.dedup();

    for _ in 0..max_passes {
        let mut improved = false;
        'scan: for i in 0..current.len() {
            for j in 0..outside.len() {
                let mut trial = current.clone();
                trial[i] = outside[j];
                let score = evaluate(&trial, fields)?;
                if score < best {
                    std::mem::swap(&mut current[i], &mut outside[j]);
                    current.sort_unstable();
                    outside.sort_unstable();
                    best = score;
                    improved = true;
                    break 'scan;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(current)
}

/// Cluster, greedy, local search. The reported objective is always measured
/// on every snapshot, not just the representatives.
pub fn cnpa(problem: &PlacementProblem) -> Result<PlacementSolution, PlacementError> {
    problem.validate()?;
    let reps: Vec<&DistanceField> = representative_indices(&problem.fields, problem.clusters, problem.seed)
        .into_iter()
        .map(|i| &problem.fields[i])
        .collect();
    let greedy = if problem.greedy_on_full {
        greedy_select(&problem.fields, &problem.candidates, problem.k)?
    } else {
        greedy_select(&reps, &problem.candidates, problem.k)?
    };
    let refined = local_search(&greedy, &problem.candidates, &reps, problem.max_passes)?;
    PlacementSolution::scored(refined, &problem.fields, PlacementMethod::Cnpa, Some(problem.seed))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Global optimum over all k-subsets; ties resolve to the lexicographically
/// smallest id set.
pub fn exhaustive_optimal(
    fields: &[DistanceField],
    candidates: &[usize],
    k: usize,
    budget: f64,
) -> Result<PlacementSolution, PlacementError> {
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if k == 0 || k > pool.len() {
        return Err(PlacementError::InvalidProblem(format!("k={k} must lie in 1..={}", pool.len())));
    }
    let combinations = binomial(pool.len(), k);
    if combinations > budget {
        return Err(PlacementError::BudgetExceeded { combinations, budget });
    }

    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let subset: Vec<usize> = idx.iter().map(|&i| pool[i]).collect();
        let score = evaluate(&subset, fields)?;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, subset));
        }
        // Advance to the next combination in lexicographic order.
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < pool.len() - k + i) else {
            break;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
    let (_, subset) = best.expect("at least one subset");
    PlacementSolution::scored(subset, fields, PlacementMethod::Exhaustive, None)
}

/// Uniform k-subset from a seeded generator.
pub fn random_select(
    fields: &[DistanceField],
    candidates: &[usize],
    k: usize,
    seed: u64,
) -> Result<PlacementSolution, PlacementError> {
    if k == 0 || k > candidates.len() {
        return Err(PlacementError::InvalidProblem(format!(
            "k={k} must lie in 1..={}",
            candidates.len()
        )));
    }
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
    PlacementSolution::scored(chosen, fields, PlacementMethod::Random, Some(seed))
}

/// The best single station.
pub fn best_single(fields: &[DistanceField], candidates: &[usize]) -> Result<PlacementSolution, PlacementError> {
    let mut sol = exhaustive_optimal(fields, candidates, 1, f64::INFINITY)?;
    sol.method = PlacementMethod::Single;
    Ok(sol)
}
