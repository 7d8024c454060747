//! Aggregated handover overhead tables and empirical CDFs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::ReportError;
use crate::orbit::SatId;
use crate::protocol::HandoverRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SatelliteMetrics {
    pub sat_id: SatId,
    pub handover_count: usize,
    pub mean_handover_duration_s: f64,
    pub total_invisibility_s: f64,
    pub total_pod_unavail_s: f64,
    pub mean_report_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub total_handovers: usize,
    pub mean_handover_duration_s: f64,
    pub total_invisibility_s: f64,
    pub total_pod_unavail_s: f64,
    pub total_invisibility_h: f64,
    pub total_pod_unavail_h: f64,
    pub mean_handovers_per_satellite: f64,
    pub report_latency_p50_ms: Option<f64>,
    pub report_latency_p90_ms: Option<f64>,
    pub report_latency_p99_ms: Option<f64>,
    pub report_latency_max_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_satellite: Vec<SatelliteMetrics>,
    pub aggregate: AggregateMetrics,
    /// CDF of per-satellite mean report latency, ms.
    pub cdf_points: Vec<(f64, f64)>,
}

/// Empirical CDF: ascending values with fraction `k/n` at the k-th value.
pub fn cdf(values: &[f64]) -> Result<Vec<(f64, f64)>, ReportError> {
    if values.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect())
}

/// Smallest value whose cumulative fraction reaches `q`.
pub fn cdf_quantile(points: &[(f64, f64)], q: f64) -> Option<f64> {
    points.iter().find(|p| p.1 >= q - 1e-12).map(|p| p.0)
}

fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Per-satellite and fleet-wide totals. Satellites appear if they handed
/// over or reported at least once.
pub fn aggregate(records: &[HandoverRecord], report_latencies: &[(SatId, Vec<f64>)]) -> MetricsReport {
    let mut per: BTreeMap<SatId, SatelliteMetrics> = BTreeMap::new();
    let mut durations: BTreeMap<SatId, f64> = BTreeMap::new();
    for r in records {
        let m = per.entry(r.sat_id).or_insert_with(|| SatelliteMetrics {
            sat_id: r.sat_id,
            ..SatelliteMetrics::default()
        });
        m.handover_count += 1;
        m.total_invisibility_s += r.invisibility;
        m.total_pod_unavail_s += r.pod_unavailability;
        *durations.entry(r.sat_id).or_default() += r.duration;
    }
    for (sat, samples) in report_latencies {
        let m = per.entry(*sat).or_insert_with(|| SatelliteMetrics {
            sat_id: *sat,
            ..SatelliteMetrics::default()
        });
        if !samples.is_empty() {
            m.mean_report_latency_ms = Some(samples.iter().sum::<f64>() / samples.len() as f64);
        }
    }
    for (sat, total) in durations {
        let m = per.get_mut(&sat).expect("inserted above");
        m.mean_handover_duration_s = total / m.handover_count as f64;
    }

    let total_handovers = records.len();
    let total_invisibility_s: f64 = records.iter().map(|r| r.invisibility).fold(0.0, |acc, x| acc + x);
    let total_pod_unavail_s: f64 = records.iter().map(|r| r.pod_unavailability).fold(0.0, |acc, x| acc + x);
    let mean_handover_duration_s = if total_handovers == 0 {
        0.0
    } else {
        records.iter().map(|r| r.duration).sum::<f64>() / total_handovers as f64
    };

    let mut means: Vec<f64> = per.values().filter_map(|m| m.mean_report_latency_ms).collect();
    means.sort_by(f64::total_cmp);
    let cdf_points = cdf(&means).unwrap_or_default();

    let aggregate = AggregateMetrics {
        total_handovers,
        mean_handover_duration_s,
        total_invisibility_s,
        total_pod_unavail_s,
        total_invisibility_h: total_invisibility_s / 3600.0,
        total_pod_unavail_h: total_pod_unavail_s / 3600.0,
        mean_handovers_per_satellite: if per.is_empty() {
            0.0
        } else {
            total_handovers as f64 / per.len() as f64
        },
        report_latency_p50_ms: percentile(&means, 0.5),
        report_latency_p90_ms: percentile(&means, 0.9),
        report_latency_p99_ms: percentile(&means, 0.99),
        report_latency_max_ms: means.last().copied(),
    };

    MetricsReport {
        per_satellite: per.into_values().collect(),
        aggregate,
        cdf_points,
    }
}

/// One row in the overhead table.
pub fn write_overhead_table<W: Write>(rows: &[(&str, &str, &MetricsReport)], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "scenario",
        "protocol",
        "total_handovers",
        "avg_duration_per_handover_s",
        "total_node_invisibility_h",
        "total_pod_unavailability_h",
    ])?;
    for (scenario, protocol, report) in rows {
        let a = &report.aggregate;
        wtr.write_record([
            scenario.to_string(),
            protocol.to_string(),
            a.total_handovers.to_string(),
            format!("{:.2}", a.mean_handover_duration_s),
            format!("{:.2}", a.total_invisibility_h),
            format!("{:.2}", a.total_pod_unavail_h),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_per_satellite<W: Write>(report: &MetricsReport, out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "sat_id",
        "handover_count",
        "mean_handover_duration_s",
        "total_invisibility_s",
        "total_pod_unavail_s",
        "mean_report_latency_ms",
    ])?;
    for m in &report.per_satellite {
        wtr.write_record([
            m.sat_id.to_string(),
            m.handover_count.to_string(),
            format!("{}", m.mean_handover_duration_s),
            format!("{}", m.total_invisibility_s),
            format!("{}", m.total_pod_unavail_s),
            m.mean_report_latency_ms.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_cdf<W: Write>(points: &[(f64, f64)], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["value", "fraction"])?;
    for (v, f) in points {
        wtr.write_record([format!("{v}"), format!("{f}")])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Raw per-handover rows; floats keep full precision so totals can be
/// recomputed exactly from the file.
pub fn write_records<W: Write>(records: &[HandoverRecord], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "sat_id",
        "t_start",
        "duration_s",
        "invisibility_s",
        "pod_unavail_s",
        "protocol",
        "source",
        "target",
    ])?;
    for r in records {
        wtr.write_record([
            r.sat_id.to_string(),
            format!("{}", r.t_start),
            format!("{}", r.duration),
            format!("{}", r.invisibility),
            format!("{}", r.pod_unavailability),
            r.protocol.as_str().to_string(),
            r.source.to_string(),
            r.target.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Protocol;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(slot: u32, duration: f64, invis: f64, pod: f64) -> HandoverRecord {
        HandoverRecord {
            sat_id: SatId { plane: 0, slot },
            t_start: 0.0,
            t_end: duration,
            duration,
            invisibility: invis,
            pod_unavailability: pod,
            protocol: Protocol::Legacy,
            source: 0,
            target: 1,
        }
    }

    #[test]
    fn empty_report_is_zeroed() {
        let r = aggregate(&[], &[]);
        assert_eq!(r.aggregate.total_handovers, 0);
        assert_eq!(r.aggregate.mean_handover_duration_s, 0.0);
        assert!(r.per_satellite.is_empty());
        assert!(r.cdf_points.is_empty());
    }

    #[test]
    fn mean_duration() {
        let r = aggregate(&[rec(0, 4.0, 0.0, 0.0), rec(1, 6.0, 0.0, 0.0)], &[]);
        assert_eq!(r.aggregate.mean_handover_duration_s, 5.0);
    }

    #[test]
    fn totals_match_per_satellite_sums() {
        let recs = [rec(0, 8.0, 4.5, 9.7), rec(0, 8.0, 4.5, 9.7), rec(1, 9.0, 3600.0, 7200.0)];
        let r = aggregate(&recs, &[]);
        let inv: f64 = r.per_satellite.iter().map(|m| m.total_invisibility_s).sum();
        assert_eq!(inv, r.aggregate.total_invisibility_s);
        assert!((r.aggregate.total_invisibility_h - 3609.0 / 3600.0).abs() < 1e-12);
        assert_eq!(r.per_satellite[0].handover_count, 2);
    }

    #[test]
    fn aggregation_is_linear() {
        let a = [rec(0, 1.0, 0.5, 2.0), rec(1, 3.0, 0.25, 1.0)];
        let b = [rec(2, 5.0, 1.0, 4.0)];
        let both: Vec<_> = a.iter().chain(&b).cloned().collect();
        let (ra, rb, rab) = (aggregate(&a, &[]), aggregate(&b, &[]), aggregate(&both, &[]));
        assert_eq!(rab.aggregate.total_handovers, ra.aggregate.total_handovers + rb.aggregate.total_handovers);
        assert_eq!(
            rab.aggregate.total_pod_unavail_s,
            ra.aggregate.total_pod_unavail_s + rb.aggregate.total_pod_unavail_s
        );
    }

    #[test]
    fn cdf_basics() {
        assert_eq!(cdf(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        let c = cdf(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
        assert_eq!(cdf(&[]), Err(ReportError::EmptyInput));
    }

    #[test]
    fn cdf_median_matches_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..100.0)).collect();
        let points = cdf(&values).unwrap();
        let mut copy = values.clone();
        let (_, median, _) = copy.select_nth_unstable_by(499, f64::total_cmp);
        assert_eq!(cdf_quantile(&points, 0.5), Some(*median));
    }

    #[test]
    fn report_latency_means() {
        let lat = [(SatId { plane: 0, slot: 0 }, vec![2.0, 4.0])];
        let r = aggregate(&[], &lat);
        assert_eq!(r.per_satellite[0].mean_report_latency_ms, Some(3.0));
        assert_eq!(r.cdf_points, vec![(3.0, 1.0)]);
    }

    #[test]
    fn table_uses_two_decimals() {
        let r = aggregate(&[rec(0, 8.3456, 3600.0 * 1.234, 0.0)], &[]);
        let mut buf = Vec::new();
        write_overhead_table(&[("desk", "legacy", &r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with("1,8.35,1.23,0.00"), "{text}");
    }
}
