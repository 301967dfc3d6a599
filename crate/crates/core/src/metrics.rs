//! Run summaries: tail latency, CPU utilization, bandwidths, LLC occupancy
//! and the timely-requests ratio.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{ResourceSeries, Trace};
use crate::error::{Error, Result};
use crate::model::BYTES_PER_MB;

/// Share of requests that must be timely for a load point to count.
pub const TIMELY_GATE: f64 = 0.975;
/// A run whose completion rate falls below this share of its issue rate is
/// saturated.
pub const COMPLETION_RATE_FLOOR: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean_latency: f64,
    pub mean_service_time: f64,
    pub cpu_utilization: f64,
    pub mem_bw: f64,
    pub disk_bw: f64,
    pub net_tx_bw: f64,
    pub net_rx_bw: f64,
    pub llc_occupancy: f64,
    pub timely_ratio: f64,
    /// Completions per second inside the window.
    pub throughput: f64,
    pub completed: usize,
    pub censored: usize,
    pub saturated: bool,
}

impl MetricsSummary {
    pub const CSV_HEADER: &'static str = "p50,p95,p99,mean_latency,mean_service_time,cpu_utilization,mem_bw,disk_bw,net_tx_bw,net_rx_bw,llc_occupancy,timely_ratio,throughput,completed,censored,saturated";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.p50,
            self.p95,
            self.p99,
            self.mean_latency,
            self.mean_service_time,
            self.cpu_utilization,
            self.mem_bw,
            self.disk_bw,
            self.net_tx_bw,
            self.net_rx_bw,
            self.llc_occupancy,
            self.timely_ratio,
            self.throughput,
            self.completed,
            self.censored,
            self.saturated
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn percentile(latencies: &[f64], p: f64) -> Result<f64> {
    if latencies.is_empty() {
        return Err(Error::Empty("percentile of an empty sample"));
    }
    let mut v = latencies.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile of an empty sample"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile must be in (0, 100], got {p}")));
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Default measurement warmup: `max(5 s, 10% of the run)`, falling back to
/// 10% for runs too short to afford five seconds.
pub fn default_warmup(duration: f64) -> f64 {
    let w = (0.1 * duration).max(5.0);
    if w >= 0.5 * duration {
        0.1 * duration
    } else {
        w
    }
}

fn overlap(intervals: &[(f64, f64)], t0: f64, t1: f64) -> f64 {
    intervals
        .iter()
        .map(|&(a, b)| (b.min(t1) - a.max(t0)).max(0.0))
        .sum()
}

pub fn summarize(trace: &Trace, warmup: f64) -> Result<MetricsSummary> {
    summarize_many(std::slice::from_ref(trace), warmup)
}

/// Pools several replicate runs of the same configuration: percentiles over
/// the union of samples, rates over the summed windows.
pub fn summarize_many(traces: &[Trace], warmup: f64) -> Result<MetricsSummary> {
    let first = traces.first().ok_or(Error::Empty("no traces to summarize"))?;
    let mut latencies = Vec::new();
    let mut service_sum = 0.0;
    let mut timely = 0usize;
    let mut in_window = 0usize;
    let mut censored = 0usize;
    let mut censored_age = 0.0f64;
    let mut busy = 0.0;
    let mut core_time = 0.0;
    let (mut mem, mut disk, mut tx, mut rx) = (0.0, 0.0, 0.0, 0.0);
    let mut window_total = 0.0;
    let mut completions_in_window = 0usize;
    let mut issues_in_window = 0usize;

    for trace in traces {
        let t1 = trace.duration();
        let t0 = warmup;
        if !(t0 >= 0.0 && t0 < t1) {
            return Err(Error::InvalidArgument(format!(
                "warmup {warmup} leaves an empty window in a {t1} s run"
            )));
        }
        let window = t1 - t0;
        window_total += window;
        let rtt2 = 2.0 * trace.meta.scenario.rtt;
        for r in &trace.records {
            if let Some(c) = r.completion_time {
                if c >= t0 && c < t1 {
                    completions_in_window += 1;
                }
            }
            if let Some(i) = r.issue_time {
                if i >= t0 && i < t1 {
                    issues_in_window += 1;
                }
            }
            if r.scheduled_time < t0 || r.scheduled_time >= t1 {
                continue;
            }
            in_window += 1;
            timely += r.timely as usize;
            match (r.latency, r.service_time()) {
                (Some(l), Some(s)) => {
                    latencies.push(l);
                    service_sum += s;
                }
                _ => {
                    censored += 1;
                    censored_age = censored_age.max(trace.horizon - r.scheduled_time + rtt2);
                }
            }
        }
        for core in &trace.busy {
            busy += overlap(&core.cpu, t0, t1);
            core_time += window;
        }
        let s = &trace.series;
        mem += ResourceSeries::bytes_between(&s.mem_bytes, s.interval, t0, t1);
        disk += ResourceSeries::bytes_between(&s.disk_bytes, s.interval, t0, t1);
        tx += ResourceSeries::bytes_between(&s.net_tx_bytes, s.interval, t0, t1);
        rx += ResourceSeries::bytes_between(&s.net_rx_bytes, s.interval, t0, t1);
    }

    latencies.sort_by(f64::total_cmp);
    let completed = latencies.len();
    let (p50, p95, p99, mean_latency, mean_service_time) = if completed > 0 {
        (
            percentile_sorted(&latencies, 50.0)?,
            percentile_sorted(&latencies, 95.0)?,
            percentile_sorted(&latencies, 99.0)?,
            latencies.iter().sum::<f64>() / completed as f64,
            service_sum / completed as f64,
        )
    } else {
        // Nothing finished: report the age of the oldest unfinished request,
        // a lower bound on every latency.
        (censored_age, censored_age, censored_age, censored_age, 0.0)
    };

    let meta = &first.meta;
    let llc_occupancy = meta
        .profile
        .footprint
        .min(meta.platform.ways_capacity(meta.limits.llc_ways));
    let completion_rate = completions_in_window as f64 / window_total;
    let issue_rate = issues_in_window as f64 / window_total;
    let saturated = censored > 0 || completion_rate < COMPLETION_RATE_FLOOR * issue_rate;
    let per_sec = |bytes: f64| bytes / window_total / BYTES_PER_MB;

    Ok(MetricsSummary {
        p50,
        p95,
        p99,
        mean_latency,
        mean_service_time,
        cpu_utilization: if core_time > 0.0 { (busy / core_time).clamp(0.0, 1.0) } else { 0.0 },
        mem_bw: per_sec(mem),
        disk_bw: per_sec(disk),
        net_tx_bw: per_sec(tx),
        net_rx_bw: per_sec(rx),
        llc_occupancy,
        timely_ratio: if in_window > 0 { timely as f64 / in_window as f64 } else { 1.0 },
        throughput: completion_rate,
        completed,
        censored,
        saturated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelyRatio {
    pub ratio: f64,
    pub note: Option<String>,
}

/// Share of all requests in the trace issued at their scheduled time.
pub fn timely_ratio(trace: &Trace) -> TimelyRatio {
    if trace.is_closed_loop() {
        return TimelyRatio {
            ratio: 1.0,
            note: Some("closed-loop sessions issue on completion; every request is timely".into()),
        };
    }
    if trace.records.is_empty() {
        return TimelyRatio {
            ratio: 1.0,
            note: Some("empty trace".into()),
        };
    }
    let timely = trace.records.iter().filter(|r| r.timely).count();
    TimelyRatio {
        ratio: timely as f64 / trace.records.len() as f64,
        note: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_scenario, simulate_open_loop, SimOptions};
    use crate::loadgen::{assign_clients, build_schedule, ArrivalModel};
    use crate::model::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_grid() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0).unwrap(), 95.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&v, 0.5).unwrap(), 1.0);
        assert_eq!(percentile(&[3.5], 99.0).unwrap(), 3.5);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn percentiles_ordered_and_members(v in prop::collection::vec(0.0..1e3f64, 1..300)) {
            let a = percentile(&v, 50.0).unwrap();
            let b = percentile(&v, 95.0).unwrap();
            let c = percentile(&v, 99.0).unwrap();
            prop_assert!(a <= b && b <= c);
            prop_assert!(v.contains(&b));
        }
    }

    fn plat() -> PlatformConfig {
        PlatformConfig::default()
    }

    fn mm1(duration: f64) -> Trace {
        let p = WorkloadProfile::compute_only("mm1", 0.001, ServiceDist::Exponential);
        let s = ScenarioConfig::open_loop(Topology::OneSt, 256, 500.0, duration);
        let l = ResourceLimits::unconstrained(&plat());
        run_scenario(&p, &s, &l, &plat(), ArrivalModel::Poisson, 2024, &SimOptions::default()).unwrap()
    }

    #[test]
    fn mm1_utilization_and_tail() {
        let t = mm1(600.0);
        let s = summarize(&t, default_warmup(600.0)).unwrap();
        assert!((s.cpu_utilization - 0.5).abs() < 0.02, "{}", s.cpu_utilization);
        let rtt2 = 2.0 * DEFAULT_RTT;
        let p95 = s.p95 - rtt2;
        let oracle = 20f64.ln() / 500.0;
        assert!((p95 / oracle - 1.0).abs() < 0.05, "p95 {p95} vs {oracle}");
        assert!(!s.saturated);
        assert_eq!(s.timely_ratio, 1.0);
    }

    #[test]
    fn summarize_is_pure() {
        let t = mm1(30.0);
        assert_eq!(summarize(&t, 5.0).unwrap(), summarize(&t, 5.0).unwrap());
        assert!(summarize(&t, 30.0).is_err());
    }

    #[test]
    fn disk_only_profile_has_idle_cpu() {
        let mut p = WorkloadProfile::compute_only("disk", 0.0, ServiceDist::Deterministic);
        p.disk_bytes = 20_000.0;
        p.disk_stream_rate = 10.0;
        let s = ScenarioConfig::open_loop(Topology::OneSt, 64, 400.0, 20.0);
        let l = ResourceLimits::unconstrained(&plat());
        let t = run_scenario(&p, &s, &l, &plat(), ArrivalModel::Poisson, 1, &SimOptions::default()).unwrap();
        let m = summarize(&t, 2.0).unwrap();
        assert!(m.cpu_utilization < 0.01);
        assert!((m.disk_bw - 400.0 * 0.02).abs() / 8.0 < 0.05, "{}", m.disk_bw);
    }

    #[test]
    fn deterministic_service_equals_isolated_sum() {
        let mut p = WorkloadProfile::compute_only("d", 0.0004, ServiceDist::Deterministic);
        p.mem_accesses = 5e4;
        p.miss_min = 0.2;
        p.miss_max = 0.2;
        p.mem_stream_rate = 2000.0;
        p.disk_bytes = 1000.0;
        p.disk_stream_rate = 20.0;
        let l = ResourceLimits::unconstrained(&plat());
        let s = ScenarioConfig::open_loop(Topology::OneSt, 32, 300.0, 20.0);
        let t = run_scenario(&p, &s, &l, &plat(), ArrivalModel::Poisson, 5, &SimOptions::default()).unwrap();
        let m = summarize(&t, 2.0).unwrap();
        let iso = p.isolated_service_time(&l, &plat());
        assert!((m.mean_service_time - iso).abs() < 1e-12, "{} vs {iso}", m.mean_service_time);
    }

    #[test]
    fn llc_occupancy_capped() {
        let mut p = WorkloadProfile::compute_only("o", 0.001, ServiceDist::Deterministic);
        p.footprint = 9.0;
        let s = ScenarioConfig::open_loop(Topology::OneSt, 4, 10.0, 20.0);
        for (ways, expect) in [(11, 9.0), (5, 7.5), (2, 3.0)] {
            let l = ResourceLimits::unconstrained(&plat()).with_ways(ways);
            let t = run_scenario(&p, &s, &l, &plat(), ArrivalModel::Poisson, 1, &SimOptions::default()).unwrap();
            assert_eq!(summarize(&t, 2.0).unwrap().llc_occupancy, expect);
        }
    }

    #[test]
    fn single_client_overload_timeliness() {
        // 2 ms service, requests every 1 ms, one client: only the first request
        // finds the client free.
        let mut p = WorkloadProfile::compute_only("c", 0.002, ServiceDist::Deterministic);
        p.qos_multiplier = 5.0;
        let sched = build_schedule(ArrivalModel::Deterministic, 1000.0, 1.0, 0).unwrap();
        assert_eq!(sched.len(), 1000);
        let a = assign_clients(&sched, 1).unwrap();
        let s = ScenarioConfig::open_loop(Topology::OneSt, 1, 1000.0, 1.0);
        let opts = SimOptions { drain_factor: 4.0, ..SimOptions::default() };
        let l = ResourceLimits::unconstrained(&plat());
        let t = simulate_open_loop(&p, &s, &l, &plat(), &sched, &a, 0, &opts).unwrap();
        assert_eq!(timely_ratio(&t).ratio, 1.0 / 1000.0);
    }

    #[test]
    fn enough_clients_all_timely() {
        let p = WorkloadProfile::compute_only("c", 0.002, ServiceDist::Deterministic);
        let sched = build_schedule(ArrivalModel::Deterministic, 100.0, 2.0, 0).unwrap();
        let a = assign_clients(&sched, 1).unwrap();
        let s = ScenarioConfig::open_loop(Topology::OneSt, 1, 100.0, 2.0);
        let l = ResourceLimits::unconstrained(&plat());
        let t = simulate_open_loop(&p, &s, &l, &plat(), &sched, &a, 0, &SimOptions::default()).unwrap();
        assert_eq!(timely_ratio(&t).ratio, 1.0);
    }

    #[test]
    fn bandwidth_matches_counters() {
        let mut p = WorkloadProfile::compute_only("m", 0.0002, ServiceDist::Exponential);
        p.mem_accesses = 1e5;
        p.miss_min = 0.5;
        p.miss_max = 0.5;
        p.mem_stream_rate = 6000.0;
        p.net_tx_bytes = 10_000.0;
        p.net_rx_bytes = 500.0;
        let s = ScenarioConfig::open_loop(Topology::OneSt, 16, 700.0, 30.0);
        let l = ResourceLimits::unconstrained(&plat());
        let t = run_scenario(&p, &s, &l, &plat(), ArrivalModel::Poisson, 8, &SimOptions::default()).unwrap();
        let m = summarize(&t, 5.0).unwrap();
        let b0 = (5.0 / t.series.interval).round() as usize;
        let b1 = (30.0 / t.series.interval).round() as usize;
        let direct: f64 = t.series.mem_bytes[b0..b1].iter().sum::<f64>() / 25.0 / 1e6;
        assert!((m.mem_bw - direct).abs() < 1e-6 * direct);
        // 3.2 MB per request at ~700 req/s
        assert!((m.mem_bw / (700.0 * 3.2) - 1.0).abs() < 0.05, "{}", m.mem_bw);
        assert!((m.net_tx_bw / 7.0 - 1.0).abs() < 0.05);
        assert!((m.net_rx_bw / 0.35 - 1.0).abs() < 0.05);
    }
}
