//! Experimental procedures built on the engine: load sweeps, LQoS
//! derivation, saturation search, topology comparison, LLC-way and
//! memory-bandwidth sweeps, and profile calibration.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_scenario, SimOptions, Trace};
use crate::error::{Error, Result};
use crate::loadgen::ArrivalModel;
use crate::metrics::{default_warmup, summarize_many, MetricsSummary, TIMELY_GATE};
use crate::model::{
    LoadMode, PlatformConfig, ResourceLimits, ScenarioConfig, ServiceDist, Topology, WorkloadProfile,
    DEFAULT_RTT,
};

/// CPU utilization at which the LQoS basis service time is read.
pub const LQOS_BASIS_UTILIZATION: f64 = 0.20;
pub const DEFAULT_POINTS: usize = 12;

/// What the sweep's x axis drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadAxis {
    Qps,
    Sessions { think_time: f64 },
}

impl LoadAxis {
    pub fn label(&self) -> &'static str {
        match self {
            LoadAxis::Qps => "qps",
            LoadAxis::Sessions { .. } => "sessions",
        }
    }
}

/// Everything a sweep needs besides the profile, topology and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axis: LoadAxis,
    pub range: (f64, f64),
    pub n_points: usize,
    pub arrival: ArrivalModel,
    pub n_clients: usize,
    /// Base run length per point (seconds).
    pub duration: f64,
    /// Each open-loop point runs at least `min_requests / qps` seconds.
    pub min_requests: usize,
    /// `None` applies [`default_warmup`] to each point's duration.
    pub warmup: Option<f64>,
    pub rtt: f64,
    /// Replicate seeds; each point pools one run per seed.
    pub seeds: Vec<u64>,
    pub sim: SimOptions,
}

impl SweepPlan {
    pub fn open(range: (f64, f64), n_points: usize, n_clients: usize) -> Self {
        SweepPlan {
            axis: LoadAxis::Qps,
            range,
            n_points,
            arrival: ArrivalModel::Poisson,
            n_clients,
            duration: 60.0,
            min_requests: 20_000,
            warmup: None,
            rtt: DEFAULT_RTT,
            seeds: vec![1],
            sim: SimOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!("bad load range ({lo}, {hi})")));
        }
        if self.n_points < 2 {
            return Err(Error::InvalidArgument("a sweep needs at least 2 points".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("a sweep needs at least one seed".into()));
        }
        if self.n_clients < 1 {
            return Err(Error::InvalidArgument("n_clients must be at least 1".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidArgument("duration must be positive".into()));
        }
        Ok(())
    }

    /// Geometrically spaced load levels; session counts are rounded and
    /// deduplicated.
    pub fn levels(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        let n = self.n_points;
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == n - 1 {
                    hi
                } else {
                    lo * (hi / lo).powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        if let LoadAxis::Sessions { .. } = self.axis {
            for x in &mut v {
                *x = x.round().max(1.0);
            }
            v.dedup();
        }
        v
    }

    pub fn point_duration(&self, level: f64) -> f64 {
        match self.axis {
            LoadAxis::Qps => self.duration.max(self.min_requests as f64 / level),
            LoadAxis::Sessions { .. } => self.duration,
        }
    }

    pub fn point_warmup(&self, level: f64) -> f64 {
        let d = self.point_duration(level);
        match self.warmup {
            Some(w) if w < d => w,
            _ => default_warmup(d),
        }
    }

    fn scenario(&self, topology: Topology, level: f64) -> ScenarioConfig {
        let duration = self.point_duration(level);
        let (mode, clients) = match self.axis {
            LoadAxis::Qps => (LoadMode::OpenLoop { qps: level }, self.n_clients),
            LoadAxis::Sessions { think_time } => {
                let s = level as usize;
                (LoadMode::ClosedLoop { sessions: s, think_time }, s)
            }
        };
        ScenarioConfig {
            topology,
            n_clients: clients,
            mode,
            duration,
            rtt: self.rtt,
        }
    }
}

/// Runs every seed of one load level.
pub fn run_point_traces(
    profile: &WorkloadProfile,
    topology: Topology,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    level: f64,
    plan: &SweepPlan,
) -> Result<Vec<Trace>> {
    let scenario = plan.scenario(topology, level);
    plan.seeds
        .iter()
        .map(|&seed| run_scenario(profile, &scenario, limits, platform, plan.arrival, seed, &plan.sim))
        .collect()
}

pub fn run_point(
    profile: &WorkloadProfile,
    topology: Topology,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    level: f64,
    plan: &SweepPlan,
) -> Result<MetricsSummary> {
    let traces = run_point_traces(profile, topology, limits, platform, level, plan)?;
    summarize_many(&traces, plan.point_warmup(level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub qps: f64,
    pub summary: MetricsSummary,
    /// Met the timely-requests gate.
    pub timely_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub workload: String,
    pub topology: Topology,
    pub limits: ResourceLimits,
    pub axis: LoadAxis,
    pub qps_range: (f64, f64),
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str =
        "qps,p50,p95,p99,util,mem_bw,disk_bw,net_tx,net_rx,llc_occ,timely_ratio,saturated";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let s = &p.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.qps,
                s.p50,
                s.p95,
                s.p99,
                s.cpu_utilization,
                s.mem_bw,
                s.disk_bw,
                s.net_tx_bw,
                s.net_rx_bw,
                s.llc_occupancy,
                s.timely_ratio,
                s.saturated
            );
        }
        out
    }

    pub fn peak(&self, f: impl Fn(&MetricsSummary) -> f64) -> f64 {
        self.points.iter().map(|p| f(&p.summary)).fold(0.0, f64::max)
    }

    /// Linear interpolation of a metric at load `x`, clamped to the range.
    pub fn metric_at(&self, x: f64, f: impl Fn(&MetricsSummary) -> f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].qps {
            return f(&pts[0].summary);
        }
        for w in pts.windows(2) {
            if x <= w[1].qps {
                let (x0, x1) = (w[0].qps, w[1].qps);
                let (y0, y1) = (f(&w[0].summary), f(&w[1].summary));
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        f(&pts[pts.len() - 1].summary)
    }

    /// First load at which a metric reaches `target`, interpolated.
    pub fn load_at_metric(&self, target: f64, f: impl Fn(&MetricsSummary) -> f64) -> Option<f64> {
        let pts = &self.points;
        if f(&pts[0].summary) >= target {
            return Some(pts[0].qps);
        }
        pts.windows(2).find_map(|w| {
            let (y0, y1) = (f(&w[0].summary), f(&w[1].summary));
            (y1 >= target).then(|| interpolate_x(w[0].qps, y0, w[1].qps, y1, target))
        })
    }
}

fn interpolate_x(x0: f64, y0: f64, x1: f64, y1: f64, y: f64) -> f64 {
    if y1 == y0 {
        return x0;
    }
    (x0 + (y - y0) * (x1 - x0) / (y1 - y0)).clamp(x0.min(x1), x0.max(x1))
}

/// Simulates and summarizes each load level of `plan`. Points run
/// concurrently and are merged in load order.
pub fn qps_sweep(
    profile: &WorkloadProfile,
    topology: Topology,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    plan: &SweepPlan,
) -> Result<SweepResult> {
    plan.validate()?;
    limits.validate(platform)?;
    let levels = plan.levels();
    if levels.len() < 2 {
        return Err(Error::InvalidArgument("load range collapses to a single level".into()));
    }
    let mut points = levels
        .par_iter()
        .map(|&level| {
            let summary = run_point(profile, topology, limits, platform, level, plan)?;
            Ok(SweepPoint {
                qps: level,
                timely_ok: summary.timely_ratio >= TIMELY_GATE,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.qps.total_cmp(&b.qps));
    Ok(SweepResult {
        workload: profile.name.clone(),
        topology,
        limits: *limits,
        axis: plan.axis,
        qps_range: plan.range,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualOverride {
    pub lqos: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosTarget {
    pub lqos: f64,
    pub basis_qps: f64,
    pub basis_service_time: f64,
    pub multiplier: f64,
    pub manual_override: Option<ManualOverride>,
}

impl QosTarget {
    pub fn manual(lqos: f64, reason: impl Into<String>) -> Self {
        QosTarget {
            lqos,
            basis_qps: f64::NAN,
            basis_service_time: f64::NAN,
            multiplier: f64::NAN,
            manual_override: Some(ManualOverride {
                lqos,
                reason: reason.into(),
            }),
        }
    }

    pub fn with_override(mut self, lqos: f64, reason: impl Into<String>) -> Self {
        self.lqos = lqos;
        self.manual_override = Some(ManualOverride {
            lqos,
            reason: reason.into(),
        });
        self
    }
}

/// LQoS = `multiplier` x the mean service time where CPU utilization first
/// reaches 20%, read only from points before the first saturated one.
pub fn derive_lqos(sweep: &SweepResult, multiplier: f64) -> Result<QosTarget> {
    let usable: Vec<_> = sweep.points.iter().take_while(|p| !p.summary.saturated).collect();
    let util = |p: &SweepPoint| p.summary.cpu_utilization;
    let hit = usable.iter().position(|p| util(p) >= LQOS_BASIS_UTILIZATION);
    let (basis_qps, basis_service_time) = match hit {
        None => {
            let max_util = usable.iter().map(|p| util(p)).fold(0.0, f64::max);
            return Err(Error::Unreachable(format!(
                "{}: CPU utilization peaks at {:.1}% before saturation, never reaching {:.0}%; a manual LQoS override is required",
                sweep.workload,
                100.0 * max_util,
                100.0 * LQOS_BASIS_UTILIZATION
            )));
        }
        Some(0) => (usable[0].qps, usable[0].summary.mean_service_time),
        Some(i) => {
            let (a, b) = (usable[i - 1], usable[i]);
            let x = interpolate_x(a.qps, util(a), b.qps, util(b), LQOS_BASIS_UTILIZATION);
            let frac = if b.qps > a.qps { (x - a.qps) / (b.qps - a.qps) } else { 0.0 };
            let s = a.summary.mean_service_time
                + frac * (b.summary.mean_service_time - a.summary.mean_service_time);
            (x, s)
        }
    };
    Ok(QosTarget {
        lqos: multiplier * basis_service_time,
        basis_qps,
        basis_service_time,
        multiplier,
        manual_override: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub qps: f64,
    /// No point met the QoS; `qps` is zero.
    pub flagged: bool,
    pub note: String,
}

fn point_ok(p: &SweepPoint, lqos: f64) -> bool {
    p.summary.p95 <= lqos && p.timely_ok && !p.summary.saturated
}

/// Highest load sustained before the first point that violates the LQoS,
/// the timely gate, or saturates. A p95 crossing is located by linear
/// interpolation between the bracketing points.
pub fn saturation_qps(sweep: &SweepResult, qos: &QosTarget) -> Saturation {
    let lqos = qos.lqos;
    let pts = &sweep.points;
    let Some(fail) = pts.iter().position(|p| !point_ok(p, lqos)) else {
        let last = pts.last().expect("sweep has points");
        return Saturation {
            qps: last.qps,
            flagged: false,
            note: "QoS met across the whole range".into(),
        };
    };
    if fail == 0 {
        return Saturation {
            qps: 0.0,
            flagged: true,
            note: format!("first point ({}) already violates LQoS {:.6} s", pts[0].qps, lqos),
        };
    }
    let (a, b) = (&pts[fail - 1], &pts[fail]);
    if b.summary.p95 > lqos {
        let x = interpolate_x(a.qps, a.summary.p95, b.qps, b.summary.p95, lqos);
        Saturation {
            qps: x,
            flagged: false,
            note: format!("p95 crosses LQoS between {} and {}", a.qps, b.qps),
        }
    } else {
        let why = if !b.timely_ok { "timely gate" } else { "saturation" };
        Saturation {
            qps: a.qps,
            flagged: false,
            note: format!("{why} fails at {}", b.qps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyRow {
    pub topology: Topology,
    pub saturation: Saturation,
    pub qps_at_20: Option<f64>,
    pub qps_at_50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub qos: QosTarget,
    pub sweeps: Vec<SweepResult>,
    pub rows: Vec<TopologyRow>,
    /// `(name, value)` pairs such as `sat two_st/one_st`.
    pub ratios: Vec<(String, f64)>,
}

impl ScenarioComparison {
    pub fn row(&self, t: Topology) -> &TopologyRow {
        self.rows.iter().find(|r| r.topology == t).expect("all topologies present")
    }

    pub fn sweep(&self, t: Topology) -> &SweepResult {
        self.sweeps.iter().find(|s| s.topology == t).expect("all topologies present")
    }

    pub fn ratio(&self, name: &str) -> Option<f64> {
        self.ratios.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn safe_ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

/// Sweeps all three topologies with shared seeds. The LQoS is `qos` when
/// given, otherwise derived from the single-thread sweep.
pub fn compare_scenarios(
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    plan: &SweepPlan,
    qos: Option<QosTarget>,
) -> Result<ScenarioComparison> {
    let sweeps = Topology::ALL
        .par_iter()
        .map(|&t| qps_sweep(profile, t, limits, platform, plan))
        .collect::<Result<Vec<_>>>()?;
    let qos = match qos {
        Some(q) => q,
        None => derive_lqos(&sweeps[0], profile.qos_multiplier)?,
    };
    let util = |s: &MetricsSummary| s.cpu_utilization;
    let rows: Vec<TopologyRow> = sweeps
        .iter()
        .map(|s| TopologyRow {
            topology: s.topology,
            saturation: saturation_qps(s, &qos),
            qps_at_20: s.load_at_metric(0.20, util),
            qps_at_50: s.load_at_metric(0.50, util),
        })
        .collect();
    let get = |t: Topology| rows.iter().find(|r| r.topology == t).unwrap();
    let (one, st, smt) = (get(Topology::OneSt), get(Topology::TwoSt), get(Topology::TwoSmt));
    let opt = |x: Option<f64>| x.unwrap_or(f64::NAN);
    let ratios = vec![
        ("sat two_st/one_st".to_string(), safe_ratio(st.saturation.qps, one.saturation.qps)),
        ("sat two_smt/one_st".to_string(), safe_ratio(smt.saturation.qps, one.saturation.qps)),
        ("sat two_st/two_smt".to_string(), safe_ratio(st.saturation.qps, smt.saturation.qps)),
        ("util20 two_smt/one_st".to_string(), safe_ratio(opt(smt.qps_at_20), opt(one.qps_at_20))),
        ("util20 two_st/two_smt".to_string(), safe_ratio(opt(st.qps_at_20), opt(smt.qps_at_20))),
        ("util50 two_smt/one_st".to_string(), safe_ratio(opt(smt.qps_at_50), opt(one.qps_at_50))),
        ("util50 two_st/two_smt".to_string(), safe_ratio(opt(st.qps_at_50), opt(smt.qps_at_50))),
    ];
    Ok(ScenarioComparison {
        qos,
        sweeps,
        rows,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatPoint {
    pub ways: u32,
    pub capacity_mb: f64,
    pub sweep: SweepResult,
    pub saturation: Saturation,
}

/// One sweep per LLC way allocation, judged against a fixed LQoS.
pub fn cat_sweep(
    profile: &WorkloadProfile,
    topology: Topology,
    platform: &PlatformConfig,
    ways_list: &[u32],
    plan: &SweepPlan,
    qos: &QosTarget,
) -> Result<Vec<CatPoint>> {
    for &w in ways_list {
        if w < 1 || w > platform.llc_total_ways {
            return Err(Error::WaysOutOfRange {
                ways: w,
                total: platform.llc_total_ways,
            });
        }
    }
    ways_list
        .par_iter()
        .map(|&ways| {
            let limits = ResourceLimits::unconstrained(platform).with_ways(ways);
            let sweep = qps_sweep(profile, topology, &limits, platform, plan)?;
            let saturation = saturation_qps(&sweep, qos);
            Ok(CatPoint {
                ways,
                capacity_mb: platform.ways_capacity(ways),
                sweep,
                saturation,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbaPoint {
    /// `None` is the unlimited baseline.
    pub limit: Option<f64>,
    pub sweep: SweepResult,
    pub saturation: Saturation,
    pub peak_mem_bw: f64,
    /// Summary of a single run at the probe load, if one was requested.
    pub probe: Option<MetricsSummary>,
    /// Probe utilization minus the unlimited baseline's.
    pub util_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbaReport {
    pub ways: u32,
    pub probe_qps: Option<f64>,
    pub points: Vec<MbaPoint>,
}

impl MbaReport {
    pub fn baseline(&self) -> &MbaPoint {
        &self.points[0]
    }
}

/// Memory bandwidth throttling at a fixed way allocation. The first entry is
/// always the unlimited baseline.
#[allow(clippy::too_many_arguments)]
pub fn mba_sweep(
    profile: &WorkloadProfile,
    topology: Topology,
    platform: &PlatformConfig,
    ways: u32,
    bw_limits: &[f64],
    plan: &SweepPlan,
    qos: &QosTarget,
    probe_qps: Option<f64>,
) -> Result<MbaReport> {
    if let Some(l) = bw_limits.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::InvalidLimits(format!("bandwidth limit {l} must be positive")));
    }
    let mut limits: Vec<Option<f64>> = vec![None];
    limits.extend(bw_limits.iter().map(|&l| Some(l)));
    let base = ResourceLimits::unconstrained(platform).with_ways(ways);
    base.validate(platform)?;

    let mut points = limits
        .par_iter()
        .map(|&limit| {
            let lim = base.with_mem_bw_limit(limit);
            let sweep = qps_sweep(profile, topology, &lim, platform, plan)?;
            let saturation = saturation_qps(&sweep, qos);
            let probe = probe_qps
                .map(|q| run_point(profile, topology, &lim, platform, q, plan))
                .transpose()?;
            Ok(MbaPoint {
                limit,
                peak_mem_bw: sweep.peak(|s| s.mem_bw),
                sweep,
                saturation,
                probe,
                util_delta: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base_util = points[0].probe.as_ref().map(|p| p.cpu_utilization);
    for p in &mut points {
        p.util_delta = match (&p.probe, base_util) {
            (Some(s), Some(b)) => Some(s.cpu_utilization - b),
            _ => None,
        };
    }
    Ok(MbaReport {
        ways,
        probe_qps,
        points,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Seconds.
    pub lqos: Option<f64>,
    pub saturation_qps: Option<f64>,
    /// MB/s at the single-thread saturation point.
    pub mem_bw_at_saturation: Option<f64>,
    /// 2-ST over 2-SMT load at 20% utilization.
    pub smt_ratio_at_20: Option<f64>,
}

impl CalibrationTargets {
    pub fn is_empty(&self) -> bool {
        self.lqos.is_none()
            && self.saturation_qps.is_none()
            && self.mem_bw_at_saturation.is_none()
            && self.smt_ratio_at_20.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub target: String,
    pub wanted: f64,
    pub achieved: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub profile: WorkloadProfile,
    pub residuals: Vec<Residual>,
    pub iterations: usize,
}

impl CalibrationReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.relative.abs()).fold(0.0, f64::max)
    }
}

pub const CALIBRATION_TOLERANCE: f64 = 0.20;

struct Evaluation {
    lqos: Option<f64>,
    saturation: f64,
    mem_bw_at_saturation: f64,
}

fn evaluate_one_st(
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    plan: &SweepPlan,
    fixed_lqos: Option<f64>,
) -> Result<Evaluation> {
    let sweep = qps_sweep(profile, Topology::OneSt, limits, platform, plan)?;
    let derived = derive_lqos(&sweep, profile.qos_multiplier).ok();
    let qos = match (fixed_lqos, &derived) {
        (Some(l), _) => QosTarget::manual(l, "calibration target"),
        (None, Some(q)) => q.clone(),
        (None, None) => {
            return Err(Error::Calibration(format!(
                "{}: LQoS unreachable and no lqos target given",
                profile.name
            )))
        }
    };
    let sat = saturation_qps(&sweep, &qos);
    Ok(Evaluation {
        lqos: derived.map(|q| q.lqos),
        saturation: sat.qps,
        mem_bw_at_saturation: sweep.metric_at(sat.qps, |s| s.mem_bw),
    })
}

fn smt_ratio(
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    plan: &SweepPlan,
) -> Result<f64> {
    let (st, smt) = rayon::join(
        || qps_sweep(profile, Topology::TwoSt, limits, platform, plan),
        || qps_sweep(profile, Topology::TwoSmt, limits, platform, plan),
    );
    let util = |s: &MetricsSummary| s.cpu_utilization;
    let a = st?.load_at_metric(0.20, util);
    let b = smt?.load_at_metric(0.20, util);
    match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Ok(a / b),
        _ => Err(Error::Calibration(
            "two-thread sweeps never reach 20% utilization; widen the range".into(),
        )),
    }
}

/// Bisection on a monotone scalar response. `increasing` tells whether the
/// response grows with the parameter.
fn bisect(
    mut lo: f64,
    mut hi: f64,
    target: f64,
    increasing: bool,
    steps: usize,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let y = f(mid)?;
        if (y < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits a profile to measured targets in a fixed order: compute work for
/// the LQoS, service variability for the saturation load, memory accesses
/// for the bandwidth at saturation, then SMT efficiency for the 2-ST/2-SMT
/// ratio. Fails if any residual stays above 20%.
pub fn calibrate_profile(
    profile: &WorkloadProfile,
    targets: &CalibrationTargets,
    platform: &PlatformConfig,
    plan: &SweepPlan,
    two_thread_plan: Option<&SweepPlan>,
) -> Result<CalibrationReport> {
    if targets.is_empty() {
        return Err(Error::Calibration("no calibration targets given".into()));
    }
    let limits = ResourceLimits::unconstrained(platform);
    let mut p = crate::model::validate_profile(profile.clone(), platform)?;
    let mut iterations = 0;

    let fit_cpu = |p: &mut WorkloadProfile| -> Result<()> {
        if let Some(lqos) = targets.lqos {
            let (_, mem, disk) = p.isolated_phases(&limits, platform);
            let cpu = lqos / p.qos_multiplier - mem - disk;
            if cpu <= 0.0 {
                return Err(Error::Calibration(format!(
                    "lqos {lqos} s is below the memory+disk time {:.6} s per request (binding: memory/disk demand)",
                    mem + disk
                )));
            }
            p.cpu_work = cpu;
        }
        Ok(())
    };

    for _round in 0..2 {
        fit_cpu(&mut p)?;

        if let Some(target_sat) = targets.saturation_qps {
            let fixed = targets.lqos;
            let response = |cv: f64| -> Result<f64> {
                let mut q = p.clone();
                q.service_dist = ServiceDist::Lognormal { cv };
                Ok(evaluate_one_st(&q, &limits, platform, plan, fixed)?.saturation)
            };
            // Saturation falls as service variability grows.
            let cv = bisect(0.0, 4.0, target_sat, false, 12, |cv| {
                iterations += 1;
                response(cv)
            })?;
            p.service_dist = ServiceDist::Lognormal { cv };
        }

        if let Some(target_bw) = targets.mem_bw_at_saturation {
            let eval = evaluate_one_st(&p, &limits, platform, plan, targets.lqos)?;
            iterations += 1;
            if eval.saturation <= 0.0 {
                return Err(Error::Calibration("no saturation point to read memory bandwidth at".into()));
            }
            let d = p.mean_demand(&limits, platform);
            let miss_bytes = d.mem_bytes / p.mem_accesses.max(1.0);
            if miss_bytes <= 0.0 {
                return Err(Error::Calibration(
                    "memory bandwidth target needs a non-zero miss ratio".into(),
                ));
            }
            let bytes = target_bw * crate::model::BYTES_PER_MB / eval.saturation;
            p.mem_accesses = bytes / miss_bytes;
            fit_cpu(&mut p)?;
        }
    }

    if let Some(target_ratio) = targets.smt_ratio_at_20 {
        let tplan = two_thread_plan.unwrap_or(plan);
        // The 2-ST/2-SMT ratio shrinks toward one as efficiency grows.
        let sigma = bisect(0.05, 1.0, target_ratio, false, 10, |s| {
            iterations += 1;
            let mut q = p.clone();
            q.smt_efficiency = s;
            smt_ratio(&q, &limits, platform, tplan)
        })?;
        p.smt_efficiency = sigma;
    }

    let eval = evaluate_one_st(&p, &limits, platform, plan, targets.lqos)?;
    let mut residuals = Vec::new();
    let mut push = |name: &str, wanted: f64, achieved: f64| {
        residuals.push(Residual {
            target: name.to_string(),
            wanted,
            achieved,
            relative: achieved / wanted - 1.0,
        });
    };
    if let Some(l) = targets.lqos {
        push("lqos", l, eval.lqos.unwrap_or(f64::NAN));
    }
    if let Some(s) = targets.saturation_qps {
        push("saturation_qps", s, eval.saturation);
    }
    if let Some(b) = targets.mem_bw_at_saturation {
        push("mem_bw_at_saturation", b, eval.mem_bw_at_saturation);
    }
    if let Some(r) = targets.smt_ratio_at_20 {
        let achieved = smt_ratio(&p, &limits, platform, two_thread_plan.unwrap_or(plan))?;
        push("smt_ratio_at_20", r, achieved);
    }
    let report = CalibrationReport {
        profile: p,
        residuals,
        iterations,
    };
    if let Some(bad) = report
        .residuals
        .iter()
        .find(|r| r.relative.is_nan() || r.relative.abs() > CALIBRATION_TOLERANCE)
    {
        return Err(Error::Calibration(format!(
            "{}: residual on {} is {:.1}% (wanted {}, got {})",
            profile.name,
            bad.target,
            100.0 * bad.relative,
            bad.wanted,
            bad.achieved
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plat() -> PlatformConfig {
        PlatformConfig::default()
    }

    fn oracle_plan(range: (f64, f64), n: usize, duration: f64) -> SweepPlan {
        SweepPlan {
            rtt: 0.0,
            duration,
            min_requests: 0,
            n_clients: 256,
            ..SweepPlan::open(range, n, 256)
        }
    }

    #[test]
    fn levels_are_geometric_and_inclusive() {
        let plan = SweepPlan::open((10.0, 1000.0), 3, 4);
        let v = plan.levels();
        assert_eq!(v.len(), 3);
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!((v[1] - 100.0).abs() < 1e-9);
        assert!((v[2] - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn session_levels_round_and_dedup() {
        let mut plan = SweepPlan::open((1.0, 3.0), 12, 1);
        plan.axis = LoadAxis::Sessions { think_time: 0.0 };
        assert_eq!(plan.levels(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn point_duration_covers_min_requests() {
        let plan = SweepPlan {
            duration: 10.0,
            min_requests: 5_000,
            ..SweepPlan::open((1.0, 2.0), 2, 1)
        };
        assert_eq!(plan.point_duration(100.0), 50.0);
        assert_eq!(plan.point_duration(10_000.0), 10.0);
    }

    #[test]
    fn rejects_bad_plans() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("x", 0.001, ServiceDist::Deterministic);
        let lim = ResourceLimits::unconstrained(&p);
        for plan in [
            SweepPlan::open((0.0, 10.0), 4, 1),
            SweepPlan::open((10.0, 5.0), 4, 1),
            SweepPlan::open((1.0, 10.0), 1, 1),
            SweepPlan { seeds: vec![], ..SweepPlan::open((1.0, 10.0), 4, 1) },
        ] {
            assert!(qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).is_err());
        }
    }

    #[test]
    fn deterministic_lqos_is_five_service_times() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("det", 0.001, ServiceDist::Deterministic);
        let lim = ResourceLimits::unconstrained(&p);
        let plan = oracle_plan((50.0, 800.0), 8, 20.0);
        let sweep = qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).unwrap();
        let q = derive_lqos(&sweep, 5.0).unwrap();
        assert!((q.lqos - 0.005).abs() < 1e-9, "{}", q.lqos);
        assert!((q.basis_qps - 200.0).abs() / 200.0 < 0.05, "{}", q.basis_qps);
    }

    #[test]
    fn mm1_saturation_inverts_the_p95_formula() {
        // p95 of M/M/1 sojourn = ln 20 / (mu - lambda); solve for 6 ms.
        let mu = 1000.0;
        let lqos = 0.006;
        let expected = mu - 20f64.ln() / lqos;
        let p = plat();
        let prof = WorkloadProfile::compute_only("mm1", 1.0 / mu, ServiceDist::Exponential);
        let lim = ResourceLimits::unconstrained(&p);
        let plan = SweepPlan {
            seeds: vec![1, 2],
            ..oracle_plan((420.0, 580.0), 9, 300.0)
        };
        let sweep = qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).unwrap();
        let sat = saturation_qps(&sweep, &QosTarget::manual(lqos, "oracle"));
        assert!(!sat.flagged);
        assert!(
            (sat.qps - expected).abs() / expected < 0.04,
            "got {} want {expected}",
            sat.qps
        );
    }

    #[test]
    fn saturation_flags_when_first_point_fails() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("slow", 0.010, ServiceDist::Deterministic);
        let lim = ResourceLimits::unconstrained(&p);
        let plan = oracle_plan((10.0, 50.0), 3, 10.0);
        let sweep = qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).unwrap();
        let sat = saturation_qps(&sweep, &QosTarget::manual(0.005, "tight"));
        assert!(sat.flagged);
        assert_eq!(sat.qps, 0.0);
    }

    #[test]
    fn unreachable_lqos_without_cpu_use() {
        let p = plat();
        let mut prof = WorkloadProfile::compute_only("disk", 0.0, ServiceDist::Deterministic);
        prof.disk_bytes = 50_000.0;
        prof.disk_stream_rate = 10.0;
        let lim = ResourceLimits::unconstrained(&p);
        let plan = oracle_plan((10.0, 400.0), 5, 10.0);
        let sweep = qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).unwrap();
        assert!(matches!(derive_lqos(&sweep, 5.0), Err(Error::Unreachable(_))));
    }

    #[test]
    fn sweep_csv_has_one_row_per_point() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("c", 0.001, ServiceDist::Deterministic);
        let lim = ResourceLimits::unconstrained(&p);
        let plan = oracle_plan((10.0, 100.0), 4, 5.0);
        let sweep = qps_sweep(&prof, Topology::OneSt, &lim, &p, &plan).unwrap();
        let csv = sweep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SweepResult::CSV_HEADER);
        assert_eq!(lines.count(), 4);
        assert!(sweep.points.windows(2).all(|w| w[0].qps < w[1].qps));
    }

    #[test]
    fn two_workers_saturate_later_than_one() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("c", 0.001, ServiceDist::Exponential);
        let lim = ResourceLimits::unconstrained(&p);
        let plan = oracle_plan((100.0, 1900.0), 10, 40.0);
        let cmp = compare_scenarios(&prof, &lim, &p, &plan, Some(QosTarget::manual(0.006, "t"))).unwrap();
        let one = cmp.row(Topology::OneSt).saturation.qps;
        let st = cmp.row(Topology::TwoSt).saturation.qps;
        assert!(st > 1.5 * one, "{st} vs {one}");
        // sigma = 1 makes SMT indistinguishable from separate cores.
        let smt = cmp.row(Topology::TwoSmt).saturation.qps;
        assert!((smt - st).abs() / st < 1e-9);
    }

    #[test]
    fn mba_above_peak_matches_unlimited() {
        let p = plat();
        let mut prof = WorkloadProfile::compute_only("m", 0.0005, ServiceDist::Exponential);
        prof.mem_accesses = 100_000.0;
        prof.miss_min = 0.1;
        prof.miss_max = 0.5;
        prof.footprint = 8.0;
        prof.mem_stream_rate = 5_000.0;
        let plan = oracle_plan((100.0, 800.0), 4, 5.0);
        let qos = QosTarget::manual(0.01, "t");
        let rep = mba_sweep(&prof, Topology::OneSt, &p, 11, &[50_000.0, 500.0], &plan, &qos, Some(300.0)).unwrap();
        assert_eq!(rep.points.len(), 3);
        assert_eq!(rep.points[0].limit, None);
        assert_eq!(rep.points[1].sweep.points, rep.points[0].sweep.points);
        assert!(rep.points[2].peak_mem_bw <= 500.0 * 1.001);
        assert!(rep.points[2].util_delta.unwrap() > 0.0);
    }

    #[test]
    fn cat_rejects_out_of_range_ways() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("c", 0.001, ServiceDist::Deterministic);
        let plan = oracle_plan((10.0, 100.0), 2, 1.0);
        let qos = QosTarget::manual(0.005, "t");
        for ways in [0, 12] {
            assert!(matches!(
                cat_sweep(&prof, Topology::OneSt, &p, &[ways], &plan, &qos),
                Err(Error::WaysOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn calibration_fits_lqos_and_rejects_empty_targets() {
        let p = plat();
        let prof = WorkloadProfile::compute_only("c", 0.004, ServiceDist::Deterministic);
        let plan = oracle_plan((20.0, 400.0), 8, 10.0);
        assert!(calibrate_profile(&prof, &CalibrationTargets::default(), &p, &plan, None).is_err());
        let t = CalibrationTargets {
            lqos: Some(0.010),
            ..Default::default()
        };
        let rep = calibrate_profile(&prof, &t, &p, &plan, None).unwrap();
        assert!((rep.profile.cpu_work - 0.002).abs() < 1e-12);
        assert!(rep.max_residual() < 0.01);
    }

    #[test]
    fn calibration_reports_infeasible_lqos() {
        let p = plat();
        let mut prof = WorkloadProfile::compute_only("d", 0.001, ServiceDist::Deterministic);
        prof.disk_bytes = 100_000.0;
        prof.disk_stream_rate = 10.0;
        let plan = oracle_plan((20.0, 400.0), 4, 5.0);
        let t = CalibrationTargets {
            lqos: Some(0.010),
            ..Default::default()
        };
        let err = calibrate_profile(&prof, &t, &p, &plan, None).unwrap_err();
        assert!(err.to_string().contains("memory/disk"), "{err}");
    }
}
