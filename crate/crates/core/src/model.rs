//! Domain types shared by every other module: the platform, workload
//! profiles, scenarios, resource limits and per-request demands.
//!
//! Units used throughout the crate:
//!
//! * time in seconds,
//! * bandwidth in MB/s with `1 MB = 10^6 bytes`,
//! * LLC capacity in MiB-sized "MB" as printed by the hardware (a way is 1.5),
//! * request payloads (`disk_bytes`, `net_*_bytes`, `mem_bytes`) in bytes.

use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Bytes per MB for every bandwidth figure.
pub const BYTES_PER_MB: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub llc_total_ways: u32,
    /// MB of LLC provided by one way.
    pub llc_way_capacity: f64,
    /// Sustainable memory bandwidth of the socket (MB/s).
    pub mem_bw_capacity: f64,
    /// Most memory bandwidth a single request stream can drain (MB/s).
    pub core_mem_bw_max: f64,
    pub disk_bw_capacity: f64,
    /// Per link, MB/s.
    pub net_bw_capacity: f64,
    pub net_links: u32,
    pub cache_line: u32,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            llc_total_ways: 11,
            llc_way_capacity: 1.5,
            mem_bw_capacity: 111_000.0,
            core_mem_bw_max: 9_000.0,
            disk_bw_capacity: 550.0,
            net_bw_capacity: 2_500.0,
            net_links: 2,
            cache_line: 64,
        }
    }
}

impl PlatformConfig {
    pub fn llc_capacity(&self) -> f64 {
        self.llc_total_ways as f64 * self.llc_way_capacity
    }

    pub fn ways_capacity(&self, ways: u32) -> f64 {
        ways as f64 * self.llc_way_capacity
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.llc_total_ways < 1 {
            v.push(violation("llc_total_ways", "must be at least 1"));
        }
        for (field, value) in [
            ("llc_way_capacity", self.llc_way_capacity),
            ("mem_bw_capacity", self.mem_bw_capacity),
            ("core_mem_bw_max", self.core_mem_bw_max),
            ("disk_bw_capacity", self.disk_bw_capacity),
            ("net_bw_capacity", self.net_bw_capacity),
        ] {
            if !(value.is_finite() && value > 0.0) {
                v.push(violation(field, "must be strictly positive"));
            }
        }
        if self.net_links < 1 {
            v.push(violation("net_links", "must be at least 1"));
        }
        if self.cache_line < 1 {
            v.push(violation("cache_line", "must be at least 1"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidPlatform(v))
        }
    }
}

/// Multiplicative noise applied to a request's compute work. Every variant
/// has mean 1 so `cpu_work` stays the expected compute time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServiceDist {
    Deterministic,
    Exponential,
    Lognormal { cv: f64 },
}

impl ServiceDist {
    pub fn sample_multiplier<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceDist::Deterministic => 1.0,
            ServiceDist::Exponential => Exp1.sample(rng),
            ServiceDist::Lognormal { cv } => {
                if cv <= 0.0 {
                    return 1.0;
                }
                let s2 = (1.0 + cv * cv).ln();
                // mu = -s2/2 keeps the mean at one.
                LogNormal::new(-0.5 * s2, s2.sqrt())
                    .expect("finite lognormal parameters")
                    .sample(rng)
            }
        }
    }

    pub fn cv(&self) -> f64 {
        match *self {
            ServiceDist::Deterministic => 0.0,
            ServiceDist::Exponential => 1.0,
            ServiceDist::Lognormal { cv } => cv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    /// Seconds of pure compute per request.
    pub cpu_work: f64,
    /// LLC-level accesses per request.
    pub mem_accesses: f64,
    pub miss_min: f64,
    pub miss_max: f64,
    pub miss_shape: f64,
    /// MB/s a lone request drains its memory traffic at.
    pub mem_stream_rate: f64,
    /// MB of LLC occupied when unconstrained.
    pub footprint: f64,
    pub disk_bytes: f64,
    /// MB/s a lone request drains its disk traffic at (small random I/O is
    /// far slower than the device's sequential bandwidth).
    pub disk_stream_rate: f64,
    pub net_tx_bytes: f64,
    pub net_rx_bytes: f64,
    /// Per-thread compute rate while the SMT sibling is busy.
    pub smt_efficiency: f64,
    pub service_dist: ServiceDist,
    pub qos_multiplier: f64,
}

impl WorkloadProfile {
    /// A compute-only profile with every other demand zeroed.
    pub fn compute_only(name: impl Into<String>, cpu_work: f64, dist: ServiceDist) -> Self {
        WorkloadProfile {
            name: name.into(),
            cpu_work,
            mem_accesses: 0.0,
            miss_min: 0.0,
            miss_max: 0.0,
            miss_shape: 1.0,
            mem_stream_rate: 1_000.0,
            footprint: 0.0,
            disk_bytes: 0.0,
            disk_stream_rate: 550.0,
            net_tx_bytes: 0.0,
            net_rx_bytes: 0.0,
            smt_efficiency: 1.0,
            service_dist: dist,
            qos_multiplier: 5.0,
        }
    }

    /// Isolated (no contention) time spent in each phase with the mean
    /// compute multiplier: `(compute, memory, disk)`.
    pub fn isolated_phases(&self, limits: &ResourceLimits, platform: &PlatformConfig) -> (f64, f64, f64) {
        let d = self.mean_demand(limits, platform);
        let mem_rate = self
            .mem_stream_rate
            .min(platform.core_mem_bw_max)
            .min(limits.mem_limit(platform));
        let disk_rate = self.disk_stream_rate.min(limits.disk_limit(platform));
        let mem = if d.mem_bytes > 0.0 { d.mem_bytes / BYTES_PER_MB / mem_rate } else { 0.0 };
        let disk = if d.disk_bytes > 0.0 { d.disk_bytes / BYTES_PER_MB / disk_rate } else { 0.0 };
        (d.cpu_seconds, mem, disk)
    }

    pub fn isolated_service_time(&self, limits: &ResourceLimits, platform: &PlatformConfig) -> f64 {
        let (c, m, d) = self.isolated_phases(limits, platform);
        c + m + d
    }

    pub fn mean_demand(&self, limits: &ResourceLimits, platform: &PlatformConfig) -> WorkDemand {
        demand_with_multiplier(self, limits, platform, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Topology {
    OneSt,
    TwoSt,
    TwoSmt,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::OneSt, Topology::TwoSt, Topology::TwoSmt];

    pub fn workers(self) -> usize {
        match self {
            Topology::OneSt => 1,
            Topology::TwoSt | Topology::TwoSmt => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Topology::OneSt => "1-ST",
            Topology::TwoSt => "2-ST",
            Topology::TwoSmt => "2-SMT",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Topology::OneSt => "one_st",
            Topology::TwoSt => "two_st",
            Topology::TwoSmt => "two_smt",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "one_st" | "1_st" => Ok(Topology::OneSt),
            "two_st" | "2_st" => Ok(Topology::TwoSt),
            "two_smt" | "2_smt" => Ok(Topology::TwoSmt),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadMode {
    OpenLoop { qps: f64 },
    ClosedLoop { sessions: usize, think_time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub n_clients: usize,
    pub mode: LoadMode,
    pub duration: f64,
    /// One-way network delay, added twice to client-observed latency.
    pub rtt: f64,
}

pub const DEFAULT_RTT: f64 = 0.0001;

impl ScenarioConfig {
    pub fn open_loop(topology: Topology, n_clients: usize, qps: f64, duration: f64) -> Self {
        ScenarioConfig {
            topology,
            n_clients,
            mode: LoadMode::OpenLoop { qps },
            duration,
            rtt: DEFAULT_RTT,
        }
    }

    pub fn closed_loop(topology: Topology, sessions: usize, think_time: f64, duration: f64) -> Self {
        ScenarioConfig {
            topology,
            n_clients: sessions,
            mode: LoadMode::ClosedLoop { sessions, think_time },
            duration,
            rtt: DEFAULT_RTT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients < 1 {
            return Err(Error::InvalidScenario("n_clients must be at least 1".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidScenario("duration must be positive".into()));
        }
        if !(self.rtt.is_finite() && self.rtt >= 0.0) {
            return Err(Error::InvalidScenario("rtt must be non-negative".into()));
        }
        match self.mode {
            LoadMode::OpenLoop { qps } if !(qps.is_finite() && qps > 0.0) => {
                Err(Error::InvalidScenario("qps must be positive".into()))
            }
            LoadMode::ClosedLoop { sessions, .. } if sessions < 1 => {
                Err(Error::InvalidScenario("sessions must be at least 1".into()))
            }
            LoadMode::ClosedLoop { think_time, .. } if !(think_time.is_finite() && think_time >= 0.0) => {
                Err(Error::InvalidScenario("think_time must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceLimits {
    pub llc_ways: u32,
    /// `None` means unlimited.
    pub mem_bw_limit: Option<f64>,
    /// `None` means the platform's disk bandwidth.
    pub disk_bw_limit: Option<f64>,
}

impl ResourceLimits {
    pub fn unconstrained(platform: &PlatformConfig) -> Self {
        ResourceLimits {
            llc_ways: platform.llc_total_ways,
            mem_bw_limit: None,
            disk_bw_limit: None,
        }
    }

    pub fn with_ways(mut self, ways: u32) -> Self {
        self.llc_ways = ways;
        self
    }

    pub fn with_mem_bw_limit(mut self, limit: Option<f64>) -> Self {
        self.mem_bw_limit = limit;
        self
    }

    /// Aggregate memory bandwidth available to the run.
    pub fn mem_limit(&self, platform: &PlatformConfig) -> f64 {
        match self.mem_bw_limit {
            Some(l) => l.min(platform.mem_bw_capacity),
            None => platform.mem_bw_capacity,
        }
    }

    pub fn disk_limit(&self, platform: &PlatformConfig) -> f64 {
        match self.disk_bw_limit {
            Some(l) => l.min(platform.disk_bw_capacity),
            None => platform.disk_bw_capacity,
        }
    }

    pub fn validate(&self, platform: &PlatformConfig) -> Result<()> {
        if self.llc_ways < 1 || self.llc_ways > platform.llc_total_ways {
            return Err(Error::WaysOutOfRange {
                ways: self.llc_ways,
                total: platform.llc_total_ways,
            });
        }
        for (name, l) in [("mem_bw_limit", self.mem_bw_limit), ("disk_bw_limit", self.disk_bw_limit)] {
            if let Some(l) = l {
                if !(l.is_finite() && l > 0.0) {
                    return Err(Error::InvalidLimits(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// One request's work under a given set of limits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkDemand {
    pub cpu_seconds: f64,
    pub mem_bytes: f64,
    pub disk_bytes: f64,
    pub net_tx_bytes: f64,
    pub net_rx_bytes: f64,
}

fn violation(field: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        field,
        message: message.into(),
    }
}

/// Checks every profile invariant against `platform`, returning the profile
/// unchanged when all hold.
pub fn validate_profile(profile: WorkloadProfile, platform: &PlatformConfig) -> Result<WorkloadProfile> {
    let mut v = Vec::new();
    let p = &profile;
    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;

    if p.name.trim().is_empty() {
        v.push(violation("name", "must not be empty"));
    }
    for (field, value) in [
        ("cpu_work", p.cpu_work),
        ("mem_accesses", p.mem_accesses),
        ("footprint", p.footprint),
        ("disk_bytes", p.disk_bytes),
        ("net_tx_bytes", p.net_tx_bytes),
        ("net_rx_bytes", p.net_rx_bytes),
    ] {
        if !finite_nonneg(value) {
            v.push(violation(field, "must be a non-negative number"));
        }
    }
    for (field, value) in [("miss_min", p.miss_min), ("miss_max", p.miss_max)] {
        if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
            v.push(violation(field, "must lie in [0, 1]"));
        }
    }
    if p.miss_min > p.miss_max {
        v.push(violation("miss_min", "miss_min exceeds miss_max"));
    }
    if !(p.miss_shape.is_finite() && p.miss_shape > 0.0) {
        v.push(violation("miss_shape", "must be strictly positive"));
    }
    if !(p.mem_stream_rate.is_finite() && p.mem_stream_rate > 0.0) {
        v.push(violation("mem_stream_rate", "must be strictly positive"));
    }
    if !(p.disk_stream_rate.is_finite() && p.disk_stream_rate > 0.0) {
        v.push(violation("disk_stream_rate", "must be strictly positive"));
    }
    if !(p.smt_efficiency.is_finite() && p.smt_efficiency > 0.0 && p.smt_efficiency <= 1.0) {
        v.push(violation("smt_efficiency", "must lie in (0, 1]"));
    }
    if !(p.qos_multiplier.is_finite() && p.qos_multiplier > 0.0) {
        v.push(violation("qos_multiplier", "must be strictly positive"));
    }
    if let ServiceDist::Lognormal { cv } = p.service_dist {
        if !finite_nonneg(cv) {
            v.push(violation("service_dist", "lognormal cv must be non-negative"));
        }
    }
    if p.footprint > platform.llc_capacity() {
        v.push(violation(
            "footprint",
            format!(
                "footprint {} MB exceeds LLC capacity {} MB",
                p.footprint,
                platform.llc_capacity()
            ),
        ));
    }
    let any_demand = p.cpu_work > 0.0 || p.mem_accesses > 0.0 || p.disk_bytes > 0.0;
    if !any_demand {
        v.push(violation(
            "cpu_work",
            "all demands are zero; one of cpu_work, mem_accesses, disk_bytes must be positive",
        ));
    }

    if v.is_empty() {
        Ok(profile)
    } else {
        Err(Error::InvalidProfile {
            name: profile.name.clone(),
            violations: v,
        })
    }
}

/// Fraction of LLC-level accesses that miss to memory with `ways` of
/// `total_ways` assigned:
///
/// `m(w) = miss_min + (miss_max - miss_min) * ((total - w) / (total - 1))^k`
pub fn miss_ratio(profile: &WorkloadProfile, ways: u32, total_ways: u32) -> Result<f64> {
    if total_ways < 2 {
        return Err(Error::InvalidArgument(format!(
            "total_ways must be at least 2, got {total_ways}"
        )));
    }
    if ways < 1 || ways > total_ways {
        return Err(Error::WaysOutOfRange { ways, total: total_ways });
    }
    if ways == total_ways {
        return Ok(profile.miss_min);
    }
    let x = (total_ways - ways) as f64 / (total_ways - 1) as f64;
    let m = profile.miss_min + (profile.miss_max - profile.miss_min) * x.powf(profile.miss_shape);
    Ok(m.clamp(profile.miss_min, profile.miss_max))
}

fn demand_with_multiplier(
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    multiplier: f64,
) -> WorkDemand {
    let miss = if platform.llc_total_ways < 2 {
        profile.miss_min
    } else {
        miss_ratio(profile, limits.llc_ways, platform.llc_total_ways).unwrap_or(profile.miss_max)
    };
    WorkDemand {
        cpu_seconds: profile.cpu_work * multiplier,
        mem_bytes: profile.mem_accesses * miss * platform.cache_line as f64,
        disk_bytes: profile.disk_bytes,
        net_tx_bytes: profile.net_tx_bytes,
        net_rx_bytes: profile.net_rx_bytes,
    }
}

/// Draws one request's demand. Only the compute part is random.
pub fn request_demands<R: Rng + ?Sized>(
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    rng: &mut R,
) -> WorkDemand {
    let m = profile.service_dist.sample_multiplier(rng);
    demand_with_multiplier(profile, limits, platform, m)
}
