//! Flat `key: value` text files for profiles, platforms and experiment specs.
//!
//! Blank lines and `#` comments are ignored. Keys may appear once. Unknown
//! keys are errors, reported with the file and line they appear on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::engine::SimOptions;
use crate::error::{Error, Result};
use crate::experiments::{CalibrationTargets, LoadAxis, ManualOverride, SweepPlan, DEFAULT_POINTS};
use crate::loadgen::ArrivalModel;
use crate::model::{validate_profile, PlatformConfig, ServiceDist, Topology, WorkloadProfile, DEFAULT_RTT};
use crate::taxonomy::Thresholds;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key/value pairs with line numbers, consumed key by key so leftovers
/// can be reported.
#[derive(Debug)]
pub struct KvFile {
    origin: String,
    entries: BTreeMap<String, Entry>,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once(':').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("expected `key: value`, found `{content}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    message: format!("bad key `{}`", k.trim()),
                });
            }
            if let Some(prev) = entries.get(&key) {
                let prev: &Entry = prev;
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    message: format!("duplicate key `{key}` (first on line {})", prev.line),
                });
            }
            entries.insert(
                key,
                Entry {
                    value: v.trim().to_string(),
                    line,
                },
            );
        }
        Ok(KvFile {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn take_str(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key).map(|e| (e.value, e.line))
    }

    pub fn require_str(&mut self, key: &str) -> Result<(String, usize)> {
        self.take_str(key)
            .ok_or_else(|| self.err(0, format!("missing required key `{key}`")))
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_str(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.err(line, format!("`{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_str(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| self.err(line, format!("`{key}`: cannot parse `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// A positive number or `unlimited`.
    pub fn take_limit(&mut self, key: &str) -> Result<Option<Option<f64>>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((v, _)) if v == "unlimited" || v == "none" => Ok(Some(None)),
            Some((v, line)) => v
                .parse::<f64>()
                .map(|x| Some(Some(x)))
                .map_err(|e| self.err(line, format!("`{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(self.err(e.line, format!("unknown key `{k}`"))),
        }
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

pub fn parse_service_dist(s: &str) -> std::result::Result<ServiceDist, String> {
    let s = s.trim();
    match s {
        "deterministic" => return Ok(ServiceDist::Deterministic),
        "exponential" => return Ok(ServiceDist::Exponential),
        _ => {}
    }
    let cv = s
        .strip_prefix("lognormal(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("unknown service distribution `{s}`"))?;
    cv.trim()
        .parse::<f64>()
        .map(|cv| ServiceDist::Lognormal { cv })
        .map_err(|e| format!("bad lognormal cv `{cv}`: {e}"))
}

pub fn service_dist_label(d: &ServiceDist) -> String {
    match d {
        ServiceDist::Deterministic => "deterministic".into(),
        ServiceDist::Exponential => "exponential".into(),
        ServiceDist::Lognormal { cv } => format!("lognormal({cv})"),
    }
}

fn profile_from_kv(kv: &mut KvFile) -> Result<WorkloadProfile> {
    let (name, _) = kv.require_str("name")?;
    let mut p = WorkloadProfile::compute_only(name, 0.0, ServiceDist::Deterministic);
    macro_rules! field {
        ($($f:ident),*) => { $( if let Some(v) = kv.take::<f64>(stringify!($f))? { p.$f = v; } )* };
    }
    field!(
        cpu_work,
        mem_accesses,
        miss_min,
        miss_max,
        miss_shape,
        mem_stream_rate,
        footprint,
        disk_bytes,
        disk_stream_rate,
        net_tx_bytes,
        net_rx_bytes,
        smt_efficiency,
        qos_multiplier
    );
    if let Some((v, line)) = kv.take_str("service_dist") {
        p.service_dist = parse_service_dist(&v).map_err(|m| kv.err(line, m))?;
    }
    Ok(p)
}

/// Parses and validates a profile against `platform`.
pub fn parse_profile(text: &str, origin: &str, platform: &PlatformConfig) -> Result<WorkloadProfile> {
    let mut kv = KvFile::parse(text, origin)?;
    let p = profile_from_kv(&mut kv)?;
    kv.finish()?;
    validate_profile(p, platform)
}

pub fn read_profile(path: &Path, platform: &PlatformConfig) -> Result<WorkloadProfile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_profile(&text, &path.display().to_string(), platform)
}

pub fn profile_to_text(p: &WorkloadProfile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name: {}", p.name);
    let _ = writeln!(out, "cpu_work: {}", p.cpu_work);
    let _ = writeln!(out, "service_dist: {}", service_dist_label(&p.service_dist));
    for (k, v) in [
        ("mem_accesses", p.mem_accesses),
        ("miss_min", p.miss_min),
        ("miss_max", p.miss_max),
        ("miss_shape", p.miss_shape),
        ("mem_stream_rate", p.mem_stream_rate),
        ("footprint", p.footprint),
        ("disk_bytes", p.disk_bytes),
        ("disk_stream_rate", p.disk_stream_rate),
        ("net_tx_bytes", p.net_tx_bytes),
        ("net_rx_bytes", p.net_rx_bytes),
        ("smt_efficiency", p.smt_efficiency),
        ("qos_multiplier", p.qos_multiplier),
    ] {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}

pub fn parse_platform(text: &str, origin: &str) -> Result<PlatformConfig> {
    let mut kv = KvFile::parse(text, origin)?;
    let mut p = PlatformConfig::default();
    macro_rules! field {
        ($t:ty; $($f:ident),*) => { $( if let Some(v) = kv.take::<$t>(stringify!($f))? { p.$f = v; } )* };
    }
    field!(f64; llc_way_capacity, mem_bw_capacity, core_mem_bw_max, disk_bw_capacity, net_bw_capacity);
    field!(u32; llc_total_ways, net_links, cache_line);
    kv.finish()?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub path: PathBuf,
    pub name: String,
    pub profile_path: PathBuf,
    pub profile: WorkloadProfile,
    pub platform: PlatformConfig,
    pub topology: Topology,
    pub plan: SweepPlan,
    pub ways: u32,
    pub mem_bw_limit: Option<f64>,
    pub disk_bw_limit: Option<f64>,
    pub ways_list: Vec<u32>,
    pub bw_limits: Vec<f64>,
    pub probe_qps: Option<f64>,
    pub lqos_override: Option<ManualOverride>,
    pub targets: CalibrationTargets,
    pub thresholds: Thresholds,
}

impl ExperimentSpec {
    pub fn limits(&self) -> crate::model::ResourceLimits {
        crate::model::ResourceLimits {
            llc_ways: self.ways,
            mem_bw_limit: self.mem_bw_limit,
            disk_bw_limit: self.disk_bw_limit,
        }
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses an experiment spec. `profile` and `platform` paths are resolved
/// relative to the spec's directory.
pub fn parse_spec(text: &str, path: &Path) -> Result<ExperimentSpec> {
    let origin = path.display().to_string();
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut kv = KvFile::parse(text, &origin)?;

    let platform = match kv.take_str("platform") {
        None => PlatformConfig::default(),
        Some((rel, line)) => {
            let pp = resolve(&base, &rel);
            let t = std::fs::read_to_string(&pp)
                .map_err(|e| kv.err(line, format!("platform `{}`: {e}", pp.display())))?;
            parse_platform(&t, &pp.display().to_string())?
        }
    };
    let (rel, line) = kv.require_str("profile")?;
    let profile_path = resolve(&base, &rel);
    if !profile_path.is_file() {
        return Err(kv.err(line, format!("profile `{}` not found", profile_path.display())));
    }
    let profile = read_profile(&profile_path, &platform)?;

    let name = match kv.take_str("name") {
        Some((n, _)) => n,
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| profile.name.clone()),
    };

    let topology = match kv.take_str("topology") {
        None => Topology::OneSt,
        Some((v, line)) => v.parse().map_err(|e: String| kv.err(line, e))?,
    };

    let axis = match kv.take_str("load") {
        None => LoadAxis::Qps,
        Some((v, _)) if v == "qps" => LoadAxis::Qps,
        Some((v, _)) if v == "sessions" => LoadAxis::Sessions { think_time: 0.0 },
        Some((v, line)) => return Err(kv.err(line, format!("`load` must be qps or sessions, got `{v}`"))),
    };
    let axis = match (axis, kv.take::<f64>("think_time")?) {
        (LoadAxis::Sessions { .. }, Some(t)) => LoadAxis::Sessions { think_time: t },
        (a, None) => a,
        (LoadAxis::Qps, Some(_)) => {
            return Err(kv.err(0, "`think_time` only applies to `load: sessions`"));
        }
    };

    let (range_s, range_line) = kv.require_str("range")?;
    let range: Vec<f64> = range_s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| kv.err(range_line, format!("`range`: {e}")))?;
    if range.len() != 2 {
        return Err(kv.err(range_line, "`range` needs exactly two numbers: low high"));
    }

    let arrival = match kv.take_str("arrival") {
        None => ArrivalModel::Poisson,
        Some((v, line)) => v.parse().map_err(|e: String| kv.err(line, e))?,
    };
    let n_points = kv.take::<usize>("points")?.unwrap_or(DEFAULT_POINTS);
    let n_clients = kv.take::<usize>("clients")?.unwrap_or(1);
    let mut plan = SweepPlan::open((range[0], range[1]), n_points, n_clients);
    plan.axis = axis;
    plan.arrival = arrival;
    if let Some(d) = kv.take("duration")? {
        plan.duration = d;
    }
    if let Some(m) = kv.take("min_requests")? {
        plan.min_requests = m;
    }
    plan.warmup = kv.take("warmup")?;
    plan.rtt = kv.take("rtt")?.unwrap_or(DEFAULT_RTT);
    if let Some(s) = kv.take_list::<u64>("seeds")? {
        plan.seeds = s;
    }
    let mut sim = SimOptions::default();
    if let Some(v) = kv.take("sample_interval")? {
        sim.sample_interval = v;
    }
    if let Some(v) = kv.take("drain_factor")? {
        sim.drain_factor = v;
    }
    plan.sim = sim;

    let ways = kv.take::<u32>("ways")?.unwrap_or(platform.llc_total_ways);
    let mem_bw_limit = kv.take_limit("mem_bw_limit")?.flatten();
    let disk_bw_limit = kv.take_limit("disk_bw_limit")?.flatten();
    let ways_list = kv.take_list::<u32>("ways_list")?.unwrap_or_default();
    let bw_limits = kv.take_list::<f64>("bw_limits")?.unwrap_or_default();
    let probe_qps = kv.take("probe_qps")?;

    let lqos_override = kv.take::<f64>("lqos_override")?.map(|lqos| ManualOverride {
        lqos,
        reason: kv
            .take_str("lqos_reason")
            .map(|(r, _)| r)
            .unwrap_or_else(|| "manual override".into()),
    });

    let targets = CalibrationTargets {
        lqos: kv.take("target_lqos")?,
        saturation_qps: kv.take("target_saturation")?,
        mem_bw_at_saturation: kv.take("target_mem_bw")?,
        smt_ratio_at_20: kv.take("target_smt_ratio")?,
    };

    let mut thresholds = Thresholds::default();
    macro_rules! thr {
        ($($f:ident),*) => { $( if let Some(v) = kv.take::<f64>(concat!("threshold.", stringify!($f)))? { thresholds.$f = v; } )* };
    }
    thr!(
        streaming_net_tx,
        processor_p95,
        processor_max_qps,
        processor_min_util,
        disk_bw,
        disk_min_p95,
        disk_max_qps
    );

    kv.finish()?;
    plan.validate()?;
    thresholds.validate()?;
    let spec = ExperimentSpec {
        path: path.to_path_buf(),
        name,
        profile_path,
        profile,
        platform,
        topology,
        plan,
        ways,
        mem_bw_limit,
        disk_bw_limit,
        ways_list,
        bw_limits,
        probe_qps,
        lqos_override,
        targets,
        thresholds,
    };
    spec.limits().validate(&spec.platform)?;
    Ok(spec)
}

pub fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_spec(&text, path)
}
