//! Deterministic discrete-event simulation of one server VM.
//!
//! Requests queue FIFO in front of one or two worker threads. A worker serves
//! one request at a time through three sequential phases (compute, memory,
//! disk). Each phase drains its work at a rate that depends on what the other
//! worker is doing, so every event (issue, phase transition, completion)
//! recomputes all rates and reschedules the next completion.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loadgen::{ArrivalModel, ArrivalSchedule, ClientAssignment};
use crate::model::{
    request_demands, LoadMode, PlatformConfig, ResourceLimits, ScenarioConfig, Topology, WorkDemand,
    WorkloadProfile, BYTES_PER_MB,
};

/// Slack on `issue_time <= scheduled_time + TIMELY_EPSILON`.
pub const TIMELY_EPSILON: f64 = 1e-6;
/// Longest sampled series the engine keeps; the interval is coarsened past it.
pub const MAX_SERIES_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Compute,
    Memory,
    Disk,
}

impl Phase {
    /// Compute and memory stalls keep the logical core busy; disk waits do not.
    pub fn is_cpu_busy(self) -> bool {
        matches!(self, Phase::Compute | Phase::Memory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub sample_interval: f64,
    /// Extra simulated time past `duration`, as a fraction of it, for the
    /// backlog to drain before unfinished requests are censored.
    pub drain_factor: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            sample_interval: 0.001,
            drain_factor: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: usize,
    pub client: usize,
    pub scheduled_time: f64,
    pub issue_time: Option<f64>,
    pub service_start: Option<f64>,
    pub completion_time: Option<f64>,
    pub worker: Option<usize>,
    pub timely: bool,
    /// `completion - scheduled + 2 * rtt`.
    pub latency: Option<f64>,
}

impl RequestRecord {
    pub fn is_completed(&self) -> bool {
        self.completion_time.is_some()
    }

    pub fn service_time(&self) -> Option<f64> {
        Some(self.completion_time? - self.service_start?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreBusy {
    /// Compute + memory phases.
    pub cpu: Vec<(f64, f64)>,
    pub disk: Vec<(f64, f64)>,
}

fn push_interval(list: &mut Vec<(f64, f64)>, start: f64, end: f64) {
    if end <= start {
        return;
    }
    if let Some(last) = list.last_mut() {
        if last.1 == start {
            last.1 = end;
            return;
        }
    }
    list.push((start, end));
}

/// Bytes moved per sampling bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSeries {
    pub interval: f64,
    pub mem_bytes: Vec<f64>,
    pub disk_bytes: Vec<f64>,
    pub net_tx_bytes: Vec<f64>,
    pub net_rx_bytes: Vec<f64>,
}

impl ResourceSeries {
    fn new(interval: f64, horizon: f64) -> Self {
        let n = (horizon / interval).ceil() as usize + 1;
        ResourceSeries {
            interval,
            mem_bytes: vec![0.0; n],
            disk_bytes: vec![0.0; n],
            net_tx_bytes: vec![0.0; n],
            net_rx_bytes: vec![0.0; n],
        }
    }

    fn bucket(&self, t: f64) -> usize {
        ((t / self.interval) as usize).min(self.mem_bytes.len() - 1)
    }

    /// Spreads a constant byte rate over `[t0, t1)`.
    fn spread(buf: &mut [f64], interval: f64, t0: f64, t1: f64, bytes_per_sec: f64) {
        if bytes_per_sec <= 0.0 || t1 <= t0 {
            return;
        }
        let last = buf.len() - 1;
        let mut b = ((t0 / interval) as usize).min(last);
        let mut t = t0;
        while t < t1 {
            let edge = if b == last { t1 } else { ((b + 1) as f64 * interval).min(t1) };
            let edge = edge.max(t);
            buf[b] += (edge - t) * bytes_per_sec;
            if edge >= t1 || b == last {
                break;
            }
            t = edge;
            b += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.mem_bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem_bytes.is_empty()
    }

    /// Bytes moved in `[t0, t1)` for one counter, weighting partial buckets
    /// by overlap.
    pub fn bytes_between(buf: &[f64], interval: f64, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let first = (t0 / interval).floor() as usize;
        let last = ((t1 / interval).ceil() as usize).min(buf.len());
        (first..last)
            .map(|b| {
                let lo = b as f64 * interval;
                let hi = lo + interval;
                let overlap = (hi.min(t1) - lo.max(t0)).max(0.0);
                buf[b] * overlap / interval
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub profile: WorkloadProfile,
    pub scenario: ScenarioConfig,
    pub limits: ResourceLimits,
    pub platform: PlatformConfig,
    pub seed: u64,
    pub arrival: Option<ArrivalModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<RequestRecord>,
    pub demands: Vec<WorkDemand>,
    pub busy: Vec<CoreBusy>,
    pub series: ResourceSeries,
    pub meta: RunMeta,
    /// Time the simulation stopped.
    pub horizon: f64,
    pub censored: usize,
    pub saturated: bool,
    pub max_queue_depth: usize,
}

impl Trace {
    pub fn duration(&self) -> f64 {
        self.meta.scenario.duration
    }

    pub fn is_closed_loop(&self) -> bool {
        matches!(self.meta.scenario.mode, LoadMode::ClosedLoop { .. })
    }

    /// Per-request CSV. Run metadata is deliberately absent so traces of
    /// equivalent runs compare byte-for-byte.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "index,client,worker,scheduled_time,issue_time,service_start,completion_time,latency,timely\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.index,
                r.client,
                r.worker.map(|w| w.to_string()).unwrap_or_default(),
                r.scheduled_time,
                opt(r.issue_time),
                opt(r.service_start),
                opt(r.completion_time),
                opt(r.latency),
                r.timely as u8
            );
        }
        out
    }

    /// Sampled resource series as MB/s per bucket.
    pub fn series_csv(&self) -> String {
        let s = &self.series;
        let mut out = String::from("time,mem_bw,disk_bw,net_tx_bw,net_rx_bw\n");
        let scale = 1.0 / (s.interval * BYTES_PER_MB);
        for i in 0..s.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i as f64 * s.interval,
                s.mem_bytes[i] * scale,
                s.disk_bytes[i] * scale,
                s.net_tx_bytes[i] * scale,
                s.net_rx_bytes[i] * scale
            );
        }
        out
    }
}

/// Drain rate of each worker's current phase: work-seconds per second for
/// compute, MB/s for memory and disk, zero for idle workers.
pub fn recompute_drain_rates(
    phases: &[Option<Phase>],
    topology: Topology,
    profile: &WorkloadProfile,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
) -> Vec<f64> {
    let mem_demand = profile.mem_stream_rate.min(platform.core_mem_bw_max);
    let n_mem = phases.iter().filter(|p| **p == Some(Phase::Memory)).count();
    let n_disk = phases.iter().filter(|p| **p == Some(Phase::Disk)).count();
    let mem_scale = if n_mem == 0 {
        1.0
    } else {
        (limits.mem_limit(platform) / (mem_demand * n_mem as f64)).min(1.0)
    };
    let disk_rate = if n_disk == 0 {
        0.0
    } else {
        profile.disk_stream_rate.min(limits.disk_limit(platform) / n_disk as f64)
    };

    phases
        .iter()
        .enumerate()
        .map(|(w, phase)| match phase {
            None => 0.0,
            Some(Phase::Compute) => {
                let sibling_busy = phases
                    .iter()
                    .enumerate()
                    .any(|(o, p)| o != w && p.is_some_and(Phase::is_cpu_busy));
                if topology == Topology::TwoSmt && sibling_busy {
                    profile.smt_efficiency
                } else {
                    1.0
                }
            }
            Some(Phase::Memory) => mem_demand * mem_scale,
            Some(Phase::Disk) => disk_rate,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Time(f64);

impl PartialEq for Time {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Active {
    req: usize,
    phase: Phase,
    /// Remaining work of the current phase: seconds for compute, MB otherwise.
    remaining: f64,
    total: f64,
    cpu_since: Option<f64>,
    disk_since: Option<f64>,
}

fn phase_amount(d: &WorkDemand, phase: Phase) -> f64 {
    match phase {
        Phase::Compute => d.cpu_seconds,
        Phase::Memory => d.mem_bytes / BYTES_PER_MB,
        Phase::Disk => d.disk_bytes / BYTES_PER_MB,
    }
}

fn next_phase(p: Phase) -> Option<Phase> {
    match p {
        Phase::Compute => Some(Phase::Memory),
        Phase::Memory => Some(Phase::Disk),
        Phase::Disk => None,
    }
}

enum Source<'a> {
    Open {
        times: &'a [f64],
        per_client: &'a [Vec<usize>],
        /// Next position in each client's list.
        cursor: Vec<usize>,
    },
    Closed {
        think_time: f64,
    },
}

struct Sim<'a> {
    profile: &'a WorkloadProfile,
    limits: &'a ResourceLimits,
    platform: &'a PlatformConfig,
    topology: Topology,
    rtt: f64,
    duration: f64,
    hard_stop: f64,
    now: f64,
    workers: Vec<Option<Active>>,
    queue: VecDeque<usize>,
    /// (time, key) where key is a request index (open) or session (closed).
    pending: BinaryHeap<Reverse<(Time, usize)>>,
    records: Vec<RequestRecord>,
    demands: Vec<WorkDemand>,
    busy: Vec<CoreBusy>,
    series: ResourceSeries,
    demand_rng: ChaCha8Rng,
    source: Source<'a>,
    max_queue_depth: usize,
}

impl<'a> Sim<'a> {
    fn phases(&self) -> Vec<Option<Phase>> {
        self.workers.iter().map(|w| w.map(|a| a.phase)).collect()
    }

    fn run(&mut self) {
        loop {
            let rates = recompute_drain_rates(&self.phases(), self.topology, self.profile, self.limits, self.platform);
            let done_at: Vec<f64> = self
                .workers
                .iter()
                .zip(&rates)
                .map(|(w, &r)| match w {
                    Some(a) if r > 0.0 => self.now + a.remaining / r,
                    _ => f64::INFINITY,
                })
                .collect();
            let next_issue = self.pending.peek().map_or(f64::INFINITY, |Reverse((t, _))| t.0);
            let t_next = done_at.iter().copied().fold(next_issue, f64::min);

            if !t_next.is_finite() {
                break;
            }
            if t_next > self.hard_stop {
                self.advance(self.hard_stop, &rates, &done_at);
                break;
            }
            self.advance(t_next, &rates, &done_at);

            for w in 0..self.workers.len() {
                if let Some(a) = self.workers[w] {
                    if a.remaining <= a.total * 1e-12 {
                        self.finish_phase(w);
                    }
                }
            }
            while let Some(&Reverse((t, key))) = self.pending.peek() {
                if t.0 > self.now {
                    break;
                }
                self.pending.pop();
                self.issue(key);
            }
            self.dispatch();
        }
        self.close_open_intervals();
    }

    fn advance(&mut self, t: f64, rates: &[f64], done_at: &[f64]) {
        let dt = t - self.now;
        if dt > 0.0 {
            let mut mem_rate = 0.0;
            let mut disk_rate = 0.0;
            for (w, &r) in self.workers.iter().zip(rates) {
                match w.map(|a| a.phase) {
                    Some(Phase::Memory) => mem_rate += r,
                    Some(Phase::Disk) => disk_rate += r,
                    _ => {}
                }
            }
            let iv = self.series.interval;
            ResourceSeries::spread(&mut self.series.mem_bytes, iv, self.now, t, mem_rate * BYTES_PER_MB);
            ResourceSeries::spread(&mut self.series.disk_bytes, iv, self.now, t, disk_rate * BYTES_PER_MB);
        }
        for (w, slot) in self.workers.iter_mut().enumerate() {
            if let Some(a) = slot {
                if done_at[w] == t {
                    a.remaining = 0.0;
                } else {
                    a.remaining = (a.remaining - rates[w] * dt).max(0.0);
                }
            }
        }
        self.now = t;
    }

    /// Moves worker `w` to its next non-empty phase, completing the request
    /// when none is left.
    fn finish_phase(&mut self, w: usize) {
        let mut a = self.workers[w].expect("active worker");
        let demand = self.demands[a.req];
        let mut next = next_phase(a.phase);
        while let Some(p) = next {
            let amount = phase_amount(&demand, p);
            if amount > 0.0 {
                break;
            }
            next = next_phase(p);
        }
        match next {
            Some(p) => {
                if a.phase.is_cpu_busy() && !p.is_cpu_busy() {
                    if let Some(s) = a.cpu_since.take() {
                        push_interval(&mut self.busy[w].cpu, s, self.now);
                    }
                    a.disk_since = Some(self.now);
                }
                a.phase = p;
                a.total = phase_amount(&demand, p);
                a.remaining = a.total;
                self.workers[w] = Some(a);
            }
            None => {
                if let Some(s) = a.cpu_since.take() {
                    push_interval(&mut self.busy[w].cpu, s, self.now);
                }
                if let Some(s) = a.disk_since.take() {
                    push_interval(&mut self.busy[w].disk, s, self.now);
                }
                self.workers[w] = None;
                self.complete(a.req);
            }
        }
    }

    fn complete(&mut self, req: usize) {
        let now = self.now;
        let rtt2 = 2.0 * self.rtt;
        let rec = &mut self.records[req];
        rec.completion_time = Some(now);
        rec.latency = Some(now - rec.scheduled_time + rtt2);
        let client = rec.client;
        let b = self.series.bucket(now);
        self.series.net_tx_bytes[b] += self.demands[req].net_tx_bytes;

        let free_at = now + rtt2;
        match &mut self.source {
            Source::Open { times, per_client, cursor } => {
                let list = &per_client[client];
                if cursor[client] < list.len() {
                    let next = list[cursor[client]];
                    cursor[client] += 1;
                    let t = times[next].max(free_at);
                    self.pending.push(Reverse((Time(t), next)));
                }
            }
            Source::Closed { think_time } => {
                let t = free_at + *think_time;
                if t < self.duration {
                    self.pending.push(Reverse((Time(t), client)));
                }
            }
        }
    }

    fn issue(&mut self, key: usize) {
        let now = self.now;
        let req = match self.source {
            Source::Open { .. } => key,
            Source::Closed { .. } => {
                let idx = self.records.len();
                self.records.push(RequestRecord {
                    index: idx,
                    client: key,
                    scheduled_time: now,
                    issue_time: None,
                    service_start: None,
                    completion_time: None,
                    worker: None,
                    timely: true,
                    latency: None,
                });
                let d = request_demands(self.profile, self.limits, self.platform, &mut self.demand_rng);
                self.demands.push(d);
                idx
            }
        };
        let rec = &mut self.records[req];
        rec.issue_time = Some(now);
        rec.timely = now <= rec.scheduled_time + TIMELY_EPSILON;
        let b = self.series.bucket(now);
        self.series.net_rx_bytes[b] += self.demands[req].net_rx_bytes;
        self.queue.push_back(req);
        self.max_queue_depth = self.max_queue_depth.max(self.queue.len());
    }

    fn dispatch(&mut self) {
        let mut w = 0;
        while w < self.workers.len() {
            if self.workers[w].is_some() {
                w += 1;
                continue;
            }
            let Some(req) = self.queue.pop_front() else {
                break;
            };
            self.records[req].service_start = Some(self.now);
            self.records[req].worker = Some(w);
            self.workers[w] = Some(Active {
                req,
                phase: Phase::Compute,
                remaining: 0.0,
                total: 0.0,
                cpu_since: Some(self.now),
                disk_since: None,
            });
            let amount = phase_amount(&self.demands[req], Phase::Compute);
            if amount > 0.0 {
                let a = self.workers[w].as_mut().unwrap();
                a.total = amount;
                a.remaining = amount;
            } else {
                // A request with no work at all completes instantly and the
                // same worker is offered the next one.
                self.finish_phase(w);
            }
        }
    }

    fn close_open_intervals(&mut self) {
        let now = self.now;
        for (w, slot) in self.workers.iter_mut().enumerate() {
            if let Some(a) = slot {
                if let Some(s) = a.cpu_since.take() {
                    push_interval(&mut self.busy[w].cpu, s, now);
                }
                if let Some(s) = a.disk_since.take() {
                    push_interval(&mut self.busy[w].disk, s, now);
                }
            }
        }
    }
}

fn check_inputs(
    profile: &WorkloadProfile,
    scenario: &ScenarioConfig,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
) -> Result<()> {
    platform.validate()?;
    crate::model::validate_profile(profile.clone(), platform)?;
    scenario.validate()?;
    limits.validate(platform)?;
    Ok(())
}

fn series_for(duration: f64, hard_stop: f64, opts: &SimOptions) -> Result<ResourceSeries> {
    if !(opts.sample_interval.is_finite() && opts.sample_interval > 0.0) {
        return Err(Error::InvalidArgument("sample_interval must be positive".into()));
    }
    if !(opts.drain_factor.is_finite() && opts.drain_factor >= 0.0) {
        return Err(Error::InvalidArgument("drain_factor must be non-negative".into()));
    }
    let _ = duration;
    let interval = opts.sample_interval.max(hard_stop / MAX_SERIES_LEN as f64);
    Ok(ResourceSeries::new(interval, hard_stop))
}

/// Seed of the per-request demand stream, independent of the arrival stream.
fn demand_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xD3A4D);
    rng
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_open_loop(
    profile: &WorkloadProfile,
    scenario: &ScenarioConfig,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    schedule: &ArrivalSchedule,
    assignment: &ClientAssignment,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trace> {
    check_inputs(profile, scenario, limits, platform)?;
    if !matches!(scenario.mode, LoadMode::OpenLoop { .. }) {
        return Err(Error::InvalidScenario("simulate_open_loop needs an open-loop scenario".into()));
    }
    let n = schedule.len();
    let covered: usize = assignment.per_client.iter().map(Vec::len).sum();
    if covered != n {
        return Err(Error::InvalidArgument(format!(
            "assignment covers {covered} requests, schedule has {n}"
        )));
    }
    let duration = scenario.duration;
    let hard_stop = duration * (1.0 + opts.drain_factor);
    let series = series_for(duration, hard_stop, opts)?;

    let mut rng = demand_rng(seed);
    let demands: Vec<WorkDemand> = (0..n)
        .map(|_| request_demands(profile, limits, platform, &mut rng))
        .collect();
    let mut client_of = vec![0usize; n];
    for (c, list) in assignment.per_client.iter().enumerate() {
        for &i in list {
            client_of[i] = c;
        }
    }
    let records = (0..n)
        .map(|i| RequestRecord {
            index: i,
            client: client_of[i],
            scheduled_time: schedule.scheduled_times[i],
            issue_time: None,
            service_start: None,
            completion_time: None,
            worker: None,
            timely: false,
            latency: None,
        })
        .collect();

    let mut pending = BinaryHeap::new();
    let mut cursor = vec![0usize; assignment.per_client.len()];
    for (c, list) in assignment.per_client.iter().enumerate() {
        if let Some(&first) = list.first() {
            pending.push(Reverse((Time(schedule.scheduled_times[first]), first)));
            cursor[c] = 1;
        }
    }

    let workers = scenario.topology.workers();
    let mut sim = Sim {
        profile,
        limits,
        platform,
        topology: scenario.topology,
        rtt: scenario.rtt,
        duration,
        hard_stop,
        now: 0.0,
        workers: vec![None; workers],
        queue: VecDeque::new(),
        pending,
        records,
        demands,
        busy: vec![CoreBusy::default(); workers],
        series,
        demand_rng: rng,
        source: Source::Open {
            times: &schedule.scheduled_times,
            per_client: &assignment.per_client,
            cursor,
        },
        max_queue_depth: 0,
    };
    sim.run();
    Ok(finish(sim, profile, scenario, limits, platform, seed, Some(schedule.model)))
}

pub fn simulate_closed_loop(
    profile: &WorkloadProfile,
    scenario: &ScenarioConfig,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trace> {
    check_inputs(profile, scenario, limits, platform)?;
    let LoadMode::ClosedLoop { sessions, think_time } = scenario.mode else {
        return Err(Error::InvalidScenario("simulate_closed_loop needs a closed-loop scenario".into()));
    };
    let duration = scenario.duration;
    let hard_stop = duration * (1.0 + opts.drain_factor);
    let series = series_for(duration, hard_stop, opts)?;
    let pending = (0..sessions).map(|s| Reverse((Time(0.0), s))).collect();
    let workers = scenario.topology.workers();
    let mut sim = Sim {
        profile,
        limits,
        platform,
        topology: scenario.topology,
        rtt: scenario.rtt,
        duration,
        hard_stop,
        now: 0.0,
        workers: vec![None; workers],
        queue: VecDeque::new(),
        pending,
        records: Vec::new(),
        demands: Vec::new(),
        busy: vec![CoreBusy::default(); workers],
        series,
        demand_rng: demand_rng(seed),
        source: Source::Closed { think_time },
        max_queue_depth: 0,
    };
    sim.run();
    Ok(finish(sim, profile, scenario, limits, platform, seed, None))
}

fn finish(
    sim: Sim<'_>,
    profile: &WorkloadProfile,
    scenario: &ScenarioConfig,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    seed: u64,
    arrival: Option<ArrivalModel>,
) -> Trace {
    let censored = sim.records.iter().filter(|r| r.completion_time.is_none()).count();
    Trace {
        censored,
        saturated: censored > 0,
        horizon: sim.now.max(scenario.duration),
        max_queue_depth: sim.max_queue_depth,
        records: sim.records,
        demands: sim.demands,
        busy: sim.busy,
        series: sim.series,
        meta: RunMeta {
            profile: profile.clone(),
            scenario: scenario.clone(),
            limits: *limits,
            platform: platform.clone(),
            seed,
            arrival,
        },
    }
}

/// Runs a scenario end to end: builds the schedule and client assignment for
/// open-loop modes, or drives sessions for closed-loop ones.
pub fn run_scenario(
    profile: &WorkloadProfile,
    scenario: &ScenarioConfig,
    limits: &ResourceLimits,
    platform: &PlatformConfig,
    arrival: ArrivalModel,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trace> {
    match scenario.mode {
        LoadMode::OpenLoop { qps } => {
            let schedule = crate::loadgen::build_schedule(arrival, qps, scenario.duration, seed)?;
            let assignment = crate::loadgen::assign_clients(&schedule, scenario.n_clients)?;
            let demand_seed = crate::loadgen::derive_seed(seed, 1);
            simulate_open_loop(profile, scenario, limits, platform, &schedule, &assignment, demand_seed, opts)
        }
        LoadMode::ClosedLoop { .. } => simulate_closed_loop(profile, scenario, limits, platform, seed, opts),
    }
}
