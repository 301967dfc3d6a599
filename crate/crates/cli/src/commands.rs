use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use lcsim::experiments::{
    calibrate_profile, cat_sweep, compare_scenarios, derive_lqos, mba_sweep, qps_sweep, saturation_qps, LoadAxis,
    QosTarget, SweepResult,
};
use lcsim::format::{profile_to_text, read_spec, ExperimentSpec};
use lcsim::metrics::MetricsSummary;
use lcsim::model::{ResourceLimits, Topology};
use lcsim::taxonomy::{classify, extract_features};
use lcsim::Error;

use crate::output::{default_out_root, Bundle, RunManifest, SweepStatus, Versions, MANIFEST};
use crate::plot::{render, Panel, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Sweep,
    Characterize,
    Partition,
    Classify,
    Calibrate,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Sweep => "sweep",
            CommandKind::Characterize => "characterize",
            CommandKind::Partition => "partition",
            CommandKind::Classify => "classify",
            CommandKind::Calibrate => "calibrate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CommandKind::Sweep,
            CommandKind::Characterize,
            CommandKind::Partition,
            CommandKind::Classify,
            CommandKind::Calibrate,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

/// Overrides applied on top of an experiment spec.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub points: Option<usize>,
    pub warmup: Option<f64>,
    pub out_root: Option<PathBuf>,
    /// Exact output directory, used by replay.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Unreachable(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Unreachable(_) => 3,
            CliError::Failure(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Unreachable(m) | CliError::Failure(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unreachable(_) => CliError::Unreachable(e.to_string()),
            Error::Calibration(_) | Error::Io(_) => CliError::Failure(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

pub struct Outcome {
    pub output_dir: PathBuf,
    pub summary: String,
}

pub fn run(kind: CommandKind, spec_path: &Path, ov: &Overrides) -> CliResult<Outcome> {
    let start = Instant::now();
    let mut spec = read_spec(spec_path)?;
    if let Some(s) = &ov.seeds {
        spec.plan.seeds = s.clone();
    }
    if let Some(p) = ov.points {
        spec.plan.n_points = p;
    }
    if ov.warmup.is_some() {
        spec.plan.warmup = ov.warmup;
    }
    spec.plan.validate()?;

    let mut bundle = Bundle::default();
    let (sweeps, summary) = match kind {
        CommandKind::Sweep => cmd_sweep(&spec, &mut bundle)?,
        CommandKind::Characterize => cmd_characterize(&spec, &mut bundle)?,
        CommandKind::Partition => cmd_partition(&spec, &mut bundle)?,
        CommandKind::Classify => cmd_classify(&spec, &mut bundle)?,
        CommandKind::Calibrate => cmd_calibrate(&spec, &mut bundle)?,
    };

    let output_dir = match &ov.out_dir {
        Some(d) => d.clone(),
        None => ov
            .out_root
            .clone()
            .unwrap_or_else(default_out_root)
            .join(&spec.name)
            .join(kind.name()),
    };
    let spec_abs = std::fs::canonicalize(spec_path).unwrap_or_else(|_| spec_path.to_path_buf());
    let manifest = RunManifest {
        command: kind.name().into(),
        spec: spec_abs,
        seeds: spec.plan.seeds.clone(),
        points: spec.plan.n_points,
        warmup: spec.plan.warmup,
        output_dir: output_dir.clone(),
        versions: Versions {
            lcsim: env!("CARGO_PKG_VERSION").into(),
            manifest_format: 1,
        },
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        sweeps,
        outputs: bundle.names(),
    };
    bundle.add_json(MANIFEST, &manifest);
    bundle
        .commit(&output_dir)
        .map_err(|e| CliError::Failure(format!("writing {}: {e}", output_dir.display())))?;
    Ok(Outcome { output_dir, summary })
}

pub fn replay(manifest_path: &Path, ov: &Overrides) -> CliResult<Outcome> {
    let m = RunManifest::read(manifest_path).map_err(CliError::Validation)?;
    let kind = CommandKind::parse(&m.command)
        .ok_or_else(|| CliError::Validation(format!("unknown command `{}` in manifest", m.command)))?;
    let ov = Overrides {
        seeds: Some(m.seeds.clone()),
        points: Some(m.points),
        warmup: m.warmup,
        out_root: None,
        out_dir: Some(match &ov.out_root {
            Some(root) => {
                let leaf: Vec<_> = m.output_dir.components().rev().take(2).collect();
                leaf.iter().rev().fold(root.clone(), |acc, c| acc.join(c))
            }
            None => m.output_dir.clone(),
        }),
    };
    run(kind, &m.spec, &ov)
}

fn status_of(name: &str, s: &SweepResult) -> SweepStatus {
    let flagged = s.points.iter().filter(|p| !p.timely_ok).count();
    SweepStatus {
        name: name.into(),
        status: if flagged == 0 {
            "ok".into()
        } else {
            format!("ok; {flagged} point(s) below the timely gate")
        },
    }
}

fn unconstrained_one_st(spec: &ExperimentSpec) -> CliResult<SweepResult> {
    let lim = ResourceLimits::unconstrained(&spec.platform);
    Ok(qps_sweep(&spec.profile, Topology::OneSt, &lim, &spec.platform, &spec.plan)?)
}

/// The spec's override, or the LQoS derived from `basis` (the unconstrained
/// single-thread sweep).
fn resolve_qos(spec: &ExperimentSpec, basis: &SweepResult) -> CliResult<QosTarget> {
    if let Some(o) = &spec.lqos_override {
        return Ok(match derive_lqos(basis, spec.profile.qos_multiplier) {
            Ok(q) => q.with_override(o.lqos, o.reason.clone()),
            Err(_) => QosTarget::manual(o.lqos, o.reason.clone()),
        });
    }
    derive_lqos(basis, spec.profile.qos_multiplier).map_err(|e| match e {
        Error::Unreachable(m) => CliError::Unreachable(format!(
            "UNREACHABLE: {m}; set `lqos_override` in {}",
            spec.path.display()
        )),
        other => other.into(),
    })
}

fn is_reference(spec: &ExperimentSpec, topology: Topology) -> bool {
    topology == Topology::OneSt && spec.limits() == ResourceLimits::unconstrained(&spec.platform)
}

fn x_label(axis: LoadAxis) -> &'static str {
    match axis {
        LoadAxis::Qps => "QPS",
        LoadAxis::Sessions { .. } => "Sessions",
    }
}

fn latency_title(axis: LoadAxis) -> &'static str {
    match axis {
        LoadAxis::Qps => "95th tail latency",
        LoadAxis::Sessions { .. } => "95th transfer+response time",
    }
}

fn series(label: String, s: &SweepResult, f: impl Fn(&MetricsSummary) -> f64) -> Series {
    Series {
        label,
        points: s.points.iter().map(|p| (p.qps, f(&p.summary))).collect(),
    }
}

fn make_panel(
    title: &str,
    y_label: &str,
    axis: LoadAxis,
    range: (f64, f64),
    lines: &[(String, &SweepResult)],
    f: impl Fn(&MetricsSummary) -> f64 + Copy,
) -> Panel {
    let mut p = Panel::new(title, x_label(axis), y_label);
    p.log_x = matches!(axis, LoadAxis::Qps) && range.1 / range.0 >= 10.0;
    p.series = lines.iter().map(|(l, s)| series(l.clone(), s, f)).collect();
    p
}

fn latency_panel(axis: LoadAxis, range: (f64, f64), lines: &[(String, &SweepResult)], qos: &QosTarget) -> Panel {
    let mut p = make_panel(latency_title(axis), "ms", axis, range, lines, |m| m.p95 * 1e3);
    p.log_y = true;
    p.hline = Some((format!("LQoS {:.3} ms", qos.lqos * 1e3), qos.lqos * 1e3));
    p
}

fn cmd_sweep(spec: &ExperimentSpec, out: &mut Bundle) -> CliResult<(Vec<SweepStatus>, String)> {
    let lim = spec.limits();
    let sweep = qps_sweep(&spec.profile, spec.topology, &lim, &spec.platform, &spec.plan)?;
    let basis = if is_reference(spec, spec.topology) {
        sweep.clone()
    } else {
        unconstrained_one_st(spec)?
    };
    let qos = resolve_qos(spec, &basis)?;
    let sat = saturation_qps(&sweep, &qos);
    out.add("sweep.csv", sweep.to_csv());
    let flagged: Vec<f64> = sweep.points.iter().filter(|p| !p.timely_ok).map(|p| p.qps).collect();
    out.add_json(
        "summary.json",
        &json!({
            "workload": spec.profile.name,
            "topology": spec.topology.key(),
            "limits": lim,
            "load": spec.plan.axis.label(),
            "range": [spec.plan.range.0, spec.plan.range.1],
            "qos": qos,
            "saturation": sat,
            "timely_flagged_points": flagged,
        }),
    );
    let summary = format!(
        "{} {}: LQoS {:.4} ms, saturation {:.3} {}{}",
        spec.profile.name,
        spec.topology.label(),
        qos.lqos * 1e3,
        sat.qps,
        spec.plan.axis.label(),
        if sat.flagged { " (flagged)" } else { "" }
    );
    Ok((vec![status_of(spec.topology.key(), &sweep)], summary))
}

fn cmd_characterize(spec: &ExperimentSpec, out: &mut Bundle) -> CliResult<(Vec<SweepStatus>, String)> {
    let qos_in = spec
        .lqos_override
        .as_ref()
        .map(|o| QosTarget::manual(o.lqos, o.reason.clone()));
    let lim = spec.limits();
    let cmp = match compare_scenarios(&spec.profile, &lim, &spec.platform, &spec.plan, qos_in) {
        Ok(c) => c,
        Err(Error::Unreachable(m)) => {
            return Err(CliError::Unreachable(format!(
                "UNREACHABLE: {m}; set `lqos_override` in {}",
                spec.path.display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let qos = match &spec.lqos_override {
        Some(o) => match derive_lqos(cmp.sweep(Topology::OneSt), spec.profile.qos_multiplier) {
            Ok(q) => q.with_override(o.lqos, o.reason.clone()),
            Err(_) => cmp.qos.clone(),
        },
        None => cmp.qos.clone(),
    };
    let features = extract_features(&cmp.sweeps, &qos)?;
    let class = classify(&features, &spec.thresholds);

    let mut statuses = Vec::new();
    for s in &cmp.sweeps {
        out.add(format!("sweep_{}.csv", s.topology.key()), s.to_csv());
        statuses.push(status_of(s.topology.key(), s));
    }
    let ratios: serde_json::Map<String, serde_json::Value> =
        cmp.ratios.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    out.add_json(
        "summary.json",
        &json!({
            "workload": spec.profile.name,
            "load": spec.plan.axis.label(),
            "range": [spec.plan.range.0, spec.plan.range.1],
            "qos": qos,
            "topologies": cmp.rows,
            "ratios": ratios,
            "category": class.category,
        }),
    );
    out.add("classification.json", class.to_json() + "\n");

    let axis = spec.plan.axis;
    let range = spec.plan.range;
    let lines: Vec<(String, &SweepResult)> = cmp.sweeps.iter().map(|s| (s.topology.label().to_string(), s)).collect();
    let panels = [
        ("a_latency.svg", latency_panel(axis, range, &lines, &qos)),
        (
            "b_cpu_utilization.svg",
            make_panel("CPU utilization", "%", axis, range, &lines, |m| m.cpu_utilization * 100.0),
        ),
        ("c_net_tx.svg", make_panel("Network transmit", "MB/s", axis, range, &lines, |m| m.net_tx_bw)),
        ("d_disk_bw.svg", make_panel("Disk bandwidth", "MB/s", axis, range, &lines, |m| m.disk_bw)),
        ("e_mem_bw.svg", make_panel("Memory bandwidth", "MB/s", axis, range, &lines, |m| m.mem_bw)),
        ("f_llc_occupancy.svg", make_panel("LLC occupancy", "MB", axis, range, &lines, |m| m.llc_occupancy)),
    ];
    for (name, p) in panels {
        out.add(name, render(&p));
    }
    let one = &cmp.row(Topology::OneSt).saturation;
    let summary = format!(
        "{}: LQoS {:.4} ms, 1-ST saturation {:.3} {}, category {}",
        spec.profile.name,
        qos.lqos * 1e3,
        one.qps,
        axis.label(),
        class.category
    );
    Ok((statuses, summary))
}

fn limit_label(l: Option<f64>) -> String {
    match l {
        None => "unlimited".into(),
        Some(v) => format!("{v}"),
    }
}

fn cmd_partition(spec: &ExperimentSpec, out: &mut Bundle) -> CliResult<(Vec<SweepStatus>, String)> {
    if spec.ways_list.is_empty() && spec.bw_limits.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: partition needs `ways_list` and/or `bw_limits`",
            spec.path.display()
        )));
    }
    for &w in &spec.ways_list {
        if w < 1 || w > spec.platform.llc_total_ways {
            return Err(Error::WaysOutOfRange {
                ways: w,
                total: spec.platform.llc_total_ways,
            }
            .into());
        }
    }
    let basis = unconstrained_one_st(spec)?;
    let qos = resolve_qos(spec, &basis)?;
    let axis = spec.plan.axis;
    let range = spec.plan.range;
    let mut statuses = Vec::new();
    let mut summary = json!({
        "workload": spec.profile.name,
        "topology": spec.topology.key(),
        "qos": qos,
    });
    let mut text = format!("{}: LQoS {:.4} ms", spec.profile.name, qos.lqos * 1e3);

    if !spec.ways_list.is_empty() {
        let cat = cat_sweep(&spec.profile, spec.topology, &spec.platform, &spec.ways_list, &spec.plan, &qos)?;
        for c in &cat {
            let name = format!("cat_ways_{}", c.ways);
            out.add(format!("{name}.csv"), c.sweep.to_csv());
            statuses.push(status_of(&name, &c.sweep));
            text.push_str(&format!("; {} ways -> {:.3}", c.ways, c.saturation.qps));
        }
        let lines: Vec<(String, &SweepResult)> =
            cat.iter().map(|c| (format!("{} ways ({} MB)", c.ways, c.capacity_mb), &c.sweep)).collect();
        out.add("cat_latency.svg", render(&latency_panel(axis, range, &lines, &qos)));
        out.add(
            "cat_llc_occupancy.svg",
            render(&make_panel("LLC occupancy", "MB", axis, range, &lines, |m| m.llc_occupancy)),
        );
        out.add(
            "cat_mem_bw.svg",
            render(&make_panel("Memory bandwidth", "MB/s", axis, range, &lines, |m| m.mem_bw)),
        );
        summary["cat"] = json!(cat
            .iter()
            .map(|c| json!({"ways": c.ways, "capacity_mb": c.capacity_mb, "saturation": c.saturation}))
            .collect::<Vec<_>>());
    }

    if !spec.bw_limits.is_empty() {
        let rep = mba_sweep(
            &spec.profile,
            spec.topology,
            &spec.platform,
            spec.ways,
            &spec.bw_limits,
            &spec.plan,
            &qos,
            spec.probe_qps,
        )?;
        for p in &rep.points {
            let name = format!("mba_{}", limit_label(p.limit));
            out.add(format!("{name}.csv"), p.sweep.to_csv());
            statuses.push(status_of(&name, &p.sweep));
            text.push_str(&format!("; limit {} -> {:.3}", limit_label(p.limit), p.saturation.qps));
        }
        let lines: Vec<(String, &SweepResult)> = rep
            .points
            .iter()
            .map(|p| (format!("{} ways, {}", rep.ways, limit_label(p.limit)), &p.sweep))
            .collect();
        out.add("mba_latency.svg", render(&latency_panel(axis, range, &lines, &qos)));
        out.add(
            "mba_cpu_utilization.svg",
            render(&make_panel("CPU utilization", "%", axis, range, &lines, |m| m.cpu_utilization * 100.0)),
        );
        out.add(
            "mba_mem_bw.svg",
            render(&make_panel("Memory bandwidth", "MB/s", axis, range, &lines, |m| m.mem_bw)),
        );
        summary["mba"] = json!({
            "ways": rep.ways,
            "probe_qps": rep.probe_qps,
            "points": rep.points.iter().map(|p| json!({
                "limit": p.limit,
                "saturation": p.saturation,
                "peak_mem_bw": p.peak_mem_bw,
                "probe_utilization": p.probe.as_ref().map(|s| s.cpu_utilization),
                "util_delta": p.util_delta,
            })).collect::<Vec<_>>(),
        });
    }
    out.add_json("summary.json", &summary);
    Ok((statuses, text))
}

fn cmd_classify(spec: &ExperimentSpec, out: &mut Bundle) -> CliResult<(Vec<SweepStatus>, String)> {
    let sweep = unconstrained_one_st(spec)?;
    let qos = resolve_qos(spec, &sweep)?;
    let features = extract_features(std::slice::from_ref(&sweep), &qos)?;
    let class = classify(&features, &spec.thresholds);
    out.add("sweep_one_st.csv", sweep.to_csv());
    out.add("classification.json", class.to_json() + "\n");
    let text = format!("{}: {} (rule {})", spec.profile.name, class.category, class.fired_rule);
    Ok((vec![status_of("one_st", &sweep)], text))
}

fn cmd_calibrate(spec: &ExperimentSpec, out: &mut Bundle) -> CliResult<(Vec<SweepStatus>, String)> {
    if spec.targets.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: calibrate needs at least one `target_*` key",
            spec.path.display()
        )));
    }
    let rep = calibrate_profile(&spec.profile, &spec.targets, &spec.platform, &spec.plan, None)?;
    out.add(format!("{}.profile", rep.profile.name), profile_to_text(&rep.profile));
    out.add_json("calibration.json", &rep);
    let text = format!(
        "{}: calibrated in {} evaluations, max residual {:.1}%",
        spec.profile.name,
        rep.iterations,
        100.0 * rep.max_residual()
    );
    Ok((Vec::new(), text))
}
