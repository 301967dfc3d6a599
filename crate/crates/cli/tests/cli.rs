//! End-to-end behaviour of the `lcsim` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PROFILE: &str = "\
name: toy
cpu_work: 0.001
service_dist: exponential
mem_accesses: 20000
miss_min: 0.1
miss_max: 0.4
miss_shape: 1
mem_stream_rate: 9000
footprint: 8
disk_bytes: 0
disk_stream_rate: 550
net_tx_bytes: 1000
net_rx_bytes: 100
smt_efficiency: 0.8
qos_multiplier: 5
";

const SPEC: &str = "\
profile: toy.profile
range: 100 1400
points: 6
clients: 32
duration: 5
min_requests: 2000
seeds: 1 2
ways_list: 11 4
bw_limits: 1500
probe_qps: 600
target_lqos: 0.006
target_saturation: 600
";

fn lcsim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcsim"))
        .args(args)
        .env("LCSIM_OUT", out)
        .output()
        .expect("binary runs")
}

fn workspace(spec: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.profile"), PROFILE).unwrap();
    let spec_path = dir.path().join("toy.spec");
    std::fs::write(&spec_path, spec).unwrap();
    (dir, spec_path)
}

fn read_all(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn entries(dir: &Path) -> Vec<String> {
    match std::fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    }
}

#[test]
fn sweep_writes_csv_summary_and_manifest() {
    let (dir, spec) = workspace(SPEC);
    let out = dir.path().join("out");
    let o = lcsim(&["sweep", spec.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("toy/sweep");
    let csv = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "qps,p50,p95,p99,util,mem_bw,disk_bw,net_tx,net_rx,llc_occ,timely_ratio,saturated"
    );
    assert_eq!(lines.count(), 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in entries(&run) {
        if name != "manifest.json" {
            assert!(listed.contains(&name.as_str()), "{name} not listed");
        }
    }
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2]));
}

#[test]
fn every_command_replays_byte_identically() {
    let (dir, spec) = workspace(SPEC);
    let out = dir.path().join("out");
    for cmd in ["sweep", "characterize", "partition", "classify", "calibrate"] {
        let o = lcsim(&[cmd, spec.to_str().unwrap()], &out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let first = out.join("toy").join(cmd);
        let again = dir.path().join("again");
        let manifest = first.join("manifest.json");
        let o = lcsim(&["--out", again.to_str().unwrap(), "replay", manifest.to_str().unwrap()], &out);
        assert!(o.status.success(), "replay {cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let second = again.join("toy").join(cmd);
        let a = read_all(&first);
        assert!(!a.is_empty());
        assert_eq!(a, read_all(&second), "{cmd}");
    }
}

#[test]
fn global_flags_override_the_spec() {
    let (dir, spec) = workspace(SPEC);
    let out = dir.path().join("flags");
    let o = lcsim(
        &["--seed", "9", "--points", "4", "--warmup", "1", "--parallelism", "2", "--out", out.to_str().unwrap(), "sweep", spec.to_str().unwrap()],
        Path::new("/nonexistent-env-root"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("toy/sweep");
    assert_eq!(std::fs::read_to_string(run.join("sweep.csv")).unwrap().lines().count(), 5);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([9]));
    assert_eq!(m["warmup"], serde_json::json!(1.0));
}

#[test]
fn missing_profile_is_a_validation_error() {
    let (dir, spec) = workspace(&SPEC.replace("toy.profile", "nope.profile"));
    let out = dir.path().join("out");
    let o = lcsim(&["sweep", spec.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nope.profile") && err.contains(":1"), "{err}");
    assert!(!out.exists() || entries(&out).is_empty());
}

#[test]
fn malformed_spec_reports_the_line() {
    let (dir, spec) = workspace(&SPEC.replace("points: 6", "points: six"));
    let out = dir.path().join("out");
    let o = lcsim(&["sweep", spec.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3"), "{}", String::from_utf8_lossy(&o.stderr));
    let (dir, spec) = workspace(&format!("{SPEC}bogus_key: 1\n"));
    let o = lcsim(&["sweep", spec.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn invalid_values_exit_2_without_output() {
    let out_of_range = SPEC.replace("ways_list: 11 4", "ways_list: 12 4");
    let (dir, spec) = workspace(&out_of_range);
    let out = dir.path().join("out");
    let o = lcsim(&["partition", spec.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(entries(&out.join("toy")).is_empty());
    let o = lcsim(&["--parallelism", "0", "sweep", spec.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = lcsim(&["sweep", dir.path().join("absent.spec").to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_lqos_exits_3_and_override_fixes_it() {
    // Disk-bound: the CPU idles while requests wait on I/O.
    let profile = PROFILE
        .replace("cpu_work: 0.001", "cpu_work: 0.0002")
        .replace("disk_bytes: 0", "disk_bytes: 30000")
        .replace("disk_stream_rate: 550", "disk_stream_rate: 6");
    let spec = "profile: toy.profile\nrange: 10 300\npoints: 6\nclients: 16\nduration: 5\nmin_requests: 500\n";
    let (dir, spec_path) = workspace(spec);
    std::fs::write(dir.path().join("toy.profile"), &profile).unwrap();
    let out = dir.path().join("out");
    for cmd in ["sweep", "characterize", "classify"] {
        let o = lcsim(&[cmd, spec_path.to_str().unwrap()], &out);
        assert_eq!(o.status.code(), Some(3), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("UNREACHABLE"));
        assert!(entries(&out.join("toy")).is_empty(), "{cmd} left output");
    }
    std::fs::write(&spec_path, format!("{spec}lqos_override: 0.025\nlqos_reason: disk bound\n")).unwrap();
    let o = lcsim(&["characterize", spec_path.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("toy/characterize/classification.json")).unwrap())
            .unwrap();
    assert_eq!(c["category"], "HIGH_DISK");
}

#[test]
fn characterize_emits_six_panels() {
    let (dir, spec) = workspace(SPEC);
    let out = dir.path().join("out");
    let o = lcsim(&["characterize", spec.to_str().unwrap()], &out);
    assert!(o.status.success());
    let names = entries(&out.join("toy/characterize"));
    let svgs = names.iter().filter(|n| n.ends_with(".svg")).count();
    assert_eq!(svgs, 6, "{names:?}");
    for t in ["one_st", "two_st", "two_smt"] {
        assert!(names.contains(&format!("sweep_{t}.csv")));
    }
}
