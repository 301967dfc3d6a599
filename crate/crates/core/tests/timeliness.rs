//! Timely-request accounting against hand-computed fixtures.

use lcsim::engine::{run_scenario, SimOptions, Trace};
use lcsim::experiments::{qps_sweep, SweepPlan};
use lcsim::loadgen::ArrivalModel;
use lcsim::metrics::{timely_ratio, TIMELY_GATE};
use lcsim::model::{
    PlatformConfig, ResourceLimits, ScenarioConfig, ServiceDist, Topology, WorkloadProfile, DEFAULT_RTT,
};

fn fixture(clients: usize) -> Trace {
    // 1000 requests, 1 ms apart, each holding its client for 10.2 ms.
    let p = WorkloadProfile::compute_only("t", 0.010, ServiceDist::Deterministic);
    let plat = PlatformConfig::default();
    let s = ScenarioConfig::open_loop(Topology::OneSt, clients, 1000.0, 1.0);
    let l = ResourceLimits::unconstrained(&plat);
    run_scenario(&p, &s, &l, &plat, ArrivalModel::Deterministic, 0, &SimOptions::default()).unwrap()
}

#[test]
fn single_client_overload_has_one_timely_request() {
    let t = fixture(1);
    assert_eq!(t.records.len(), 1000);
    assert_eq!(timely_ratio(&t).ratio, 1.0 / 1000.0);
    assert!(t.records[0].timely);
}

#[test]
fn enough_clients_keep_every_request_timely() {
    // One client per request: nobody is ever busy at its scheduled time,
    // even though the server itself is overloaded.
    let t = fixture(1000);
    assert_eq!(timely_ratio(&t).ratio, 1.0);
}

#[test]
fn gate_flags_exactly_the_predicted_points() {
    // One client, deterministic arrivals and 1 ms service: every request is
    // timely iff the gap 1/qps covers service plus the round trip.
    let p = WorkloadProfile::compute_only("g", 0.001, ServiceDist::Deterministic);
    let plat = PlatformConfig::default();
    let mut plan = SweepPlan::open((200.0, 1600.0), 9, 1);
    plan.arrival = ArrivalModel::Deterministic;
    plan.duration = 10.0;
    plan.min_requests = 2_000;
    let s = qps_sweep(&p, Topology::OneSt, &ResourceLimits::unconstrained(&plat), &plat, &plan).unwrap();
    let cutoff = 1.0 / (0.001 + 2.0 * DEFAULT_RTT);
    for pt in &s.points {
        let predicted = pt.qps <= cutoff;
        assert_eq!(pt.timely_ok, predicted, "qps {} ratio {}", pt.qps, pt.summary.timely_ratio);
        assert_eq!(pt.summary.timely_ratio >= TIMELY_GATE, predicted);
    }
    assert!(s.points.iter().any(|p| p.timely_ok) && s.points.iter().any(|p| !p.timely_ok));
}
