//! Resource-signature features and the four-way workload classifier.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::experiments::{saturation_qps, LoadAxis, QosTarget, SweepResult};
use crate::model::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadKind {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Seconds.
    pub p95_at_saturation: f64,
    pub saturation_qps: f64,
    pub max_cpu_utilization: f64,
    /// MB/s.
    pub mem_bw_at_saturation: f64,
    pub disk_bw_at_saturation: f64,
    pub net_tx_bw_peak: f64,
    pub mode: LoadKind,
    /// Read at the highest gated point because no point met the QoS.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    HighProcessor,
    HighDisk,
    Fast,
    Streaming,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::HighProcessor => "HIGH_PROCESSOR",
            Category::HighDisk => "HIGH_DISK",
            Category::Fast => "FAST",
            Category::Streaming => "STREAMING",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// MB/s.
    pub streaming_net_tx: f64,
    /// Seconds.
    pub processor_p95: f64,
    pub processor_max_qps: f64,
    pub processor_min_util: f64,
    /// MB/s.
    pub disk_bw: f64,
    /// Seconds.
    pub disk_min_p95: f64,
    pub disk_max_qps: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            streaming_net_tx: 100.0,
            processor_p95: 1.0,
            processor_max_qps: 10.0,
            processor_min_util: 0.95,
            disk_bw: 2.0,
            disk_min_p95: 0.003,
            disk_max_qps: 1000.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            ("streaming_net_tx", self.streaming_net_tx),
            ("processor_p95", self.processor_p95),
            ("processor_max_qps", self.processor_max_qps),
            ("processor_min_util", self.processor_min_util),
            ("disk_bw", self.disk_bw),
            ("disk_min_p95", self.disk_min_p95),
            ("disk_max_qps", self.disk_max_qps),
        ];
        match all.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, v)) => Err(crate::Error::InvalidArgument(format!(
                "threshold {name} must be positive, got {v}"
            ))),
            None => Ok(()),
        }
    }
}

/// One evaluated rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleStep {
    pub rule: String,
    pub predicate: String,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub category: Category,
    pub fired_rule: String,
    pub trace: Vec<RuleStep>,
    pub features: FeatureVector,
}

impl Classification {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("classification serializes")
    }
}

/// Reads features from the unconstrained single-thread sweep. Saturation-point
/// values are interpolated; peaks span the whole sweep.
pub fn extract_features(sweeps: &[SweepResult], qos: &QosTarget) -> crate::Result<FeatureVector> {
    let sweep = sweeps
        .iter()
        .find(|s| s.topology == Topology::OneSt)
        .ok_or_else(|| crate::Error::InvalidArgument("features need the 1-ST characterization sweep".into()))?;
    let sat = saturation_qps(sweep, qos);
    let at = if sat.flagged {
        sweep
            .points
            .iter()
            .rev()
            .find(|p| p.timely_ok)
            .map(|p| p.qps)
            .unwrap_or(sweep.points[0].qps)
    } else {
        sat.qps
    };
    let mode = match sweep.axis {
        LoadAxis::Qps => LoadKind::Open,
        LoadAxis::Sessions { .. } => LoadKind::Closed,
    };
    Ok(FeatureVector {
        p95_at_saturation: sweep.metric_at(at, |m| m.p95),
        saturation_qps: at,
        max_cpu_utilization: sweep.peak(|m| m.cpu_utilization).min(1.0),
        mem_bw_at_saturation: sweep.metric_at(at, |m| m.mem_bw),
        disk_bw_at_saturation: sweep.metric_at(at, |m| m.disk_bw),
        net_tx_bw_peak: sweep.peak(|m| m.net_tx_bw),
        mode,
        flagged: sat.flagged,
    })
}

/// Ordered rules; the first that fires decides.
pub fn classify(features: &FeatureVector, t: &Thresholds) -> Classification {
    let f = features;
    let rules: [(&str, String, bool, Category); 3] = [
        (
            "streaming",
            format!("net_tx_bw_peak {:.3} >= {}", f.net_tx_bw_peak, t.streaming_net_tx),
            f.net_tx_bw_peak >= t.streaming_net_tx,
            Category::Streaming,
        ),
        (
            "high_processor",
            format!(
                "p95_at_saturation {:.6} >= {} && saturation_qps {:.3} < {} && max_cpu_utilization {:.3} >= {}",
                f.p95_at_saturation,
                t.processor_p95,
                f.saturation_qps,
                t.processor_max_qps,
                f.max_cpu_utilization,
                t.processor_min_util
            ),
            f.p95_at_saturation >= t.processor_p95
                && f.saturation_qps < t.processor_max_qps
                && f.max_cpu_utilization >= t.processor_min_util,
            Category::HighProcessor,
        ),
        (
            "high_disk",
            format!(
                "disk_bw_at_saturation {:.3} >= {} && p95_at_saturation {:.6} >= {} && saturation_qps {:.3} < {}",
                f.disk_bw_at_saturation,
                t.disk_bw,
                f.p95_at_saturation,
                t.disk_min_p95,
                f.saturation_qps,
                t.disk_max_qps
            ),
            f.disk_bw_at_saturation >= t.disk_bw
                && f.p95_at_saturation >= t.disk_min_p95
                && f.saturation_qps < t.disk_max_qps,
            Category::HighDisk,
        ),
    ];
    let mut trace = Vec::new();
    for (name, predicate, fired, category) in rules {
        trace.push(RuleStep {
            rule: name.to_string(),
            predicate,
            fired,
        });
        if fired {
            return Classification {
                category,
                fired_rule: name.to_string(),
                trace,
                features: f.clone(),
            };
        }
    }
    trace.push(RuleStep {
        rule: "fast".into(),
        predicate: "default".into(),
        fired: true,
    });
    Classification {
        category: Category::Fast,
        fired_rule: "fast".into(),
        trace,
        features: f.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(p95: f64, sat: f64, util: f64, disk: f64, tx: f64) -> FeatureVector {
        FeatureVector {
            p95_at_saturation: p95,
            saturation_qps: sat,
            max_cpu_utilization: util,
            mem_bw_at_saturation: 0.0,
            disk_bw_at_saturation: disk,
            net_tx_bw_peak: tx,
            mode: LoadKind::Open,
            flagged: false,
        }
    }

    #[test]
    fn reference_signatures() {
        let t = Thresholds::default();
        assert_eq!(classify(&fv(4.275, 0.7, 1.0, 0.0, 0.0), &t).category, Category::HighProcessor);
        assert_eq!(classify(&fv(0.0005, 1000.0, 0.9, 0.0, 1.0), &t).category, Category::Fast);
        assert_eq!(classify(&fv(0.02, 24.0, 0.6, 0.5, 550.0), &t).category, Category::Streaming);
        assert_eq!(classify(&fv(0.0071, 30.0, 0.3, 2.4, 0.0), &t).category, Category::HighDisk);
    }

    #[test]
    fn disk_rule_needs_slow_tail_and_low_load() {
        let t = Thresholds::default();
        assert_eq!(classify(&fv(0.002, 300.0, 0.5, 2.5, 0.0), &t).category, Category::Fast);
        assert_eq!(classify(&fv(0.005, 1200.0, 0.5, 2.5, 0.0), &t).category, Category::Fast);
    }

    #[test]
    fn trace_stops_at_fired_rule() {
        let c = classify(&fv(4.0, 0.5, 1.0, 0.0, 0.0), &Thresholds::default());
        assert_eq!(c.fired_rule, "high_processor");
        assert_eq!(c.trace.len(), 2);
        assert!(!c.trace[0].fired && c.trace[1].fired);
        let json = c.to_json();
        assert!(json.contains("\"category\": \"HIGH_PROCESSOR\""));
    }

    #[test]
    fn rejects_non_positive_thresholds() {
        let t = Thresholds {
            disk_bw: 0.0,
            ..Thresholds::default()
        };
        assert!(t.validate().is_err());
        assert!(Thresholds::default().validate().is_ok());
    }

    fn features() -> impl Strategy<Value = FeatureVector> {
        (0.0..10.0f64, 0.0..5000.0f64, 0.0..=1.0f64, 0.0..20.0f64, 0.0..1000.0f64)
            .prop_map(|(a, b, c, d, e)| fv(a, b, c, d, e))
    }

    proptest! {
        #[test]
        fn exactly_one_rule_fires(f in features()) {
            let c = classify(&f, &Thresholds::default());
            prop_assert_eq!(c.trace.iter().filter(|s| s.fired).count(), 1);
            prop_assert_eq!(&c.trace.last().unwrap().rule, &c.fired_rule);
            prop_assert_eq!(classify(&f, &Thresholds::default()), c);
        }

        #[test]
        fn raising_streaming_threshold_never_adds_streaming(f in features(), lo in 1.0..500.0f64, d in 0.0..500.0f64) {
            let a = classify(&f, &Thresholds { streaming_net_tx: lo, ..Thresholds::default() });
            let b = classify(&f, &Thresholds { streaming_net_tx: lo + d, ..Thresholds::default() });
            if b.category == Category::Streaming {
                prop_assert_eq!(a.category, Category::Streaming);
            }
        }
    }
}
