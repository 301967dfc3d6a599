//! Open-loop arrival schedules and their partition over a finite client pool.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ZIPF_ALPHA: f64 = 1.0;
pub const DEFAULT_ZIPF_SUPPORT: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalModel {
    Deterministic,
    Poisson,
    /// Inter-arrival gaps are `c * Z` with `Z ~ Zipf(alpha)` on `1..=support_n`
    /// and `c` chosen so the expected gap is `1 / qps`.
    Zipf { alpha: f64, support_n: u64 },
}

impl ArrivalModel {
    pub fn zipf_default() -> Self {
        ArrivalModel::Zipf {
            alpha: DEFAULT_ZIPF_ALPHA,
            support_n: DEFAULT_ZIPF_SUPPORT,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ArrivalModel::Deterministic => "deterministic".into(),
            ArrivalModel::Poisson => "poisson".into(),
            ArrivalModel::Zipf { alpha, support_n } => format!("zipf({alpha},{support_n})"),
        }
    }
}

impl std::str::FromStr for ArrivalModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "deterministic" => return Ok(ArrivalModel::Deterministic),
            "poisson" => return Ok(ArrivalModel::Poisson),
            "zipf" => return Ok(ArrivalModel::zipf_default()),
            _ => {}
        }
        let inner = s
            .strip_prefix("zipf(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown arrival model `{s}`"))?;
        let mut it = inner.split(',').map(str::trim);
        let alpha = it
            .next()
            .and_then(|a| a.parse::<f64>().ok())
            .ok_or_else(|| format!("bad zipf alpha in `{s}`"))?;
        let support_n = it
            .next()
            .and_then(|a| a.parse::<u64>().ok())
            .ok_or_else(|| format!("bad zipf support in `{s}`"))?;
        Ok(ArrivalModel::Zipf { alpha, support_n })
    }
}

/// Expected value of a Zipf(alpha) variate on `1..=n`.
pub fn zipf_mean(alpha: f64, n: u64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..=n {
        let w = (k as f64).powf(-alpha);
        num += k as f64 * w;
        den += w;
    }
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    pub scheduled_times: Vec<f64>,
    pub target_qps: f64,
    pub model: ArrivalModel,
    pub seed: u64,
}

impl ArrivalSchedule {
    pub fn len(&self) -> usize {
        self.scheduled_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled_times.is_empty()
    }

    /// Requests per second over `[0, horizon)`.
    pub fn realized_rate(&self, horizon: f64) -> f64 {
        self.len() as f64 / horizon
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# model: {}", self.model.label());
        let _ = writeln!(out, "# qps: {}", self.target_qps);
        let _ = writeln!(out, "# seed: {}", self.seed);
        let _ = writeln!(out, "index scheduled_time_seconds");
        for (i, t) in self.scheduled_times.iter().enumerate() {
            // `{}` on f64 prints the shortest round-tripping form.
            let _ = writeln!(out, "{i} {t}");
        }
        out
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut model = ArrivalModel::Deterministic;
        let mut qps = None;
        let mut seed = 0u64;
        let mut times = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with("index") {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once(':') {
                    let v = v.trim();
                    match k.trim() {
                        "model" => model = v.parse().map_err(|e| perr(line_no, e))?,
                        "qps" => qps = Some(v.parse::<f64>().map_err(|e| perr(line_no, e.to_string()))?),
                        "seed" => seed = v.parse().map_err(|e: std::num::ParseIntError| perr(line_no, e.to_string()))?,
                        _ => {}
                    }
                }
                continue;
            }
            let mut cols = line.split_whitespace();
            let idx: usize = cols
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| perr(line_no, "expected request index".into()))?;
            let t: f64 = cols
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| perr(line_no, "expected scheduled time".into()))?;
            if idx != times.len() {
                return Err(perr(line_no, format!("expected index {}, found {idx}", times.len())));
            }
            if let Some(&prev) = times.last() {
                if t < prev {
                    return Err(perr(line_no, "scheduled times must be non-decreasing".into()));
                }
            }
            times.push(t);
        }
        let target_qps = match qps {
            Some(q) => q,
            None => {
                let horizon = times.last().copied().unwrap_or(0.0);
                if horizon > 0.0 { times.len() as f64 / horizon } else { 1.0 }
            }
        };
        Ok(ArrivalSchedule {
            scheduled_times: times,
            target_qps,
            model,
            seed,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// Builds the arrival times in `[0, duration)` for `qps` under `model`.
pub fn build_schedule(model: ArrivalModel, qps: f64, duration: f64, seed: u64) -> Result<ArrivalSchedule> {
    if !(qps.is_finite() && qps > 0.0) {
        return Err(Error::InvalidArgument(format!("qps must be positive, got {qps}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_gap = 1.0 / qps;
    let mut times = Vec::with_capacity((qps * duration * 1.05) as usize + 16);

    match model {
        ArrivalModel::Deterministic => {
            let n = (qps * duration * (1.0 + 1e-12)).floor() as usize;
            times.extend((0..n).map(|i| i as f64 / qps).filter(|&t| t < duration));
        }
        ArrivalModel::Poisson => {
            let mut t = 0.0;
            loop {
                let g: f64 = Exp1.sample(&mut rng);
                t += g * mean_gap;
                if t >= duration {
                    break;
                }
                times.push(t);
            }
        }
        ArrivalModel::Zipf { alpha, support_n } => {
            if !(alpha.is_finite() && alpha > 0.0) || support_n < 1 {
                return Err(Error::InvalidArgument(format!(
                    "zipf needs alpha > 0 and support_n >= 1, got ({alpha}, {support_n})"
                )));
            }
            let zipf = Zipf::new(support_n as f64, alpha)
                .map_err(|e| Error::InvalidArgument(format!("zipf: {e}")))?;
            let scale = mean_gap / zipf_mean(alpha, support_n);
            let mut t = 0.0;
            loop {
                let z: f64 = zipf.sample(&mut rng);
                t += z * scale;
                if t >= duration {
                    break;
                }
                times.push(t);
            }
        }
    }

    Ok(ArrivalSchedule {
        scheduled_times: times,
        target_qps: qps,
        model,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientAssignment {
    pub per_client: Vec<Vec<usize>>,
    pub n_clients: usize,
}

impl ClientAssignment {
    /// Client owning request `index` under round-robin assignment.
    pub fn client_of(&self, index: usize) -> usize {
        index % self.n_clients
    }
}

/// Round-robin partition: client `i` gets requests `i, i+n, i+2n, ...`.
pub fn assign_clients(schedule: &ArrivalSchedule, n_clients: usize) -> Result<ClientAssignment> {
    if n_clients < 1 {
        return Err(Error::InvalidArgument("n_clients must be at least 1".into()));
    }
    let mut per_client = vec![Vec::with_capacity(schedule.len() / n_clients + 1); n_clients];
    for i in 0..schedule.len() {
        per_client[i % n_clients].push(i);
    }
    Ok(ClientAssignment { per_client, n_clients })
}

/// Splits a seed into independent sub-seeds for derived streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng.random()
}
