//! Load generation and capacity measurement.

mod compare;
mod load;
mod search;

pub use compare::{compare_setups, render_compare_table, CompareConfig, CompareMode, CompareReport, CompareRow, Setup};
pub use load::{
    run_load, simulate_load, BenchEngine, CallResult, FixedDelayEngine, HttpEngine, InProcessEngine, ServiceTimes,
};
pub use search::{max_rps_search, Probe, SearchConfig, SearchResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::service::Timings;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("SLO of p{percentile} <= {slo_ms} ms not met even at the minimum rate of {min_rps} rps")]
    SloUnreachable { percentile: f64, slo_ms: f64, min_rps: f64, trail: Vec<Probe> },
    #[error(transparent)]
    Core(#[from] slmrank_core::Error),
    #[error("{0}")]
    Other(String),
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

/// Nearest-rank percentile: the smallest sample with at least `p` percent of
/// the samples at or below it. `None` for an empty slice.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Some(nearest_rank(&v, p))
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Sorted arrival times in `[0, duration_s)` of a Poisson process.
pub fn poisson_arrivals(seed: u64, rps: f64, duration_s: f64) -> Vec<f64> {
    assert!(rps > 0.0, "rate must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rps).expect("positive rate");
    let mut out = Vec::with_capacity((rps * duration_s * 1.1) as usize + 8);
    let mut t = gap.sample(&mut rng);
    while t < duration_s {
        out.push(t);
        t += gap.sample(&mut rng);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub target_rps: f64,
    /// Measurement window after warm-up.
    pub duration_s: f64,
    pub prompts_per_request: usize,
    pub slo_ms: f64,
    pub slo_percentile: f64,
    pub seed: u64,
    pub setup: String,
    /// Warm-up lasts `warmup_s` or `warmup_requests` arrivals, whichever
    /// is longer; its requests are issued and discarded.
    pub warmup_s: f64,
    pub warmup_requests: usize,
    /// Concurrent request senders (real-time mode).
    pub senders: usize,
    /// Requests still queued this long after the last arrival are abandoned
    /// and counted as errors.
    pub drain_timeout_s: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            target_rps: 10.0,
            duration_s: 30.0,
            prompts_per_request: 10,
            slo_ms: 500.0,
            slo_percentile: 95.0,
            seed: 0,
            setup: "default".into(),
            warmup_s: 5.0,
            warmup_requests: 200,
            senders: 1,
            drain_timeout_s: 10.0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> BenchResult<()> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        if !(self.target_rps > 0.0) {
            return bad("target_rps must be positive");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        if self.prompts_per_request == 0 {
            return bad("prompts_per_request must be positive");
        }
        if !(self.slo_ms > 0.0) {
            return bad("slo_ms must be positive");
        }
        if !(self.slo_percentile > 0.0 && self.slo_percentile < 100.0) {
            return bad("slo_percentile must lie in (0, 100)");
        }
        if self.senders == 0 {
            return bad("senders must be positive");
        }
        if !(self.warmup_s >= 0.0) || !(self.drain_timeout_s >= 0.0) {
            return bad("warm-up and drain timeout must be non-negative");
        }
        Ok(())
    }

    /// Length of the warm-up prefix at the configured rate.
    pub fn warmup_len_s(&self) -> f64 {
        self.warmup_s.max(self.warmup_requests as f64 / self.target_rps)
    }
}

/// The measurement host, reported as the desk stand-in for one accelerator.
pub fn cpu_budget_label() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("1 process, {cores} CPU core(s)")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub setup: String,
    pub hardware: String,
    pub offered_rps: f64,
    pub duration_s: f64,
    pub requests: usize,
    pub errors: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// The configured SLO percentile of the measured latencies.
    pub slo_latency_ms: f64,
    pub achieved_rps: f64,
    pub items: u64,
    pub items_per_sec: f64,
    /// Mean engine-side phases of successful requests.
    pub phases: Timings,
}

impl LatencyReport {
    pub fn meets_slo(&self, cfg: &BenchConfig) -> bool {
        self.requests > 0 && self.errors == 0 && self.slo_latency_ms <= cfg.slo_ms
    }
}

/// One measured request.
#[derive(Debug, Clone)]
pub struct Sample {
    pub latency_ms: f64,
    pub result: Result<CallResult, String>,
}

/// Summarize measured samples. Errors count toward the latency percentiles
/// with the latency observed when they failed.
pub fn summarize(cfg: &BenchConfig, samples: &[Sample]) -> LatencyReport {
    let mut lat: Vec<f64> = samples.iter().map(|s| s.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let pct = |p| if lat.is_empty() { 0.0 } else { nearest_rank(&lat, p) };
    let ok: Vec<&CallResult> = samples.iter().filter_map(|s| s.result.as_ref().ok()).collect();
    let items: u64 = ok.iter().map(|r| r.items as u64).sum();
    let mut phases = Timings::default();
    if !ok.is_empty() {
        let n = ok.len() as f64;
        phases.queue = ok.iter().map(|r| r.phases.queue).sum::<f64>() / n;
        phases.tokenize = ok.iter().map(|r| r.phases.tokenize).sum::<f64>() / n;
        phases.prefill = ok.iter().map(|r| r.phases.prefill).sum::<f64>() / n;
        phases.total = ok.iter().map(|r| r.phases.total).sum::<f64>() / n;
    }
    LatencyReport {
        setup: cfg.setup.clone(),
        hardware: cpu_budget_label(),
        offered_rps: cfg.target_rps,
        duration_s: cfg.duration_s,
        requests: samples.len(),
        errors: samples.len() - ok.len(),
        p50_ms: pct(50.0),
        p90_ms: pct(90.0),
        p95_ms: pct(95.0),
        p99_ms: pct(99.0),
        slo_latency_ms: pct(cfg.slo_percentile),
        achieved_rps: ok.len() as f64 / cfg.duration_s,
        items,
        items_per_sec: items as f64 / cfg.duration_s,
        phases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_small_cases() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 50.0), Some(3.0));
        assert_eq!(percentile(&v, 95.0), Some(5.0));
        assert_eq!(percentile(&v, 20.0), Some(1.0));
        assert_eq!(percentile(&v, 21.0), Some(2.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn zero_duration_has_no_arrivals() {
        assert!(poisson_arrivals(1, 50.0, 0.0).is_empty());
    }
}
