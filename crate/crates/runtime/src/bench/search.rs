use serde::{Deserialize, Serialize};

use super::{BenchConfig, BenchError, BenchResult, LatencyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub min_rps: f64,
    pub max_rps: f64,
    /// Ramp multiplier.
    pub growth: f64,
    pub max_bisections: usize,
    /// Stop bisecting once `(hi − lo) / lo` falls below this.
    pub rel_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { min_rps: 0.5, max_rps: 10_000.0, growth: 2.0, max_bisections: 8, rel_tol: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub rps: f64,
    pub passed: bool,
    pub report: LatencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub max_rps: f64,
    /// Report of the probe at `max_rps`.
    pub report: LatencyReport,
    pub trail: Vec<Probe>,
}

/// Geometric ramp from `min_rps` until a probe misses the SLO, then
/// bisection between the last pass and the first miss. `probe` receives
/// `bench` with `target_rps` set to the rate under test and runs one full
/// measurement window.
pub fn max_rps_search(
    bench: &BenchConfig,
    search: &SearchConfig,
    mut probe: impl FnMut(&BenchConfig) -> BenchResult<LatencyReport>,
) -> BenchResult<SearchResult> {
    bench.validate()?;
    if !(search.min_rps > 0.0 && search.max_rps >= search.min_rps && search.growth > 1.0 && search.rel_tol > 0.0) {
        return Err(BenchError::Config(format!("invalid search config {search:?}")));
    }
    let mut trail = Vec::new();
    let mut run = |rps: f64, trail: &mut Vec<Probe>| -> BenchResult<bool> {
        let report = probe(&BenchConfig { target_rps: rps, ..bench.clone() })?;
        let passed = report.meets_slo(bench);
        log::info!("probe {rps:.3} rps: p{} = {:.1} ms, errors {} -> {}", bench.slo_percentile, report.slo_latency_ms, report.errors, if passed { "pass" } else { "miss" });
        trail.push(Probe { rps, passed, report });
        Ok(passed)
    };

    if !run(search.min_rps, &mut trail)? {
        return Err(BenchError::SloUnreachable {
            percentile: bench.slo_percentile,
            slo_ms: bench.slo_ms,
            min_rps: search.min_rps,
            trail,
        });
    }
    let mut lo = search.min_rps;
    let mut hi = None;
    while hi.is_none() && lo < search.max_rps {
        let next = (lo * search.growth).min(search.max_rps);
        if run(next, &mut trail)? {
            lo = next;
        } else {
            hi = Some(next);
        }
    }
    if let Some(mut hi) = hi {
        for _ in 0..search.max_bisections {
            if (hi - lo) / lo < search.rel_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if run(mid, &mut trail)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let report = trail.iter().rev().find(|p| p.passed && p.rps == lo).expect("lo was probed").report.clone();
    Ok(SearchResult { max_rps: lo, report, trail })
}
