use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use slmrank_core::prefixcache::throughput_gain;

use super::{
    cpu_budget_label, max_rps_search, run_load, simulate_load, BenchConfig, BenchError, BenchResult, InProcessEngine,
    SearchConfig, SearchResult, ServiceTimes,
};
use crate::cache::CacheConfig;
use crate::engine::Engine;
use crate::service::{ScoreRequest, ScoringService, ServiceConfig};

/// One configuration under comparison: a model, its prompt budget, and the
/// request stream with whatever item text that setup serves.
pub struct Setup {
    pub label: String,
    pub engine: Engine,
    pub requests: Vec<ScoreRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CompareMode {
    /// Time `samples` requests back to back, then search on a simulated
    /// clock that replays those service times.
    Measured { samples: usize },
    /// Real-time open-loop probes against the in-process service.
    Realtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub bench: BenchConfig,
    pub search: SearchConfig,
    pub mode: CompareMode,
    pub workers: usize,
    /// Untimed requests issued before measuring each setup.
    pub warmup_calls: usize,
    /// Measured mode times each sampled request this many times and keeps
    /// the median, so one stall on a shared machine is not replayed as a
    /// slow request.
    pub repeats: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            bench: BenchConfig::default(),
            search: SearchConfig::default(),
            mode: CompareMode::Measured { samples: 60 },
            workers: 1,
            warmup_calls: 10,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub params: usize,
    pub token_budget: usize,
    pub mean_prompt_tokens: f64,
    pub mean_service_ms: f64,
    pub max_rps: f64,
    pub items_per_sec: f64,
    /// Items/sec relative to the first setup.
    pub ratio: f64,
    pub search: SearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub hardware: String,
    pub mode: CompareMode,
    pub rows: Vec<CompareRow>,
    /// Prefix-sharing gain `1 + N_q/N_i` for 50 query and 150 item tokens.
    pub prefix_sharing_example: f64,
}

fn mean_prompt_tokens(setup: &Setup) -> f64 {
    let lens: Vec<usize> = setup
        .requests
        .iter()
        .flat_map(|r| r.items.iter().filter_map(|i| setup.engine.prompt_tokens(&r.query, i).ok()))
        .collect();
    if lens.is_empty() {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    }
}

fn measure_service_times(setup: &Setup, warmup: usize, samples: usize, repeats: usize) -> Vec<f64> {
    let reqs = &setup.requests;
    for r in reqs.iter().cycle().take(warmup) {
        setup.engine.score(&r.query, &r.items.iter().collect::<Vec<_>>());
    }
    reqs.iter()
        .cycle()
        .take(samples)
        .map(|r| {
            let items: Vec<_> = r.items.iter().collect();
            let mut runs: Vec<f64> = (0..repeats)
                .map(|_| {
                    let t = Instant::now();
                    setup.engine.score(&r.query, &items);
                    t.elapsed().as_secs_f64()
                })
                .collect();
            runs.sort_by(f64::total_cmp);
            runs[runs.len() / 2]
        })
        .collect()
}

/// Max sustainable rate of every setup under the same SLO, in order; ratios
/// are against the first setup.
pub fn compare_setups(setups: &[Setup], cfg: &CompareConfig) -> BenchResult<CompareReport> {
    if setups.is_empty() || setups.iter().any(|s| s.requests.is_empty()) {
        return Err(BenchError::Config("every setup needs a non-empty request stream".into()));
    }
    if cfg.workers == 0 {
        return Err(BenchError::Config("workers must be positive".into()));
    }
    let mut rows: Vec<CompareRow> = Vec::new();
    for setup in setups {
        let bench = BenchConfig { setup: setup.label.clone(), ..cfg.bench.clone() };
        let (search, mean_service_ms) = match &cfg.mode {
            CompareMode::Measured { samples } => {
                if *samples == 0 || cfg.repeats == 0 {
                    return Err(BenchError::Config("samples and repeats must be positive".into()));
                }
                let times = ServiceTimes::Samples(measure_service_times(setup, cfg.warmup_calls, *samples, cfg.repeats));
                let mean = times.mean() * 1e3;
                (max_rps_search(&bench, &cfg.search, |b| simulate_load(&times, cfg.workers, b))?, mean)
            }
            CompareMode::Realtime => {
                let svc_cfg = ServiceConfig {
                    cache: CacheConfig { capacity: 0, ..CacheConfig::default() },
                    pid_enabled: false,
                    workers: cfg.workers,
                    token_budget: setup.engine.token_budget(),
                    ..ServiceConfig::default()
                };
                let svc = Arc::new(ScoringService::new(setup.engine.clone(), svc_cfg).map_err(BenchError::Config)?);
                let engine = InProcessEngine(svc);
                let bench = BenchConfig { senders: cfg.workers, ..bench };
                let res = max_rps_search(&bench, &cfg.search, |b| run_load(&engine, b, &setup.requests))?;
                let mean = res.report.phases.total - res.report.phases.queue;
                (res, mean)
            }
        };
        let items_per_sec = search.report.items_per_sec;
        rows.push(CompareRow {
            label: setup.label.clone(),
            params: setup.engine.weights().param_count(),
            token_budget: setup.engine.token_budget(),
            mean_prompt_tokens: mean_prompt_tokens(setup),
            mean_service_ms,
            max_rps: search.max_rps,
            items_per_sec,
            ratio: f64::NAN,
            search,
        });
    }
    let base = rows[0].items_per_sec;
    for r in &mut rows {
        r.ratio = r.items_per_sec / base;
    }
    Ok(CompareReport {
        hardware: cpu_budget_label(),
        mode: cfg.mode.clone(),
        rows,
        prefix_sharing_example: throughput_gain(50, 150)?,
    })
}

pub fn render_compare_table(r: &CompareReport) -> String {
    let mut out = format!("throughput per process ({})\n", r.hardware);
    out.push_str(&format!(
        "{:<24} {:>10} {:>7} {:>8} {:>11} {:>9} {:>11} {:>7}\n",
        "setup", "params", "budget", "tokens", "service_ms", "max_rps", "items/sec", "ratio"
    ));
    for row in &r.rows {
        out.push_str(&format!(
            "{:<24} {:>10} {:>7} {:>8.1} {:>11.2} {:>9.2} {:>11.1} {:>6.2}x\n",
            row.label, row.params, row.token_budget, row.mean_prompt_tokens, row.mean_service_ms, row.max_rps, row.items_per_sec, row.ratio
        ));
    }
    out.push_str(&format!("T(50, 150) = {:.3}\n", r.prefix_sharing_example));
    out
}
