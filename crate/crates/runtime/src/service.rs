//! The scoring service: shaping, depth control, caching and model scoring
//! around an [`Engine`].

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use slmrank_core::corpus::{JobItem, Query};
use slmrank_core::tokenizer::fnv1a64;

use crate::cache::{CacheConfig, CacheKey, CacheStats, ScoreCache};
use crate::engine::Engine;
use crate::pid::{LatencyWindow, PidConfig, PidState};
use crate::shaper::{ShaperConfig, ShaperStats, TokenBucket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    pub cache: CacheConfig,
    pub pid: PidConfig,
    /// With the controller off the depth stays at `pid.init_depth`.
    pub pid_enabled: bool,
    /// `None` admits every request on arrival.
    pub shaper: Option<ShaperConfig>,
    pub workers: usize,
    pub token_budget: usize,
    /// Fraction of cache hits re-scored by the model and compared.
    pub shadow_rate: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            cache: CacheConfig::default(),
            pid: PidConfig::default(),
            pid_enabled: true,
            shaper: None,
            workers: 1,
            token_budget: 96,
            shadow_rate: 0.0,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.pid.validate()?;
        if let Some(s) = &self.shaper {
            s.validate()?;
        }
        if self.workers == 0 {
            return Err("workers must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.shadow_rate) {
            return Err(format!("shadow_rate {} outside [0, 1]", self.shadow_rate));
        }
        if !(self.cache.ttl_s >= 0.0) {
            return Err("cache ttl must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default)]
    pub request_id: Option<String>,
    pub query: Query,
    pub items: Vec<JobItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Cache,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub p_yes: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub queue: f64,
    pub tokenize: f64,
    pub prefill: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub request_id: String,
    pub depth_used: usize,
    /// Descending `p_yes`.
    pub scores: Vec<ItemScore>,
    /// Candidates beyond the scoring depth.
    #[serde(default)]
    pub unscored: Vec<String>,
    #[serde(default)]
    pub errors: Vec<ItemError>,
    pub timings_ms: Timings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheMetrics {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub entries: usize,
    pub shadow_checked: u64,
    pub shadow_mismatches: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PidMetrics {
    pub depth: usize,
    pub p95_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineMetrics {
    pub items_per_sec: f64,
    pub flops_saved_pct: f64,
    pub requests: u64,
    pub items_scored: u64,
    pub items_model: u64,
    pub items_cache: u64,
    pub items_unscored: u64,
    pub items_failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cache: CacheMetrics,
    pub pid: PidMetrics,
    pub shaper: ShaperStats,
    pub engine: EngineMetrics,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    items_model: AtomicU64,
    items_cache: AtomicU64,
    items_unscored: AtomicU64,
    items_failed: AtomicU64,
    flops_shared: AtomicU64,
    flops_independent: AtomicU64,
    shadow_checked: AtomicU64,
    shadow_mismatches: AtomicU64,
    next_id: AtomicU64,
}

/// Request handling state. Times passed to `*_at` methods are seconds on the
/// caller's clock; [`ScoringService::now`] is the service's wall clock.
pub struct ScoringService {
    engine: Engine,
    cfg: ServiceConfig,
    cache: Mutex<ScoreCache>,
    pid: Mutex<PidState>,
    depth: AtomicUsize,
    shaper: Mutex<Option<TokenBucket>>,
    window: Mutex<LatencyWindow>,
    counters: Counters,
    origin: Instant,
}

impl ScoringService {
    pub fn new(engine: Engine, cfg: ServiceConfig) -> Result<Self, String> {
        cfg.validate()?;
        let pid = PidState::new(cfg.pid);
        Ok(Self {
            depth: AtomicUsize::new(pid.depth),
            pid: Mutex::new(pid),
            cache: Mutex::new(ScoreCache::new(cfg.cache)),
            shaper: Mutex::new(cfg.shaper.map(TokenBucket::new)),
            window: Mutex::new(LatencyWindow::new(cfg.pid.window_s)),
            engine,
            cfg,
            counters: Counters::default(),
            origin: Instant::now(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    pub fn depth(&self) -> usize {
        self.depth.load(Ordering::Acquire)
    }

    /// Admit time for an arrival at `arrival`.
    pub fn admit_at(&self, arrival: f64) -> f64 {
        match self.shaper.lock().as_mut() {
            Some(b) => b.admit(arrival),
            None => arrival,
        }
    }

    fn next_request_id(&self) -> String {
        format!("req-{}", self.counters.next_id.fetch_add(1, Ordering::Relaxed))
    }

    fn shadow_selected(&self, request_id: &str, item_id: &str) -> bool {
        if self.cfg.shadow_rate <= 0.0 {
            return false;
        }
        let h = fnv1a64(format!("{request_id}\u{0}{item_id}").as_bytes());
        (h % 1_000_000) as f64 / 1e6 < self.cfg.shadow_rate
    }

    /// Depth truncation, cache lookup, model scoring of the misses, cache
    /// fill and ranking, all stamped at time `now`.
    pub fn process_at(&self, req: &ScoreRequest, now: f64, queue_ms: f64) -> ScoreResponse {
        let t0 = Instant::now();
        let request_id = req.request_id.clone().unwrap_or_else(|| self.next_request_id());
        let depth = self.depth();
        let n = req.items.len().min(depth);
        let (head, tail) = req.items.split_at(n);
        let version = self.engine.model_version();

        let mut scores = Vec::with_capacity(n);
        let mut misses: Vec<(&JobItem, CacheKey)> = Vec::new();
        {
            let mut cache = self.cache.lock();
            for item in head {
                let key = CacheKey::new(version, &req.query.text, &item.id);
                match cache.lookup(&key, now) {
                    Some(p) => scores.push(ItemScore { item_id: item.id.clone(), p_yes: p, source: Source::Cache }),
                    None => misses.push((item, key)),
                }
            }
        }
        let hits = scores.len();

        for s in &scores {
            if self.shadow_selected(&request_id, &s.item_id) {
                let item = head.iter().find(|i| i.id == s.item_id).expect("hit comes from the request");
                self.counters.shadow_checked.fetch_add(1, Ordering::Relaxed);
                if self.engine.score_one(&req.query, item) != Ok(s.p_yes) {
                    self.counters.shadow_mismatches.fetch_add(1, Ordering::Relaxed);
                }
            }
        }

        let mut errors = Vec::new();
        let mut timings = Timings { queue: queue_ms, ..Timings::default() };
        if !misses.is_empty() {
            let items: Vec<&JobItem> = misses.iter().map(|(i, _)| *i).collect();
            let out = self.engine.score(&req.query, &items);
            timings.tokenize = out.tokenize_ms;
            timings.prefill = out.prefill_ms;
            if let Some(w) = out.work {
                self.counters.flops_shared.fetch_add(w.shared_flops, Ordering::Relaxed);
                self.counters.flops_independent.fetch_add(w.independent_flops, Ordering::Relaxed);
            }
            let mut cache = self.cache.lock();
            for ((item, key), r) in misses.into_iter().zip(out.results) {
                match r {
                    Ok(p) => {
                        cache.insert(key, p, now);
                        scores.push(ItemScore { item_id: item.id.clone(), p_yes: p, source: Source::Model });
                    }
                    Err(error) => errors.push(ItemError { item_id: item.id.clone(), error }),
                }
            }
        }
        scores.sort_by(|a, b| b.p_yes.total_cmp(&a.p_yes).then_with(|| a.item_id.cmp(&b.item_id)));

        let c = &self.counters;
        c.requests.fetch_add(1, Ordering::Relaxed);
        c.items_cache.fetch_add(hits as u64, Ordering::Relaxed);
        c.items_model.fetch_add((scores.len() - hits) as u64, Ordering::Relaxed);
        c.items_failed.fetch_add(errors.len() as u64, Ordering::Relaxed);
        c.items_unscored.fetch_add(tail.len() as u64, Ordering::Relaxed);

        timings.total = queue_ms + t0.elapsed().as_secs_f64() * 1e3;
        ScoreResponse {
            request_id,
            depth_used: depth,
            scores,
            unscored: tail.iter().map(|i| i.id.clone()).collect(),
            errors,
            timings_ms: timings,
        }
    }

    /// Feed one end-to-end latency into the controller's window.
    pub fn record_latency_at(&self, finished: f64, latency_ms: f64) {
        self.window.lock().record(finished, latency_ms);
    }

    /// One controller step at time `now`. An empty window leaves the depth as is.
    pub fn pid_tick_at(&self, now: f64, dt: f64) -> usize {
        if !self.cfg.pid_enabled {
            return self.depth();
        }
        let Some(p95) = self.window.lock().p95(now) else {
            return self.depth();
        };
        let d = self.pid.lock().update(p95, dt);
        self.depth.store(d, Ordering::Release);
        d
    }

    /// Blocking real-time handling: shaper wait, processing, latency record.
    pub fn handle(&self, req: &ScoreRequest) -> ScoreResponse {
        let arrival = self.now();
        let admit = self.admit_at(arrival);
        let wait = admit - self.now();
        if wait > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
        self.finish(req, arrival)
    }

    /// Process a request that arrived at `arrival` (service clock) and has
    /// already cleared the shaper and worker queue.
    pub fn finish(&self, req: &ScoreRequest, arrival: f64) -> ScoreResponse {
        let start = self.now();
        let resp = self.process_at(req, start, (start - arrival) * 1e3);
        self.record_latency_at(self.now(), resp.timings_ms.total);
        resp
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics_at(self.now())
    }

    pub fn metrics_at(&self, now: f64) -> Metrics {
        let c = &self.counters;
        let CacheStats { hits, misses, hit_rate } = self.cache.lock().stats();
        let entries = self.cache.lock().len();
        let model = c.items_model.load(Ordering::Relaxed);
        let cached = c.items_cache.load(Ordering::Relaxed);
        let shared = c.flops_shared.load(Ordering::Relaxed);
        let indep = c.flops_independent.load(Ordering::Relaxed);
        Metrics {
            cache: CacheMetrics {
                hits,
                misses,
                hit_rate,
                entries,
                shadow_checked: c.shadow_checked.load(Ordering::Relaxed),
                shadow_mismatches: c.shadow_mismatches.load(Ordering::Relaxed),
            },
            pid: PidMetrics { depth: self.depth(), p95_ms: self.window.lock().p95(now) },
            shaper: self.shaper.lock().as_ref().map(TokenBucket::stats).unwrap_or_default(),
            engine: EngineMetrics {
                items_per_sec: if now > 0.0 { (model + cached) as f64 / now } else { 0.0 },
                flops_saved_pct: if indep == 0 { 0.0 } else { 100.0 * (1.0 - shared as f64 / indep as f64) },
                requests: c.requests.load(Ordering::Relaxed),
                items_scored: model + cached,
                items_model: model,
                items_cache: cached,
                items_unscored: c.items_unscored.load(Ordering::Relaxed),
                items_failed: c.items_failed.load(Ordering::Relaxed),
            },
        }
    }
}
