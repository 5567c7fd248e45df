use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{poisson_arrivals, summarize, BenchConfig, BenchError, BenchResult, LatencyReport, Sample};
use crate::service::{ScoreRequest, ScoreResponse, ScoringService, Timings};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallResult {
    /// Items that came back with a score.
    pub items: usize,
    pub phases: Timings,
}

impl CallResult {
    pub fn from_response(r: &ScoreResponse) -> Self {
        Self { items: r.scores.len(), phases: r.timings_ms }
    }
}

/// Something that can serve a scoring request synchronously.
pub trait BenchEngine: Sync {
    fn call(&self, req: &ScoreRequest) -> Result<CallResult, String>;
}

pub struct InProcessEngine(pub Arc<ScoringService>);

impl BenchEngine for InProcessEngine {
    fn call(&self, req: &ScoreRequest) -> Result<CallResult, String> {
        Ok(CallResult::from_response(&self.0.handle(req)))
    }
}

pub struct HttpEngine {
    agent: ureq::Agent,
    url: String,
}

impl HttpEngine {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { agent, url: format!("{}/v1/score", base.trim_end_matches('/')) }
    }
}

impl BenchEngine for HttpEngine {
    fn call(&self, req: &ScoreRequest) -> Result<CallResult, String> {
        let mut resp = self.agent.post(&self.url).send_json(req).map_err(|e| e.to_string())?;
        let body: ScoreResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(CallResult::from_response(&body))
    }
}

/// Sleeps a fixed time per request and reports every item scored.
pub struct FixedDelayEngine {
    pub delay: Duration,
}

impl BenchEngine for FixedDelayEngine {
    fn call(&self, req: &ScoreRequest) -> Result<CallResult, String> {
        std::thread::sleep(self.delay);
        let ms = self.delay.as_secs_f64() * 1e3;
        Ok(CallResult { items: req.items.len(), phases: Timings { prefill: ms, total: ms, ..Timings::default() } })
    }
}

/// Open-loop load in real time. Request `i` is `requests[i % len]` and is
/// issued at its Poisson arrival time regardless of earlier responses;
/// latency runs from that scheduled time to completion.
pub fn run_load(engine: &dyn BenchEngine, cfg: &BenchConfig, requests: &[ScoreRequest]) -> BenchResult<LatencyReport> {
    cfg.validate()?;
    if requests.is_empty() {
        return Err(BenchError::Config("no requests to send".into()));
    }
    let warm = cfg.warmup_len_s();
    let arrivals = poisson_arrivals(cfg.seed, cfg.target_rps, warm + cfg.duration_s);
    let start = Instant::now() + Duration::from_millis(5);
    let deadline = start + Duration::from_secs_f64(warm + cfg.duration_s + cfg.drain_timeout_s);
    let (tx, rx) = crossbeam_channel::unbounded::<(usize, Instant)>();

    let mut samples: Vec<(usize, Sample)> = std::thread::scope(|s| {
        let arrivals = &arrivals;
        s.spawn(move || {
            for (i, &t) in arrivals.iter().enumerate() {
                let at = start + Duration::from_secs_f64(t);
                let now = Instant::now();
                if at > now {
                    std::thread::sleep(at - now);
                }
                if tx.send((i, at)).is_err() {
                    break;
                }
            }
        });
        let senders: Vec<_> = (0..cfg.senders)
            .map(|_| {
                let rx = rx.clone();
                s.spawn(move || {
                    let mut out = Vec::new();
                    for (i, at) in rx.iter() {
                        let result = if Instant::now() > deadline {
                            Err("abandoned after drain timeout".to_string())
                        } else {
                            engine.call(&requests[i % requests.len()])
                        };
                        let latency_ms = Instant::now().saturating_duration_since(at).as_secs_f64() * 1e3;
                        out.push((i, Sample { latency_ms, result }));
                    }
                    out
                })
            })
            .collect();
        senders.into_iter().flat_map(|h| h.join().expect("sender thread")).collect()
    });
    samples.sort_by_key(|(i, _)| *i);
    let measured: Vec<Sample> = samples.into_iter().filter(|(i, _)| arrivals[*i] >= warm).map(|(_, s)| s).collect();
    Ok(summarize(cfg, &measured))
}

/// Per-request service times for the simulated clock.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceTimes {
    Fixed(f64),
    /// Drawn uniformly with replacement from measured seconds.
    Samples(Vec<f64>),
}

impl ServiceTimes {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Fixed(s) => *s,
            Self::Samples(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// Open-loop load against `servers` FIFO servers on a simulated clock.
/// Deterministic for a given config and service-time model.
pub fn simulate_load(times: &ServiceTimes, servers: usize, cfg: &BenchConfig) -> BenchResult<LatencyReport> {
    cfg.validate()?;
    if servers == 0 {
        return Err(BenchError::Config("servers must be positive".into()));
    }
    match times {
        ServiceTimes::Fixed(s) if !(*s >= 0.0) => return Err(BenchError::Config("negative service time".into())),
        ServiceTimes::Samples(v) if v.is_empty() || v.iter().any(|s| !(*s >= 0.0)) => {
            return Err(BenchError::Config("service-time samples must be non-empty and non-negative".into()))
        }
        _ => {}
    }
    let warm = cfg.warmup_len_s();
    let arrivals = poisson_arrivals(cfg.seed, cfg.target_rps, warm + cfg.duration_s);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED);
    let mut free = vec![0.0f64; servers];
    let mut samples = Vec::new();
    for &t in &arrivals {
        let s = match times {
            ServiceTimes::Fixed(s) => *s,
            ServiceTimes::Samples(v) => v[rng.random_range(0..v.len())],
        };
        let (k, &f) = free.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("servers > 0");
        let begin = t.max(f);
        free[k] = begin + s;
        if t >= warm {
            let queue = (begin - t) * 1e3;
            let total = (begin + s - t) * 1e3;
            samples.push(Sample {
                latency_ms: total,
                result: Ok(CallResult {
                    items: cfg.prompts_per_request,
                    phases: Timings { queue, prefill: s * 1e3, total, ..Timings::default() },
                }),
            });
        }
    }
    Ok(summarize(cfg, &samples))
}
