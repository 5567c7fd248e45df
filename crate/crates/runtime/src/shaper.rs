//! Token-bucket admission with bounded deferral.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaperConfig {
    /// Requests per second.
    pub rate: f64,
    pub burst: f64,
    pub max_defer_ms: f64,
}

impl ShaperConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rate > 0.0) || !(self.burst >= 1.0) || !(self.max_defer_ms >= 0.0) {
            return Err(format!("invalid shaper config {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShaperStats {
    pub admitted: u64,
    pub deferred: u64,
    /// Admissions released by the deferral cap before a token was available.
    pub capped: u64,
    pub mean_defer_ms: f64,
    pub max_defer_ms: f64,
}

/// Admissions are serialized: each admit time is at or after the previous
/// one. Tokens are debited at the admit time.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    cfg: ShaperConfig,
    tokens: f64,
    /// Time at which `tokens` was last brought up to date; also the latest admit time.
    at: f64,
    started: bool,
    admitted: u64,
    deferred: u64,
    capped: u64,
    total_defer_s: f64,
    max_defer_s: f64,
}

impl TokenBucket {
    pub fn new(cfg: ShaperConfig) -> Self {
        Self {
            tokens: cfg.burst,
            cfg,
            at: f64::NEG_INFINITY,
            started: false,
            admitted: 0,
            deferred: 0,
            capped: 0,
            total_defer_s: 0.0,
            max_defer_s: 0.0,
        }
    }

    pub fn config(&self) -> ShaperConfig {
        self.cfg
    }

    fn level_at(&self, t: f64) -> f64 {
        if !self.started {
            return self.cfg.burst;
        }
        (self.tokens + self.cfg.rate * (t - self.at)).min(self.cfg.burst)
    }

    /// Admit time for a request arriving at `arrival` (seconds). Arrivals
    /// must be passed in non-decreasing order.
    pub fn admit(&mut self, arrival: f64) -> f64 {
        let max_defer = self.cfg.max_defer_ms / 1000.0;
        let earliest = if self.started { arrival.max(self.at) } else { arrival };
        let level = self.level_at(earliest);
        let (admit, level) = if level >= 1.0 {
            (earliest, level)
        } else {
            let ready = earliest + (1.0 - level) / self.cfg.rate;
            let cap = arrival + max_defer;
            if ready > cap {
                self.capped += 1;
                let t = cap.max(earliest);
                (t, self.level_at(t))
            } else {
                (ready, 1.0)
            }
        };
        // a capped admission goes through without a token; the bucket is not driven into debt
        self.tokens = (level - 1.0).max(0.0);
        self.at = admit;
        self.started = true;
        self.admitted += 1;
        let wait = admit - arrival;
        if wait > 0.0 {
            self.deferred += 1;
            self.total_defer_s += wait;
            self.max_defer_s = self.max_defer_s.max(wait);
        }
        admit
    }

    pub fn stats(&self) -> ShaperStats {
        ShaperStats {
            admitted: self.admitted,
            deferred: self.deferred,
            capped: self.capped,
            mean_defer_ms: if self.deferred == 0 { 0.0 } else { 1000.0 * self.total_defer_s / self.deferred as f64 },
            max_defer_ms: 1000.0 * self.max_defer_s,
        }
    }
}

/// Admit times for a whole arrival sequence (sorted ascending).
pub fn shape_all(cfg: ShaperConfig, arrivals: &[f64]) -> (Vec<f64>, ShaperStats) {
    let mut b = TokenBucket::new(cfg);
    let out = arrivals.iter().map(|&t| b.admit(t)).collect();
    (out, b.stats())
}

/// Engine-queue wait of each request when `admits` (ascending) feed
/// `servers` FIFO servers with a fixed service time.
pub fn queue_delays(admits: &[f64], service_s: f64, servers: usize) -> Vec<f64> {
    assert!(servers > 0, "need at least one server");
    let mut free = vec![f64::NEG_INFINITY; servers];
    admits
        .iter()
        .map(|&t| {
            let (k, &f) = free.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("servers > 0");
            let start = t.max(f);
            free[k] = start + service_s;
            start - t
        })
        .collect()
}
