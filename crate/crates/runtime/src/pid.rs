//! Scoring-depth controller driven by observed p95 latency.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub target_p95_ms: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub d_min: usize,
    pub d_max: usize,
    pub init_depth: usize,
    /// Bound on |integral|.
    pub integral_clamp: f64,
    /// Controller period.
    pub interval_s: f64,
    /// Sliding window for the p95 measurement.
    pub window_s: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            target_p95_ms: 500.0,
            kp: 100.0,
            ki: 10.0,
            kd: 20.0,
            d_min: 50,
            d_max: 1000,
            init_depth: 250,
            integral_clamp: 50.0,
            interval_s: 1.0,
            window_s: 10.0,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_min == 0 || self.d_min > self.d_max {
            return Err(format!("depth bounds [{}, {}] invalid", self.d_min, self.d_max));
        }
        if !(self.d_min..=self.d_max).contains(&self.init_depth) {
            return Err(format!("initial depth {} outside bounds", self.init_depth));
        }
        if !(self.target_p95_ms > 0.0) || !(self.interval_s > 0.0) || !(self.window_s > 0.0) {
            return Err("target, interval and window must be positive".into());
        }
        if !(self.integral_clamp >= 0.0) {
            return Err("integral clamp must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub cfg: PidConfig,
    pub depth: usize,
    pub integral: f64,
    pub prev_error: f64,
}

impl PidState {
    pub fn new(cfg: PidConfig) -> Self {
        Self { depth: cfg.init_depth.clamp(cfg.d_min, cfg.d_max), cfg, integral: 0.0, prev_error: 0.0 }
    }

    /// One controller step. Returns the new depth.
    ///
    /// The integral is frozen when the depth already sits on a bound and the
    /// error pushes further into it.
    pub fn update(&mut self, observed_p95_ms: f64, dt: f64) -> usize {
        assert!(dt > 0.0, "dt must be positive");
        let c = &self.cfg;
        let e = (c.target_p95_ms - observed_p95_ms) / c.target_p95_ms;
        let saturated = (self.depth >= c.d_max && e > 0.0) || (self.depth <= c.d_min && e < 0.0);
        if !saturated {
            self.integral = (self.integral + e * dt).clamp(-c.integral_clamp, c.integral_clamp);
        }
        let u = self.depth as f64 + c.kp * e + c.ki * self.integral + c.kd * (e - self.prev_error) / dt;
        self.prev_error = e;
        self.depth = (u.round().max(0.0) as usize).clamp(c.d_min, c.d_max);
        self.depth
    }
}

/// Latency samples over a trailing time window.
#[derive(Debug, Clone)]
pub struct LatencyWindow {
    window_s: f64,
    samples: VecDeque<(f64, f64)>,
}

impl LatencyWindow {
    pub fn new(window_s: f64) -> Self {
        Self { window_s, samples: VecDeque::new() }
    }

    pub fn record(&mut self, at: f64, latency_ms: f64) {
        self.samples.push_back((at, latency_ms));
    }

    fn evict(&mut self, now: f64) {
        while self.samples.front().is_some_and(|&(t, _)| t < now - self.window_s) {
            self.samples.pop_front();
        }
    }

    /// Nearest-rank p95 of the samples in `(now − window, now]`, or `None`
    /// when the window is empty.
    pub fn p95(&mut self, now: f64) -> Option<f64> {
        self.evict(now);
        let v: Vec<f64> = self.samples.iter().map(|s| s.1).collect();
        crate::bench::percentile(&v, 95.0)
    }
}
