//! Request streams for benchmarks and the cache and shaping experiments.
//! Everything here is a pure function of its seed.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};
use slmrank_core::corpus::{Corpus, JobItem, Query};

use crate::bench::poisson_arrivals;
use crate::service::ScoreRequest;

/// Candidate item ids per query id, in retrieval order.
pub fn candidate_lists(corpus: &Corpus) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in &corpus.pairs {
        out.entry(p.query_id.clone()).or_default().push(p.item_id.clone());
    }
    out
}

fn request(corpus_items: &HashMap<&str, &JobItem>, query: &Query, ids: &[String], request_id: String) -> ScoreRequest {
    ScoreRequest {
        request_id: Some(request_id),
        query: query.clone(),
        items: ids.iter().map(|id| (*corpus_items[id.as_str()]).clone()).collect(),
    }
}

/// `n` requests, each a uniformly chosen query with `per_request` of its
/// candidates drawn without replacement.
pub fn corpus_requests(corpus: &Corpus, n: usize, per_request: usize, seed: u64) -> Vec<ScoreRequest> {
    let lists = candidate_lists(corpus);
    let queries: Vec<&Query> = corpus.queries.iter().filter(|q| lists.get(&q.id).is_some_and(|l| !l.is_empty())).collect();
    assert!(!queries.is_empty(), "corpus has no graded pairs");
    let items = corpus.item_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let q = queries[rng.random_range(0..queries.len())];
            let cands = &lists[&q.id];
            let k = per_request.min(cands.len());
            let mut idx = sample(&mut rng, cands.len(), k).into_vec();
            idx.sort_unstable();
            let ids: Vec<String> = idx.into_iter().map(|j| cands[j].clone()).collect();
            request(&items, q, &ids, format!("r{seed}-{i}"))
        })
        .collect()
}

/// Same requests with every item description rewritten by `f`; each
/// distinct item is rewritten once.
pub fn map_descriptions<E>(
    requests: &[ScoreRequest],
    mut f: impl FnMut(&str) -> Result<String, E>,
) -> Result<Vec<ScoreRequest>, E> {
    let mut memo: HashMap<String, String> = HashMap::new();
    let mut out = Vec::with_capacity(requests.len());
    for r in requests {
        let mut r = r.clone();
        for item in &mut r.items {
            if !memo.contains_key(&item.id) {
                memo.insert(item.id.clone(), f(&item.description)?);
            }
            item.description = memo[&item.id].clone();
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZipfWorkloadConfig {
    pub seed: u64,
    pub exponent: f64,
    /// Queries are ranked by corpus order; rank 1 is the most popular.
    pub n_queries: usize,
    pub rps: f64,
    pub duration_s: f64,
    pub page_size: usize,
    /// Probability that a request asks for the first page of candidates
    /// rather than the second.
    pub first_page_prob: f64,
}

impl Default for ZipfWorkloadConfig {
    fn default() -> Self {
        Self { seed: 11, exponent: 1.1, n_queries: 1000, rps: 2.0, duration_s: 3600.0, page_size: 10, first_page_prob: 0.8 }
    }
}

/// Timed requests with Zipf-distributed query popularity.
#[derive(Debug, Clone)]
pub struct TimedWorkload {
    pub arrivals: Vec<f64>,
    pub requests: Vec<ScoreRequest>,
}

/// Build the stream over a corpus holding at least `n_queries` queries with
/// `2 × page_size` candidates each.
pub fn zipf_workload(corpus: &Corpus, cfg: &ZipfWorkloadConfig) -> Result<TimedWorkload, String> {
    let lists = candidate_lists(corpus);
    let queries: Vec<&Query> = corpus.queries.iter().filter(|q| lists.contains_key(&q.id)).take(cfg.n_queries).collect();
    if queries.len() < cfg.n_queries {
        return Err(format!("corpus has {} queries with candidates, need {}", queries.len(), cfg.n_queries));
    }
    let zipf = Zipf::new(cfg.n_queries as f64, cfg.exponent).map_err(|e| e.to_string())?;
    let items = corpus.item_index();
    let arrivals = poisson_arrivals(cfg.seed, cfg.rps, cfg.duration_s);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let requests = (0..arrivals.len())
        .map(|i| {
            let rank = zipf.sample(&mut rng) as usize;
            let q = queries[rank.clamp(1, queries.len()) - 1];
            let cands = &lists[&q.id];
            let page = if rng.random_bool(cfg.first_page_prob) { 0 } else { 1 };
            let start = (page * cfg.page_size).min(cands.len().saturating_sub(cfg.page_size));
            let end = (start + cfg.page_size).min(cands.len());
            request(&items, q, &cands[start..end], format!("z{}-{i}", cfg.seed))
        })
        .collect();
    Ok(TimedWorkload { arrivals, requests })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffConfig {
    pub seed: u64,
    /// Poisson rate while on.
    pub on_rps: f64,
    pub on_s: f64,
    pub off_s: f64,
    pub duration_s: f64,
}

impl Default for OnOffConfig {
    /// One second at 160 rps, one second idle, for two minutes: mean load
    /// 80 rps, peaks well above a 100 rps engine.
    fn default() -> Self {
        Self { seed: 3, on_rps: 160.0, on_s: 1.0, off_s: 1.0, duration_s: 120.0 }
    }
}

impl OnOffConfig {
    pub fn mean_rps(&self) -> f64 {
        self.on_rps * self.on_s / (self.on_s + self.off_s)
    }
}

/// Poisson arrivals during alternating on windows, none during off windows.
pub fn on_off_arrivals(cfg: &OnOffConfig) -> Vec<f64> {
    let period = cfg.on_s + cfg.off_s;
    let mut out = Vec::new();
    let mut k = 0u64;
    let mut t0 = 0.0;
    while t0 < cfg.duration_s {
        let len = cfg.on_s.min(cfg.duration_s - t0);
        out.extend(poisson_arrivals(cfg.seed.wrapping_add(k), cfg.on_rps, len).into_iter().map(|t| t0 + t));
        k += 1;
        t0 = k as f64 * period;
    }
    out
}

/// Coefficient of variation of event counts in consecutive `bin_s` bins
/// covering `[0, duration_s)`.
pub fn count_cv(times: &[f64], bin_s: f64, duration_s: f64) -> f64 {
    let bins = (duration_s / bin_s).ceil().max(1.0) as usize;
    let mut counts = vec![0.0f64; bins];
    for &t in times {
        let b = ((t / bin_s) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let mean = counts.iter().sum::<f64>() / bins as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / bins as f64;
    var.sqrt() / mean
}
