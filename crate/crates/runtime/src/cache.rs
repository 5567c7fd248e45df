//! In-process score cache with write-time TTL and LRU eviction.

use std::num::NonZeroUsize;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use slmrank_core::tokenizer::{fnv1a64, words};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model_version: String,
    pub query_hash: u64,
    pub item_id: String,
}

impl CacheKey {
    pub fn new(model_version: &str, query_text: &str, item_id: &str) -> Self {
        Self { model_version: model_version.to_string(), query_hash: query_hash(query_text), item_id: item_id.to_string() }
    }
}

/// FNV-1a-64 of the lowercased query words joined by single spaces.
pub fn query_hash(text: &str) -> u64 {
    let norm = words(text).into_iter().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ");
    fnv1a64(norm.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity: usize,
    pub ttl_s: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { capacity: 1_000_000, ttl_s: 900.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    p_yes: f64,
    inserted_at: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

/// Times are seconds on whatever clock the caller uses; they only need to be
/// consistent between inserts and lookups. Capacity 0 disables caching.
#[derive(Debug)]
pub struct ScoreCache {
    map: Option<LruCache<CacheKey, Entry>>,
    ttl_s: f64,
    hits: u64,
    misses: u64,
}

impl ScoreCache {
    pub fn new(cfg: CacheConfig) -> Self {
        Self { map: NonZeroUsize::new(cfg.capacity).map(LruCache::new), ttl_s: cfg.ttl_s, hits: 0, misses: 0 }
    }

    pub fn len(&self) -> usize {
        self.map.as_ref().map_or(0, LruCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.map.as_ref().map_or(0, |m| m.cap().get())
    }

    /// A hit moves the entry to the front of the LRU order; its TTL still
    /// counts from the original insert. Expired entries are dropped.
    pub fn lookup(&mut self, key: &CacheKey, now: f64) -> Option<f64> {
        let ttl = self.ttl_s;
        let found = match self.map.as_mut() {
            None => None,
            Some(map) => match map.get(key) {
                Some(e) if now - e.inserted_at <= ttl => Some(e.p_yes),
                Some(_) => {
                    map.pop(key);
                    None
                }
                None => None,
            },
        };
        match found {
            Some(_) => self.hits += 1,
            None => self.misses += 1,
        }
        found
    }

    pub fn insert(&mut self, key: CacheKey, p_yes: f64, now: f64) {
        if let Some(map) = self.map.as_mut() {
            map.put(key, Entry { p_yes, inserted_at: now });
        }
    }

    pub fn stats(&self) -> CacheStats {
        let total = self.hits + self.misses;
        CacheStats {
            hits: self.hits,
            misses: self.misses,
            hit_rate: if total == 0 { 0.0 } else { self.hits as f64 / total as f64 },
        }
    }
}
