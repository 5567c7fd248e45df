#![allow(dead_code)]

use slmrank_core::corpus::Corpus;
use slmrank_core::model::{init_weights, ModelConfig, Weights};
use slmrank_runtime::engine::Engine;

pub fn tiny_config() -> ModelConfig {
    ModelConfig { n_layers: 1, d_model: 16, n_heads: 2, n_kv_heads: 1, d_ff: 32, vocab_size: 4096, max_seq: 512, ..Default::default() }
}

pub fn tiny_weights(seed: u64) -> Weights<f32> {
    init_weights::<f32>(&tiny_config(), seed).unwrap()
}

pub fn tiny_engine(seed: u64, budget: usize) -> Engine {
    Engine::new(tiny_weights(seed), budget).unwrap()
}

pub fn small_corpus(seed: u64) -> Corpus {
    Corpus::generate(seed, 12, 120, 20)
}
