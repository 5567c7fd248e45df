//! Model execution for one request: prompt assembly, per-item length
//! checks, and prefix-shared prefill.

use std::sync::Arc;
use std::time::Instant;

use slmrank_core::corpus::{assemble_prompt, truncate_description, JobItem, Query};
use slmrank_core::model::{content_hash, Weights};
use slmrank_core::prefixcache::{score_shared_batch, split_at, work_count, WorkCount};
use slmrank_core::scoring::relevance_score;
use slmrank_core::tokenizer::{Encoder, TokenId, Vocab};

/// Output of [`Engine::score`]: one result per input item, in input order.
#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub results: Vec<Result<f64, String>>,
    pub tokenize_ms: f64,
    pub prefill_ms: f64,
    /// `None` when nothing reached the model.
    pub work: Option<WorkCount>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    weights: Arc<Weights<f32>>,
    vocab: Arc<Vocab>,
    token_budget: usize,
    model_version: String,
}

impl Engine {
    /// The model version is the checkpoint content hash plus the token
    /// budget, since both determine every score.
    pub fn new(weights: Weights<f32>, token_budget: usize) -> slmrank_core::Result<Self> {
        weights.check_shapes()?;
        let vocab = Vocab::with_size(weights.config.vocab_size as u32);
        let model_version = format!("{}-b{token_budget}", content_hash(&weights)?);
        Ok(Self { weights: Arc::new(weights), vocab: Arc::new(vocab), token_budget, model_version })
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn token_budget(&self) -> usize {
        self.token_budget
    }

    pub fn weights(&self) -> &Weights<f32> {
        &self.weights
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn encode(&self, enc: &Encoder<'_>, query: &Query, item: &JobItem) -> Result<(Vec<TokenId>, usize), String> {
        let seg = truncate_description(&assemble_prompt(query, item), self.token_budget, enc).map_err(|e| e.to_string())?;
        let prompt = enc.encode(&seg.full());
        let max = self.weights.config.max_seq;
        if prompt.len() > max {
            return Err(format!("prompt of {} tokens exceeds the model limit of {max}", prompt.len()));
        }
        Ok((prompt, enc.count(&seg.shared_prefix())))
    }

    pub fn score(&self, query: &Query, items: &[&JobItem]) -> EngineOutput {
        let t0 = Instant::now();
        let enc = Encoder::new(&self.vocab);
        let mut results: Vec<Result<f64, String>> = Vec::with_capacity(items.len());
        let mut prompts = Vec::new();
        let mut slots = Vec::new();
        let mut prefix_len = 0;
        for (i, item) in items.iter().enumerate() {
            match self.encode(&enc, query, item) {
                Ok((p, plen)) => {
                    prefix_len = plen;
                    prompts.push(p);
                    slots.push(i);
                    results.push(Ok(f64::NAN));
                }
                Err(e) => results.push(Err(e)),
            }
        }
        let tokenize_ms = t0.elapsed().as_secs_f64() * 1e3;
        if prompts.is_empty() {
            return EngineOutput { results, tokenize_ms, prefill_ms: 0.0, work: None };
        }
        let t1 = Instant::now();
        let scored = split_at::<f32>(&prompts, prefix_len).and_then(|mut batch| score_shared_batch(&self.weights, &mut batch));
        match scored {
            Ok(logits) => {
                for (slot, l) in slots.iter().zip(&logits) {
                    results[*slot] = relevance_score(l, &self.vocab).map(|s| s.p_yes).map_err(|e| e.to_string());
                }
            }
            Err(e) => {
                for slot in &slots {
                    results[*slot] = Err(e.to_string());
                }
            }
        }
        let prefill_ms = t1.elapsed().as_secs_f64() * 1e3;
        let suffix_lens: Vec<usize> = prompts.iter().map(|p| p.len() - prefix_len).collect();
        let work = work_count(&self.weights.config, prefix_len, &suffix_lens);
        EngineOutput { results, tokenize_ms, prefill_ms, work: Some(work) }
    }

    /// Token length of the prompt this engine builds for `item`.
    pub fn prompt_tokens(&self, query: &Query, item: &JobItem) -> Result<usize, String> {
        self.encode(&Encoder::new(&self.vocab), query, item).map(|(p, _)| p.len())
    }

    /// Score one item on its own, outside any batch.
    pub fn score_one(&self, query: &Query, item: &JobItem) -> Result<f64, String> {
        self.score(query, &[item]).results.pop().expect("one result per item")
    }
}
