//! In-batch prefix sharing.
//!
//! Every prompt in a scoring request starts with the same system and query
//! blocks. The prefix is prefilled once; each item suffix then attends to the
//! cached prefix keys plus its own causal keys, with the two attention halves
//! combined through their log-sum-exp normalizers.

use crate::error::{Error, Result};
use crate::model::{forward_prefill, forward_with_prefix, prefill_cache, token_flops, KvCache, ModelConfig, Weights};
use crate::tensor::Real;
use crate::tokenizer::TokenId;

pub use crate::model::{merge_attention, AttentionPartial};

/// A batch split into one shared prefix and per-item suffixes.
#[derive(Debug, Clone)]
pub struct SharedBatch<T> {
    pub prefix_tokens: Vec<TokenId>,
    pub suffixes: Vec<Vec<TokenId>>,
    /// Filled by [`prefill_prefix`]; `None` until then or when the prefix is empty.
    pub prefix_kv: Option<KvCache<T>>,
}

impl<T: Real> SharedBatch<T> {
    pub fn len(&self) -> usize {
        self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }

    /// The original prompt of item `i`.
    pub fn prompt(&self, i: usize) -> Vec<TokenId> {
        let mut p = self.prefix_tokens.clone();
        p.extend_from_slice(&self.suffixes[i]);
        p
    }
}

fn check_lists(lists: &[Vec<TokenId>]) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if lists.iter().any(|l| l.is_empty()) {
        return Err(Error::Empty("prompt in batch"));
    }
    Ok(())
}

/// Longest common token prefix of the batch, moved one token left if any
/// prompt would otherwise be left with an empty suffix.
pub fn split_shared_prefix<T: Real>(lists: &[Vec<TokenId>]) -> Result<SharedBatch<T>> {
    check_lists(lists)?;
    let first = &lists[0];
    let mut lcp = first.len();
    for l in &lists[1..] {
        lcp = lcp.min(first.iter().zip(l).take_while(|(a, b)| a == b).count());
    }
    if lists.iter().any(|l| l.len() == lcp) {
        lcp -= 1;
    }
    split_at(lists, lcp)
}

/// Split at a caller-chosen boundary. Every list must share `prefix_len`
/// leading tokens and keep at least one suffix token.
pub fn split_at<T: Real>(lists: &[Vec<TokenId>], prefix_len: usize) -> Result<SharedBatch<T>> {
    check_lists(lists)?;
    let prefix = &lists[0][..prefix_len.min(lists[0].len())];
    for l in lists {
        if l.len() <= prefix_len || l[..prefix_len] != *prefix {
            return Err(Error::InvalidArgument(format!(
                "prompt of {} tokens does not extend the {prefix_len}-token shared prefix",
                l.len()
            )));
        }
    }
    Ok(SharedBatch {
        prefix_tokens: prefix.to_vec(),
        suffixes: lists.iter().map(|l| l[prefix_len..].to_vec()).collect(),
        prefix_kv: None,
    })
}

/// Prefill the shared prefix once (no output head).
pub fn prefill_prefix<T: Real>(w: &Weights<T>, shared: &mut SharedBatch<T>) -> Result<()> {
    if shared.prefix_tokens.is_empty() {
        shared.prefix_kv = None;
        return Ok(());
    }
    let longest = shared.suffixes.iter().map(Vec::len).max().unwrap_or(0);
    let total = shared.prefix_tokens.len() + longest;
    if total > w.config.max_seq {
        return Err(Error::SequenceLength { len: total, max: w.config.max_seq });
    }
    shared.prefix_kv = Some(prefill_cache(w, &shared.prefix_tokens)?);
    Ok(())
}

/// Last-position logits of every prompt in the batch, in input order.
pub fn score_shared_batch<T: Real>(w: &Weights<T>, shared: &mut SharedBatch<T>) -> Result<Vec<Vec<T>>> {
    if shared.prefix_kv.is_none() {
        prefill_prefix(w, shared)?;
    }
    match &shared.prefix_kv {
        None => shared.suffixes.iter().map(|s| Ok(forward_prefill(w, s, false)?.logits)).collect(),
        Some(kv) => shared.suffixes.iter().map(|s| Ok(forward_with_prefix(w, kv, s)?.0)).collect(),
    }
}

/// Expected speedup from sharing `n_query_tokens` across items of
/// `n_item_tokens` each: `1 + N_q / N_i`.
pub fn throughput_gain(n_query_tokens: usize, n_item_tokens: usize) -> Result<f64> {
    if n_item_tokens == 0 {
        return Err(Error::InvalidArgument("item token count must be positive".into()));
    }
    Ok(1.0 + n_query_tokens as f64 / n_item_tokens as f64)
}

/// Transformer-block FLOPs of one request under both execution plans.
/// The per-item output head is the same in both and is left out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkCount {
    pub prefix_flops: u64,
    pub shared_flops: u64,
    pub independent_flops: u64,
}

impl WorkCount {
    pub fn ratio(&self) -> f64 {
        self.independent_flops as f64 / self.shared_flops as f64
    }
}

pub fn work_count(cfg: &ModelConfig, prefix_len: usize, suffix_lens: &[usize]) -> WorkCount {
    let prefix_flops = if prefix_len > 0 { token_flops(cfg, 0, prefix_len) } else { 0 };
    let shared = prefix_flops + suffix_lens.iter().map(|&s| token_flops(cfg, prefix_len, s)).sum::<u64>();
    let independent = suffix_lens.iter().map(|&s| token_flops(cfg, 0, prefix_len + s)).sum();
    WorkCount { prefix_flops, shared_flops: shared, independent_flops: independent }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_keep_one_suffix_token() {
        let b = split_shared_prefix::<f32>(&[vec![1, 2, 3], vec![1, 2, 3]]).unwrap();
        assert_eq!(b.prefix_tokens, vec![1, 2]);
        assert_eq!(b.suffixes, vec![vec![3], vec![3]]);
    }

    #[test]
    fn disjoint_lists_share_nothing() {
        let b = split_shared_prefix::<f32>(&[vec![1, 2], vec![4, 2, 9]]).unwrap();
        assert!(b.prefix_tokens.is_empty());
        assert_eq!(b.suffixes, vec![vec![1, 2], vec![4, 2, 9]]);
    }

    #[test]
    fn single_prompt_batch() {
        let b = split_shared_prefix::<f32>(&[vec![5, 6, 7]]).unwrap();
        assert_eq!(b.prefix_tokens, vec![5, 6]);
        assert_eq!(b.prompt(0), vec![5, 6, 7]);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_shared_prefix::<f32>(&[]), Err(Error::Empty(_))));
        assert!(matches!(split_shared_prefix::<f32>(&[vec![1], vec![]]), Err(Error::Empty(_))));
        assert!(split_at::<f32>(&[vec![1, 2, 3], vec![1, 4, 3]], 2).is_err());
        assert!(split_at::<f32>(&[vec![1, 2]], 2).is_err());
    }

    #[test]
    fn gain_examples() {
        assert!((throughput_gain(50, 150).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(throughput_gain(0, 100).unwrap(), 1.0);
        assert_eq!(throughput_gain(100, 100).unwrap(), 2.0);
        assert!(throughput_gain(5, 0).is_err());
    }
}
