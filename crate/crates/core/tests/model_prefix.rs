use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slmrank_core::corpus::{assemble_prompt, generate_corpus, SYSTEM_PREFIX};
use slmrank_core::model::*;
use slmrank_core::prefixcache::*;
use slmrank_core::tokenizer::{encode, Encoder, Vocab, TAG_META};

fn small_cfg() -> ModelConfig {
    ModelConfig { n_layers: 2, d_model: 16, n_heads: 4, n_kv_heads: 2, d_ff: 32, vocab_size: 300, max_seq: 256, ..Default::default() }
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(3..vocab as u32)).collect()
}

fn max_abs_diff<T: slmrank_core::tensor::Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).abs().to_f64().unwrap()).fold(0.0, f64::max)
}

#[test]
fn split_at_25_of_40_matches_full_pass_f32() {
    let w = init_weights::<f32>(&ModelConfig::default(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let toks = random_tokens(&mut rng, 40, 32768);
    let full = forward_prefill(&w, &toks, false).unwrap();
    let pre = forward_prefill(&w, &toks[..25], false).unwrap();
    let (logits, ext) = forward_with_prefix(&w, &pre.kv, &toks[25..]).unwrap();
    assert_eq!(ext.seq_len, 15);
    let diff = max_abs_diff(&full.logits, &logits);
    assert!(diff < 1e-5, "max abs diff {diff}");
}

#[test]
fn two_suffixes_share_one_cache() {
    let w = init_weights::<f32>(&ModelConfig::default(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prefix = random_tokens(&mut rng, 30, 32768);
    let kv = prefill_cache(&w, &prefix).unwrap();
    for n in [7, 19] {
        let suffix = random_tokens(&mut rng, n, 32768);
        let whole: Vec<u32> = prefix.iter().chain(&suffix).copied().collect();
        let (got, _) = forward_with_prefix(&w, &kv, &suffix).unwrap();
        let want = forward_prefill(&w, &whole, false).unwrap().logits;
        assert!(max_abs_diff(&got, &want) < 1e-5);
    }
}

#[test]
fn empty_prefix_cache_equals_prefill() {
    let w = init_weights::<f64>(&small_cfg(), 3).unwrap();
    let toks = vec![5, 9, 17, 4, 200];
    let (a, _) = forward_with_prefix(&w, &KvCache::empty(&w.config), &toks).unwrap();
    let b = forward_prefill(&w, &toks, false).unwrap().logits;
    assert_eq!(a, b);
}

#[test]
fn prefix_errors() {
    let w = init_weights::<f32>(&small_cfg(), 3).unwrap();
    let kv = prefill_cache(&w, &vec![5u32; 250]).unwrap();
    assert!(matches!(forward_with_prefix(&w, &kv, &[1; 7]), Err(slmrank_core::Error::SequenceLength { len: 257, .. })));
    let mut short = kv.clone();
    short.layers.pop();
    assert!(matches!(forward_with_prefix(&w, &short, &[1]), Err(slmrank_core::Error::Shape(_))));
    assert!(forward_with_prefix(&w, &kv, &[]).is_err());
}

#[test]
fn positions_matter() {
    let w = init_weights::<f64>(&ModelConfig::default(), 4).unwrap();
    let a = [100u32, 200, 300, 400, 500];
    let b = [100u32, 300, 200, 400, 500];
    let la = forward_prefill(&w, &a, false).unwrap().logits;
    let lb = forward_prefill(&w, &b, false).unwrap().logits;
    assert!(max_abs_diff(&la, &lb) > 1e-6);
    let again = forward_prefill(&w, &a, false).unwrap().logits;
    assert_eq!(la, again);
}

#[test]
fn forward_never_mutates_weights() {
    let w = init_weights::<f32>(&small_cfg(), 5).unwrap();
    let before = w.clone();
    let kv = prefill_cache(&w, &[3, 4, 5]).unwrap();
    forward_with_prefix(&w, &kv, &[6, 7]).unwrap();
    forward_prefill(&w, &[1, 2, 3], true).unwrap();
    assert_eq!(w, before);
}

#[test]
fn capture_records_every_layer() {
    let w = init_weights::<f32>(&small_cfg(), 5).unwrap();
    let out = forward_prefill(&w, &[3, 4, 5, 6], true).unwrap();
    let cap = out.captured.unwrap();
    assert_eq!(cap.len(), 2);
    assert!(cap.iter().all(|c| c.len() == 4 * 16));
}

#[test]
fn f32_and_f64_agree_on_argmax() {
    let w64 = init_weights::<f64>(&ModelConfig::default(), 6).unwrap();
    let w32: Weights<f32> = w64.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut disagreements = Vec::new();
    for i in 0..1000 {
        let n = rng.random_range(1..24);
        let toks = random_tokens(&mut rng, n, 32768);
        let a = forward_prefill(&w64, &toks, false).unwrap().logits;
        let b = forward_prefill(&w32, &toks, false).unwrap().logits;
        let arg = |v: &[f64]| (0..v.len()).max_by(|&x, &y| v[x].total_cmp(&v[y])).unwrap();
        let b64: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        if arg(&a) != arg(&b64) {
            disagreements.push(i);
        }
    }
    println!("argmax disagreements: {disagreements:?}");
    assert!(disagreements.len() <= 10);
}

fn dense_oracle(q: &[f64], keys: &[f64], vals: &[f64], dh: usize, visible: usize) -> Vec<f64> {
    let scale = 1.0 / (dh as f64).sqrt();
    let scores: Vec<f64> = (0..visible).map(|j| (0..dh).map(|t| q[t] * keys[j * dh + t]).sum::<f64>() * scale).collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    (0..dh).map(|t| (0..visible).map(|j| e[j] * vals[j * dh + t]).sum::<f64>() / z).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

#[test]
fn merge_equals_single_pass_over_concatenated_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (p, s, dh) = (rng.random_range(0..12), rng.random_range(1..10), 2 * rng.random_range(1..5));
        let q = rand_vec(&mut rng, s * dh, 2.0);
        let kp = rand_vec(&mut rng, p * dh, 2.0);
        let vp = rand_vec(&mut rng, p * dh, 1.0);
        let ks = rand_vec(&mut rng, s * dh, 2.0);
        let vs = rand_vec(&mut rng, s * dh, 1.0);
        let pre = attend(&q, &kp, &vp, s, p, 1, 1, dh, false, None);
        let suf = attend(&q, &ks, &vs, s, s, 1, 1, dh, true, None);
        let merged = merge_attention(&pre, &suf).unwrap();
        let keys: Vec<f64> = kp.iter().chain(&ks).copied().collect();
        let vals: Vec<f64> = vp.iter().chain(&vs).copied().collect();
        for i in 0..s {
            let want = dense_oracle(&q[i * dh..(i + 1) * dh], &keys, &vals, dh, p + i + 1);
            worst = worst.max(max_abs_diff(&merged.out[i * dh..(i + 1) * dh], &want));
        }
    }
    assert!(worst < 1e-6, "worst {worst}");
}

fn random_partial(rng: &mut ChaCha8Rng, len: usize, dh: usize) -> AttentionPartial<f64> {
    AttentionPartial { out: rand_vec(rng, len * dh, 1.0), lse: rand_vec(rng, len, 5.0), heads: 1, len, d_head: dh }
}

#[test]
fn merge_is_associative_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let (len, dh) = (rng.random_range(1..6), rng.random_range(1..6));
        let (a, b, c) = (random_partial(&mut rng, len, dh), random_partial(&mut rng, len, dh), random_partial(&mut rng, len, dh));
        let left = merge_attention(&merge_attention(&a, &b).unwrap(), &c).unwrap();
        let right = merge_attention(&a, &merge_attention(&b, &c).unwrap()).unwrap();
        assert!(max_abs_diff(&left.out, &right.out) < 1e-9);
        assert!(max_abs_diff(&left.lse, &right.lse) < 1e-9);
        let shift: f64 = rng.random_range(-50.0..50.0);
        let (mut a2, mut b2) = (a.clone(), b.clone());
        a2.lse.iter_mut().for_each(|x| *x += shift);
        b2.lse.iter_mut().for_each(|x| *x += shift);
        let m1 = merge_attention(&a, &b).unwrap();
        let m2 = merge_attention(&a2, &b2).unwrap();
        assert!(max_abs_diff(&m1.out, &m2.out) < 1e-9);
    }
}

fn check_batch<T: slmrank_core::tensor::Real>(w: &Weights<T>, prompts: &[Vec<u32>]) -> f64 {
    let mut batch = split_shared_prefix::<T>(prompts).unwrap();
    let got = score_shared_batch(w, &mut batch).unwrap();
    prompts
        .iter()
        .zip(&got)
        .map(|(p, g)| max_abs_diff(g, &forward_prefill(w, p, false).unwrap().logits))
        .fold(0.0, f64::max)
}

fn random_request(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<Vec<u32>> {
    let batch = rng.random_range(2..=16);
    let prefix_len = rng.random_range(0..100);
    let prefix = random_tokens(rng, prefix_len, vocab);
    (0..batch)
        .map(|_| {
            let total = rng.random_range(8.max(prefix_len + 1)..=128.max(prefix_len + 1));
            let mut p = prefix.clone();
            p.extend(random_tokens(rng, total - prefix_len, vocab));
            p
        })
        .collect()
}

#[test]
fn shared_batches_match_independent_passes() {
    let w32 = init_weights::<f32>(&ModelConfig::default(), 9).unwrap();
    let w64: Weights<f64> = w32.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let req = random_request(&mut rng, 32768);
        worst32 = worst32.max(check_batch(&w32, &req));
        worst64 = worst64.max(check_batch(&w64, &req));
    }
    assert!(worst32 < 1e-5, "f32 {worst32}");
    assert!(worst64 < 1e-10, "f64 {worst64}");
}

#[test]
fn degenerate_batches() {
    let w = init_weights::<f32>(&small_cfg(), 10).unwrap();
    let one = vec![vec![4u32, 8, 15, 16, 23, 42]];
    let mut b = split_shared_prefix::<f32>(&one).unwrap();
    let got = score_shared_batch(&w, &mut b).unwrap();
    assert!(max_abs_diff(&got[0], &forward_prefill(&w, &one[0], false).unwrap().logits) < 1e-5);

    let disjoint = vec![vec![4u32, 8, 15], vec![5u32, 8, 15, 16]];
    let mut b = split_shared_prefix::<f32>(&disjoint).unwrap();
    assert!(b.prefix_tokens.is_empty());
    let got = score_shared_batch(&w, &mut b).unwrap();
    for (p, g) in disjoint.iter().zip(&got) {
        assert_eq!(*g, forward_prefill(&w, p, false).unwrap().logits);
    }
}

#[test]
fn ten_item_request_matches_independent_passes() {
    let vocab = Vocab::default();
    let (queries, items) = generate_corpus(12, 1, 10);
    let enc = Encoder::new(&vocab);
    let prompts: Vec<Vec<u32>> = items
        .iter()
        .map(|it| {
            let seg = slmrank_core::corpus::truncate_description(&assemble_prompt(&queries[0], it), 120, &enc).unwrap();
            encode(&seg.full(), &vocab)
        })
        .collect();
    let w = init_weights::<f32>(&ModelConfig::default(), 12).unwrap();
    assert!(check_batch(&w, &prompts) < 1e-5);
}

#[test]
fn lcp_of_template_prompts_covers_system_and_query_blocks() {
    let vocab = Vocab::default();
    let (queries, items) = generate_corpus(13, 3, 10);
    for q in &queries {
        let prompts: Vec<Vec<u32>> = items.iter().map(|it| encode(&assemble_prompt(q, it).full(), &vocab)).collect();
        let b = split_shared_prefix::<f32>(&prompts).unwrap();
        let head = encode(&format!("{SYSTEM_PREFIX}<|q|>{}<|/q|>", q.text), &vocab);
        // Token-level LCP: the system and query blocks, then the opening
        // metadata tag (identical in every prompt), then any shared title words.
        assert_eq!(&b.prefix_tokens[..head.len()], &head[..]);
        assert_eq!(b.prefix_tokens[head.len()], vocab.special_id(TAG_META).unwrap());
        for p in &prompts {
            assert_eq!(&p[..b.prefix_tokens.len()], &b.prefix_tokens[..]);
        }
    }
}

#[test]
fn work_counts_track_throughput_gain() {
    let cfg = ModelConfig::default();
    for (nq, ni) in [(8usize, 24usize), (16, 32), (12, 60), (16, 48)] {
        let wc = work_count(&cfg, nq, &[ni; 16]);
        let t = throughput_gain(nq, ni).unwrap();
        let rel = (wc.ratio() - t).abs() / t;
        println!("Nq={nq} Ni={ni}: flop ratio {:.4} vs T {:.4} ({:.1}%)", wc.ratio(), t, rel * 100.0);
        assert!(rel < 0.05);
        let wc32 = work_count(&cfg, nq, &[ni; 32]);
        assert_eq!(wc.prefix_flops, wc32.prefix_flops);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_split_matches_full_pass_f64(seed in 0u64..1000, len in 2usize..40, split_frac in 0.0f64..1.0) {
        let w = init_weights::<f64>(&small_cfg(), seed % 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks = random_tokens(&mut rng, len, 300);
        let split = ((len - 1) as f64 * split_frac) as usize;
        let full = forward_prefill(&w, &toks, false).unwrap().logits;
        let kv = if split == 0 { KvCache::empty(&w.config) } else { prefill_cache(&w, &toks[..split]).unwrap() };
        let (got, _) = forward_with_prefix(&w, &kv, &toks[split..]).unwrap();
        prop_assert!(max_abs_diff(&full, &got) < 1e-10);
    }

    #[test]
    fn every_split_matches_full_pass_f32(seed in 0u64..1000, len in 2usize..40, split_frac in 0.0f64..1.0) {
        let w = init_weights::<f32>(&small_cfg(), seed % 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks = random_tokens(&mut rng, len, 300);
        let split = ((len - 1) as f64 * split_frac) as usize;
        let full = forward_prefill(&w, &toks, false).unwrap().logits;
        let kv = if split == 0 { KvCache::empty(&w.config) } else { prefill_cache(&w, &toks[..split]).unwrap() };
        let (got, _) = forward_with_prefix(&w, &kv, &toks[split..]).unwrap();
        prop_assert!(max_abs_diff(&full, &got) < 1e-5);
    }
}
