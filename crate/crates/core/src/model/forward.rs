//! Prefill forward pass, KV cache, and the activation trace used by backprop.

use crate::error::{Error, Result};
use crate::tensor::{c, cast_vec, gemm, matmul, silu, MatMut, MatRef, Real};
use crate::tokenizer::TokenId;

use super::attention::{attend_wide, merge_attention};
use super::{ModelConfig, Weights};

/// Keys and values of one layer, head-major `[n_kv_heads × seq_len × d_head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv<T> {
    pub k: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<T> {
    pub layers: Vec<LayerKv<T>>,
    pub seq_len: usize,
    pub n_kv_heads: usize,
    pub d_head: usize,
}

impl<T: Real> KvCache<T> {
    pub fn empty(config: &ModelConfig) -> Self {
        Self {
            layers: (0..config.n_layers).map(|_| LayerKv { k: Vec::new(), v: Vec::new() }).collect(),
            seq_len: 0,
            n_kv_heads: config.n_kv_heads,
            d_head: config.d_head(),
        }
    }

    /// Cache covering `self` followed by `next`.
    pub fn append(&self, next: &KvCache<T>) -> Result<KvCache<T>> {
        if self.layers.len() != next.layers.len() || (self.n_kv_heads, self.d_head) != (next.n_kv_heads, next.d_head) {
            return Err(Error::Shape("appending caches of different geometry".into()));
        }
        let (a, b, dh) = (self.seq_len, next.seq_len, self.d_head);
        let join = |x: &[T], y: &[T]| {
            let mut out = Vec::with_capacity(x.len() + y.len());
            for g in 0..self.n_kv_heads {
                out.extend_from_slice(&x[g * a * dh..(g + 1) * a * dh]);
                out.extend_from_slice(&y[g * b * dh..(g + 1) * b * dh]);
            }
            out
        };
        Ok(KvCache {
            layers: self
                .layers
                .iter()
                .zip(&next.layers)
                .map(|(p, q)| LayerKv { k: join(&p.k, &q.k), v: join(&p.v, &q.v) })
                .collect(),
            seq_len: a + b,
            n_kv_heads: self.n_kv_heads,
            d_head: dh,
        })
    }

    pub fn bytes(&self) -> usize {
        self.layers.iter().map(|l| (l.k.len() + l.v.len()) * T::BYTES).sum()
    }
}

/// Per-layer MLP inputs (post-norm), each `rows × d_model`.
pub type Captured<T> = Vec<Vec<T>>;

#[derive(Debug, Clone)]
pub struct PrefillOutput<T> {
    pub logits: Vec<T>,
    pub kv: KvCache<T>,
    pub captured: Option<Captured<T>>,
}

/// Activations of one block saved for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LayerTrace<T> {
    pub x_in: Vec<T>,
    pub attn_inv_rms: Vec<T>,
    pub h1: Vec<T>,
    /// Rotated queries, `len × n_heads·d_head`.
    pub q: Vec<T>,
    /// Rotated keys, head-major.
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// `n_heads × len × len`
    pub probs: Vec<T>,
    /// Concatenated head outputs, `len × n_heads·d_head`.
    pub attn: Vec<T>,
    pub x_mid: Vec<T>,
    pub mlp_inv_rms: Vec<T>,
    pub h2: Vec<T>,
    pub up: Vec<T>,
    pub gate: Vec<T>,
    pub act: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    pub tokens: Vec<TokenId>,
    pub layers: Vec<LayerTrace<T>>,
    pub x_last: Vec<T>,
    pub final_inv_rms: T,
    pub final_normed: Vec<T>,
    pub rope: Rope<T>,
}

/// Rotary tables for positions `start..start+len`, rotate-half convention.
#[derive(Debug, Clone, Default)]
pub struct Rope<T> {
    pub cos: Vec<T>,
    pub sin: Vec<T>,
    pub half: usize,
    pub len: usize,
}

impl<T: Real> Rope<T> {
    pub fn new(d_head: usize, theta: f64, start: usize, len: usize) -> Self {
        let half = d_head / 2;
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for p in start..start + len {
            for i in 0..half {
                let freq = theta.powf(-2.0 * i as f64 / d_head as f64);
                let a = p as f64 * freq;
                cos.push(c(a.cos()));
                sin.push(c(a.sin()));
            }
        }
        Self { cos, sin, half, len }
    }

    /// Rotate every head of a `len × heads·d_head` buffer in place.
    /// `inverse` applies the transpose rotation (used for gradients).
    pub fn apply(&self, x: &mut [T], heads: usize, inverse: bool) {
        let half = self.half;
        let dh = 2 * half;
        for p in 0..self.len {
            let (cs, sn) = (&self.cos[p * half..(p + 1) * half], &self.sin[p * half..(p + 1) * half]);
            for h in 0..heads {
                let base = p * heads * dh + h * dh;
                for i in 0..half {
                    let (x1, x2) = (x[base + i], x[base + i + half]);
                    let s = if inverse { -sn[i] } else { sn[i] };
                    x[base + i] = x1 * cs[i] - x2 * s;
                    x[base + i + half] = x2 * cs[i] + x1 * s;
                }
            }
        }
    }
}

/// Row-wise RMSNorm. Returns the normalized rows and each row's `1/rms`.
pub fn rmsnorm<T: Real>(x: &[T], g: &[T], rows: usize, d: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut inv = vec![T::zero(); rows];
    let eps: T = c(eps);
    let dn: T = c(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
        let s = T::one() / (ms + eps).sqrt();
        inv[r] = s;
        for j in 0..d {
            y[r * d + j] = row[j] * s * g[j];
        }
    }
    (y, inv)
}

/// `len × heads·dh` → `heads × len × dh`.
pub fn to_head_major<T: Real>(x: &[T], len: usize, heads: usize, dh: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for p in 0..len {
        for h in 0..heads {
            out[(h * len + p) * dh..(h * len + p + 1) * dh]
                .copy_from_slice(&x[(p * heads + h) * dh..(p * heads + h + 1) * dh]);
        }
    }
    out
}

/// `heads × len × dh` → `len × heads·dh`.
pub fn from_head_major<T: Real>(x: &[T], len: usize, heads: usize, dh: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for h in 0..heads {
        for p in 0..len {
            out[(p * heads + h) * dh..(p * heads + h + 1) * dh]
                .copy_from_slice(&x[(h * len + p) * dh..(h * len + p + 1) * dh]);
        }
    }
    out
}

fn check_tokens(cfg: &ModelConfig, tokens: &[TokenId], past: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if past + tokens.len() > cfg.max_seq {
        return Err(Error::SequenceLength { len: past + tokens.len(), max: cfg.max_seq });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::InvalidArgument(format!("token id {t} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

struct Run<T> {
    logits: Vec<T>,
    kv: KvCache<T>,
    captured: Option<Captured<T>>,
}

fn run<T: Real>(
    w: &Weights<T>,
    tokens: &[TokenId],
    prefix: Option<&KvCache<T>>,
    capture: bool,
    want_logits: bool,
    mut trace: Option<&mut Trace<T>>,
) -> Result<Run<T>> {
    w.check_shapes()?;
    let cfg = &w.config;
    let past = prefix.map_or(0, |p| p.seq_len);
    check_tokens(cfg, tokens, past)?;
    if let Some(p) = prefix {
        if p.layers.len() != cfg.n_layers {
            return Err(Error::Shape(format!(
                "prefix cache has {} layers, model has {}",
                p.layers.len(),
                cfg.n_layers
            )));
        }
        if (p.n_kv_heads, p.d_head) != (cfg.n_kv_heads, cfg.d_head()) {
            return Err(Error::Shape("prefix cache head geometry differs from model".into()));
        }
    }
    let s = tokens.len();
    let (d, nh, nkv, dh, ff) = (cfg.d_model, cfg.n_heads, cfg.n_kv_heads, cfg.d_head(), cfg.d_ff);
    let kvd = nkv * dh;
    let rope = Rope::<T>::new(dh, cfg.rope_theta, past, s);

    let mut x = Vec::with_capacity(s * d);
    for &t in tokens {
        x.extend_from_slice(&w.embed[t as usize * d..(t as usize + 1) * d]);
    }
    let mut kv = KvCache { layers: Vec::with_capacity(cfg.n_layers), seq_len: s, n_kv_heads: nkv, d_head: dh };
    let mut captured = capture.then(Vec::new);

    for (li, lw) in w.layers.iter().enumerate() {
        let (h1, inv1) = rmsnorm(&x, &lw.attn_norm, s, d, cfg.norm_eps);
        let mut q = matmul(&h1, &lw.wq, s, d, d);
        let mut k = matmul(&h1, &lw.wk, s, d, kvd);
        let v = matmul(&h1, &lw.wv, s, d, kvd);
        rope.apply(&mut q, nh, false);
        rope.apply(&mut k, nkv, false);
        let kh = to_head_major(&k, s, nkv, dh);
        let vh = to_head_major(&v, s, nkv, dh);

        let mut probs64 = Vec::new();
        let own = attend_wide(&q, &kh, &vh, s, s, nh, nkv, dh, true, trace.is_some().then_some(&mut probs64));
        let part = match prefix.map(|p| (&p.layers[li], p.seq_len)) {
            Some((pl, plen)) if plen > 0 => {
                let pre = attend_wide(&q, &pl.k, &pl.v, s, plen, nh, nkv, dh, false, None);
                merge_attention(&pre, &own)?
            }
            _ => own,
        };
        let probs: Vec<T> = cast_vec(&probs64);
        let attn: Vec<T> = cast_vec(&from_head_major(&part.out, s, nh, dh));
        let mut x_mid = x.clone();
        gemm(MatRef::new(&attn, s, d), MatRef::new(&lw.wo, d, d), MatMut::new(&mut x_mid, s, d), true);

        let (h2, inv2) = rmsnorm(&x_mid, &lw.mlp_norm, s, d, cfg.norm_eps);
        if let Some(cap) = captured.as_mut() {
            cap.push(h2.clone());
        }
        let up = matmul(&h2, &lw.w_up, s, d, ff);
        let gate = matmul(&h2, &lw.w_gate, s, d, ff);
        let act: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
        let mut x_out = x_mid.clone();
        gemm(MatRef::new(&act, s, ff), MatRef::new(&lw.w_down, ff, d), MatMut::new(&mut x_out, s, d), true);

        if let Some(tr) = trace.as_deref_mut() {
            tr.layers.push(LayerTrace {
                x_in: std::mem::take(&mut x),
                attn_inv_rms: inv1,
                h1,
                q,
                k: kh.clone(),
                v: vh.clone(),
                probs,
                attn,
                x_mid,
                mlp_inv_rms: inv2,
                h2,
                up,
                gate,
                act,
            });
        }
        kv.layers.push(LayerKv { k: kh, v: vh });
        x = x_out;
    }

    if !want_logits {
        return Ok(Run { logits: Vec::new(), kv, captured });
    }
    let last = &x[(s - 1) * d..];
    let (xn, inv) = rmsnorm(last, &w.final_norm, 1, d, cfg.norm_eps);
    let logits = matmul(&xn, &w.head, 1, d, cfg.vocab_size);
    if let Some(tr) = trace {
        tr.tokens = tokens.to_vec();
        tr.x_last = last.to_vec();
        tr.final_inv_rms = inv[0];
        tr.final_normed = xn;
        tr.rope = rope;
    }
    Ok(Run { logits, kv, captured })
}

/// Causal prefill over `tokens`; returns last-position logits and the full cache.
/// With `capture`, also returns every layer's MLP input rows.
pub fn forward_prefill<T: Real>(w: &Weights<T>, tokens: &[TokenId], capture: bool) -> Result<PrefillOutput<T>> {
    let r = run(w, tokens, None, capture, true, None)?;
    Ok(PrefillOutput { logits: r.logits, kv: r.kv, captured: r.captured })
}

/// Prefill that only builds the KV cache; the output head is skipped.
pub fn prefill_cache<T: Real>(w: &Weights<T>, tokens: &[TokenId]) -> Result<KvCache<T>> {
    Ok(run(w, tokens, None, false, false, None)?.kv)
}

/// Prefill that also records the activations needed by backprop.
pub fn forward_traced<T: Real>(w: &Weights<T>, tokens: &[TokenId]) -> Result<(Vec<T>, Trace<T>)> {
    let mut trace = Trace { layers: Vec::with_capacity(w.config.n_layers), ..Default::default() };
    let r = run(w, tokens, None, false, true, Some(&mut trace))?;
    Ok((r.logits, trace))
}

/// Score `suffix` against a cached prefix. Suffix positions continue from
/// `prefix.seq_len`; each layer merges dense prefix attention with causal
/// suffix attention. Returns the logits and the suffix-only cache.
pub fn forward_with_prefix<T: Real>(
    w: &Weights<T>,
    prefix: &KvCache<T>,
    suffix: &[TokenId],
) -> Result<(Vec<T>, KvCache<T>)> {
    let r = run(w, suffix, Some(prefix), false, true, None)?;
    Ok((r.logits, r.kv))
}

fn block_flops(cfg: &ModelConfig, rows: u64) -> u64 {
    let (d, kvd, ff) = (cfg.d_model as u64, cfg.kv_dim() as u64, cfg.d_ff as u64);
    rows * 2 * (2 * d * d + 2 * d * kvd + 3 * d * ff)
}

/// Multiply-add count (×2) of attention for `rows` queries at positions
/// `past..past+rows`, each seeing every earlier key and itself.
fn attention_flops(cfg: &ModelConfig, past: u64, rows: u64) -> u64 {
    let keys: u64 = (0..rows).map(|i| past + i + 1).sum();
    4 * cfg.n_heads as u64 * cfg.d_head() as u64 * keys
}

/// Logical FLOPs of a prefill over `len` tokens (causal attention counted
/// triangularly, head on the last position only).
pub fn prefill_flops(cfg: &ModelConfig, len: usize) -> u64 {
    suffix_flops(cfg, 0, len)
}

/// Logical FLOPs of scoring `len` tokens on top of a `past`-token cache.
pub fn suffix_flops(cfg: &ModelConfig, past: usize, len: usize) -> u64 {
    token_flops(cfg, past, len) + head_flops(cfg)
}

/// FLOPs of the transformer blocks alone for `len` tokens after `past` cached ones.
pub fn token_flops(cfg: &ModelConfig, past: usize, len: usize) -> u64 {
    let (past, len) = (past as u64, len as u64);
    cfg.n_layers as u64 * (block_flops(cfg, len) + attention_flops(cfg, past, len))
}

/// FLOPs of the last-position output projection.
pub fn head_flops(cfg: &ModelConfig) -> u64 {
    2 * cfg.d_model as u64 * cfg.vocab_size as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    fn tiny() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 16, n_heads: 4, n_kv_heads: 2, d_ff: 24, vocab_size: 50, max_seq: 64, ..Default::default() }
    }

    #[test]
    fn single_token_prefill() {
        let w = init_weights::<f32>(&tiny(), 3).unwrap();
        let out = forward_prefill(&w, &[7], false).unwrap();
        assert_eq!(out.logits.len(), 50);
        assert!(out.logits.iter().all(|x| x.is_finite()));
        assert_eq!(out.kv.seq_len, 1);
        assert_eq!(out.kv.layers.len(), 2);
    }

    #[test]
    fn rejects_empty_overlong_and_unknown_ids() {
        let w = init_weights::<f32>(&tiny(), 3).unwrap();
        assert!(matches!(forward_prefill(&w, &[], false), Err(Error::Empty(_))));
        let long = vec![5u32; 65];
        assert!(matches!(forward_prefill(&w, &long, false), Err(Error::SequenceLength { len: 65, max: 64 })));
        assert!(matches!(forward_prefill(&w, &[50], false), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rope_inverse_undoes_rotation() {
        let rope = Rope::<f64>::new(8, 10_000.0, 3, 4);
        let x: Vec<f64> = (0..4 * 2 * 8).map(|i| (i as f64).sin()).collect();
        let mut y = x.clone();
        rope.apply(&mut y, 2, false);
        assert_ne!(x, y);
        rope.apply(&mut y, 2, true);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_major_roundtrip() {
        let x: Vec<f64> = (0..3 * 2 * 4).map(|i| i as f64).collect();
        let hm = to_head_major(&x, 3, 2, 4);
        assert_eq!(&hm[..4], &x[..4]);
        assert_eq!(&hm[4..8], &x[8..12]);
        assert_eq!(from_head_major(&hm, 3, 2, 4), x);
    }

    #[test]
    fn cache_append_matches_full_cache() {
        let w = init_weights::<f64>(&tiny(), 4).unwrap();
        let toks: Vec<u32> = (10..22).collect();
        let full = forward_prefill(&w, &toks, false).unwrap().kv;
        let head = forward_prefill(&w, &toks[..5], false).unwrap().kv;
        let (_, tail) = forward_with_prefix(&w, &head, &toks[5..]).unwrap();
        let joined = head.append(&tail).unwrap();
        assert_eq!(joined.seq_len, full.seq_len);
        for (a, b) in joined.layers.iter().zip(&full.layers) {
            for (x, y) in a.k.iter().zip(&b.k).chain(a.v.iter().zip(&b.v)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flop_count_splits_additively() {
        let cfg = tiny();
        let head = 2 * cfg.d_model as u64 * cfg.vocab_size as u64;
        let whole = prefill_flops(&cfg, 30);
        let split = prefill_flops(&cfg, 12) - head + suffix_flops(&cfg, 12, 18);
        assert_eq!(whole, split);
    }
}
