//! Attention kernels that return log-sum-exp partials, and the LSE merge.
//!
//! A partial holds the softmax-normalized output of attending to one block
//! of keys plus the per-row log-sum-exp of the raw scores. Two partials over
//! disjoint key blocks combine into attention over their union.

use crate::error::{Error, Result};
use crate::tensor::{c, cast_vec, gemm, softmax_row, MatMut, MatRef, Real};

/// Output `[heads × len × d_head]` and per-(head, row) log-sum-exp `[heads × len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPartial<T> {
    pub out: Vec<T>,
    pub lse: Vec<T>,
    pub heads: usize,
    pub len: usize,
    pub d_head: usize,
}

impl<T: Real> AttentionPartial<T> {
    /// The partial of attending to no keys at all: zero output, `lse = -inf`.
    pub fn empty(heads: usize, len: usize, d_head: usize) -> Self {
        Self {
            out: vec![T::zero(); heads * len * d_head],
            lse: vec![T::neg_infinity(); heads * len],
            heads,
            len,
            d_head,
        }
    }

    fn check(&self) -> Result<()> {
        if self.out.len() != self.heads * self.len * self.d_head || self.lse.len() != self.heads * self.len {
            return Err(Error::Shape(format!(
                "attention partial buffers do not match {}x{}x{}",
                self.heads, self.len, self.d_head
            )));
        }
        Ok(())
    }
}

/// Combine two partials over disjoint key sets.
///
/// `out = (e^{lse_a}·out_a + e^{lse_b}·out_b) / (e^{lse_a} + e^{lse_b})`, evaluated
/// after subtracting the row max. A `-inf` lse marks an empty key block.
pub fn merge_attention<T: Real>(a: &AttentionPartial<T>, b: &AttentionPartial<T>) -> Result<AttentionPartial<T>> {
    a.check()?;
    b.check()?;
    if (a.heads, a.len, a.d_head) != (b.heads, b.len, b.d_head) {
        return Err(Error::Shape(format!(
            "merge of {}x{}x{} with {}x{}x{}",
            a.heads, a.len, a.d_head, b.heads, b.len, b.d_head
        )));
    }
    let bad = |x: &T| x.is_nan() || *x == T::infinity();
    if a.lse.iter().any(bad) || b.lse.iter().any(bad) {
        return Err(Error::NonFinite("attention lse"));
    }
    if a.out.iter().chain(&b.out).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attention output"));
    }
    let dh = a.d_head;
    let mut out = vec![T::zero(); a.out.len()];
    let mut lse = vec![T::neg_infinity(); a.lse.len()];
    for row in 0..a.lse.len() {
        let (la, lb) = (a.lse[row], b.lse[row]);
        let m = la.max(lb);
        if m == T::neg_infinity() {
            continue;
        }
        let wa = (la - m).exp();
        let wb = (lb - m).exp();
        let z = wa + wb;
        let (fa, fb) = (wa / z, wb / z);
        let base = row * dh;
        for j in 0..dh {
            out[base + j] = fa * a.out[base + j] + fb * b.out[base + j];
        }
        lse[row] = m + z.ln();
    }
    Ok(AttentionPartial { out, lse, heads: a.heads, len: a.len, d_head: dh })
}

/// Attention of `q` (`len × heads·d_head`, row-major) against head-major keys
/// and values (`kv_heads × keys × d_head`). With `causal`, row `i` sees keys
/// `0..=i` (queries and keys are the same positions). Grouped-query: head `h`
/// reads kv head `h / (heads / kv_heads)`.
///
/// When `probs` is given it receives the `heads × len × keys` attention weights.
#[allow(clippy::too_many_arguments)]
pub fn attend<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    keys: usize,
    heads: usize,
    kv_heads: usize,
    d_head: usize,
    causal: bool,
    mut probs: Option<&mut Vec<T>>,
) -> AttentionPartial<T> {
    assert_eq!(q.len(), len * heads * d_head, "query buffer");
    assert_eq!(k.len(), kv_heads * keys * d_head, "key buffer");
    assert_eq!(v.len(), kv_heads * keys * d_head, "value buffer");
    assert!(!causal || keys == len, "causal attention needs square scores");
    let group = heads / kv_heads;
    let scale: T = c(1.0 / (d_head as f64).sqrt());
    let mut part = AttentionPartial::empty(heads, len, d_head);
    if keys == 0 {
        return part;
    }
    if let Some(p) = probs.as_deref_mut() {
        p.clear();
        p.resize(heads * len * keys, T::zero());
    }
    let mut scores = vec![T::zero(); len * keys];
    for h in 0..heads {
        let g = h / group;
        let qh = MatRef::strided(&q[h * d_head..], len, d_head, heads * d_head);
        let kg = MatRef::new(&k[g * keys * d_head..(g + 1) * keys * d_head], keys, d_head);
        let vg = MatRef::new(&v[g * keys * d_head..(g + 1) * keys * d_head], keys, d_head);
        gemm(qh, kg.t(), MatMut::new(&mut scores, len, keys), false);
        for i in 0..len {
            let row = &mut scores[i * keys..(i + 1) * keys];
            row.iter_mut().for_each(|x| *x *= scale);
            if causal {
                row[i + 1..].iter_mut().for_each(|x| *x = T::neg_infinity());
            }
            part.lse[h * len + i] = softmax_row(row);
        }
        let oh = &mut part.out[h * len * d_head..(h + 1) * len * d_head];
        gemm(MatRef::new(&scores, len, keys), vg, MatMut::new(oh, len, d_head), false);
        if let Some(p) = probs.as_deref_mut() {
            p[h * len * keys..(h + 1) * len * keys].copy_from_slice(&scores);
        }
    }
    part
}

/// [`attend`] carried out in f64 whatever the model precision. The forward
/// pass merges these wide partials and rounds once, so a prefix-split pass
/// and a full pass differ only by that final rounding.
#[allow(clippy::too_many_arguments)]
pub fn attend_wide<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    keys: usize,
    heads: usize,
    kv_heads: usize,
    d_head: usize,
    causal: bool,
    probs: Option<&mut Vec<f64>>,
) -> AttentionPartial<f64> {
    let (q, k, v): (Vec<f64>, Vec<f64>, Vec<f64>) = (cast_vec(q), cast_vec(k), cast_vec(v));
    attend(&q, &k, &v, len, keys, heads, kv_heads, d_head, causal, probs)
}
