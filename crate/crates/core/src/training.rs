//! Soft-label fine-tuning: KL loss at the final position, hand-written
//! backpropagation, Adam with global-norm clipping, and a finite-difference
//! gradient check.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{assemble_prompt, truncate_description, GradedPair, JobItem, Query};
use crate::error::{Error, Result};
use crate::model::forward::{from_head_major, Trace};
use crate::model::{forward_prefill, forward_traced, ModelConfig, ParamGroup, ParamKind, TensorId, Weights};
use crate::scoring::{softmax2, EvalReport, RelevanceScore};
use crate::tensor::{c, gemm, silu, silu_grad, MatMut, MatRef, Real};
use crate::tokenizer::{Encoder, TokenId, Vocab};

/// Gradients share the parameter layout.
pub type Gradients<T> = Weights<T>;

/// One tokenized prompt and its teacher distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub tokens: Vec<TokenId>,
    pub p_star_yes: f64,
    pub p_star_no: f64,
}

/// `KL(target ‖ pred) = Σ t·ln(t/p)` over the yes/no pair.
pub fn kl_loss(pred: RelevanceScore, target: (f64, f64)) -> Result<f64> {
    let (ty, tn) = target;
    if !(pred.p_yes > 0.0 && pred.p_no > 0.0 && ty > 0.0 && tn > 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "KL needs strictly positive probabilities, got pred ({}, {}) target ({ty}, {tn})",
            pred.p_yes, pred.p_no
        )));
    }
    Ok(ty * (ty / pred.p_yes).ln() + tn * (tn / pred.p_no).ln())
}

fn yes_no<T: Real>(logits: &[T], vocab: &Vocab) -> (f64, f64) {
    let get = |i: TokenId| logits[i as usize].to_f64().unwrap_or(f64::NAN);
    (get(vocab.yes_id), get(vocab.no_id))
}

/// Loss of one example without gradients.
pub fn example_loss<T: Real>(w: &Weights<T>, vocab: &Vocab, ex: &TrainExample) -> Result<f64> {
    let out = forward_prefill(w, &ex.tokens, false)?;
    let (y, n) = yes_no(&out.logits, vocab);
    let (p_yes, p_no) = softmax2(y, n);
    kl_loss(RelevanceScore { p_yes, p_no }, (ex.p_star_yes, ex.p_star_no))
}

/// Backward through RMSNorm rows: accumulates the scale gradient into `dg`
/// and the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn rmsnorm_backward<T: Real>(x: &[T], inv: &[T], g: &[T], dy: &[T], rows: usize, d: usize, dg: &mut [T], dx: &mut [T]) {
    let dn: T = c(d as f64);
    let mut du = vec![T::zero(); d];
    for r in 0..rows {
        let (xr, dyr) = (&x[r * d..(r + 1) * d], &dy[r * d..(r + 1) * d]);
        let s = inv[r];
        let mut dot = T::zero();
        for j in 0..d {
            let u = xr[j] * s;
            dg[j] += dyr[j] * u;
            du[j] = dyr[j] * g[j];
            dot += du[j] * u;
        }
        let mean = dot / dn;
        for j in 0..d {
            dx[r * d + j] += s * (du[j] - xr[j] * s * mean);
        }
    }
}

/// Accumulate `scale · ∂loss/∂θ` for one example into `grads`; returns the loss.
pub fn accumulate_gradients<T: Real>(
    w: &Weights<T>,
    vocab: &Vocab,
    ex: &TrainExample,
    grads: &mut Gradients<T>,
    scale: f64,
) -> Result<f64> {
    let (logits, trace) = forward_traced(w, &ex.tokens)?;
    let (y, n) = yes_no(&logits, vocab);
    if !y.is_finite() || !n.is_finite() {
        return Err(Error::NonFinite("yes/no logits"));
    }
    let (p_yes, p_no) = softmax2(y, n);
    let loss = kl_loss(RelevanceScore { p_yes, p_no }, (ex.p_star_yes, ex.p_star_no))?;
    let dy: T = c((p_yes - ex.p_star_yes) * scale);
    backprop(w, vocab, &trace, dy, grads);
    Ok(loss)
}

/// Loss and gradient of one example.
pub fn backward<T: Real>(w: &Weights<T>, vocab: &Vocab, ex: &TrainExample) -> Result<(f64, Gradients<T>)> {
    let mut g = w.zeros_like();
    let loss = accumulate_gradients(w, vocab, ex, &mut g, 1.0)?;
    Ok((loss, g))
}

/// Propagate `∂L/∂z_yes = dy` (and `∂L/∂z_no = -dy`) back through the network.
fn backprop<T: Real>(w: &Weights<T>, vocab: &Vocab, tr: &Trace<T>, dy: T, grads: &mut Gradients<T>) {
    let cfg = &w.config;
    let s = tr.tokens.len();
    let (d, nh, nkv, dh, ff) = (cfg.d_model, cfg.n_heads, cfg.n_kv_heads, cfg.d_head(), cfg.d_ff);
    let kvd = nkv * dh;
    let vsz = cfg.vocab_size;
    let (yi, ni) = (vocab.yes_id as usize, vocab.no_id as usize);
    let dn = -dy;
    let scale: T = c(1.0 / (dh as f64).sqrt());

    let xn = &tr.final_normed;
    let mut dxn = vec![T::zero(); d];
    for j in 0..d {
        grads.head[j * vsz + yi] += xn[j] * dy;
        grads.head[j * vsz + ni] += xn[j] * dn;
        dxn[j] = w.head[j * vsz + yi] * dy + w.head[j * vsz + ni] * dn;
    }
    let mut dx = vec![T::zero(); s * d];
    rmsnorm_backward(
        &tr.x_last,
        &[tr.final_inv_rms],
        &w.final_norm,
        &dxn,
        1,
        d,
        &mut grads.final_norm,
        &mut dx[(s - 1) * d..],
    );

    let group = nh / nkv;
    for li in (0..cfg.n_layers).rev() {
        let lt = &tr.layers[li];
        let lw = &w.layers[li];
        let lg = &mut grads.layers[li];

        // MLP
        gemm(MatRef::new(&lt.act, s, ff).t(), MatRef::new(&dx, s, d), MatMut::new(&mut lg.w_down, ff, d), true);
        let mut dact = vec![T::zero(); s * ff];
        gemm(MatRef::new(&dx, s, d), MatRef::new(&lw.w_down, ff, d).t(), MatMut::new(&mut dact, s, ff), false);
        let mut dup = vec![T::zero(); s * ff];
        let mut dgate = vec![T::zero(); s * ff];
        for i in 0..s * ff {
            dup[i] = dact[i] * silu(lt.gate[i]);
            dgate[i] = dact[i] * lt.up[i] * silu_grad(lt.gate[i]);
        }
        gemm(MatRef::new(&lt.h2, s, d).t(), MatRef::new(&dup, s, ff), MatMut::new(&mut lg.w_up, d, ff), true);
        gemm(MatRef::new(&lt.h2, s, d).t(), MatRef::new(&dgate, s, ff), MatMut::new(&mut lg.w_gate, d, ff), true);
        let mut dh2 = vec![T::zero(); s * d];
        gemm(MatRef::new(&dup, s, ff), MatRef::new(&lw.w_up, d, ff).t(), MatMut::new(&mut dh2, s, d), false);
        gemm(MatRef::new(&dgate, s, ff), MatRef::new(&lw.w_gate, d, ff).t(), MatMut::new(&mut dh2, s, d), true);
        let mut dx_mid = dx;
        rmsnorm_backward(&lt.x_mid, &lt.mlp_inv_rms, &lw.mlp_norm, &dh2, s, d, &mut lg.mlp_norm, &mut dx_mid);

        // attention output projection
        gemm(MatRef::new(&lt.attn, s, d).t(), MatRef::new(&dx_mid, s, d), MatMut::new(&mut lg.wo, d, d), true);
        let mut dattn = vec![T::zero(); s * d];
        gemm(MatRef::new(&dx_mid, s, d), MatRef::new(&lw.wo, d, d).t(), MatMut::new(&mut dattn, s, d), false);

        // softmax attention, per head
        let mut dq = vec![T::zero(); s * d];
        let mut dk_hm = vec![T::zero(); nkv * s * dh];
        let mut dv_hm = vec![T::zero(); nkv * s * dh];
        let mut dp = vec![T::zero(); s * s];
        for h in 0..nh {
            let g = h / group;
            let kv_block = g * s * dh..(g + 1) * s * dh;
            let p = MatRef::new(&lt.probs[h * s * s..(h + 1) * s * s], s, s);
            let d_out = MatRef::strided(&dattn[h * dh..], s, dh, d);
            let vg = MatRef::new(&lt.v[kv_block.clone()], s, dh);
            let kg = MatRef::new(&lt.k[kv_block.clone()], s, dh);
            gemm(d_out, vg.t(), MatMut::new(&mut dp, s, s), false);
            gemm(p.t(), d_out, MatMut::new(&mut dv_hm[kv_block.clone()], s, dh), true);
            for i in 0..s {
                let prow = &p.data[i * s..(i + 1) * s];
                let drow = &mut dp[i * s..(i + 1) * s];
                let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..s {
                    drow[j] = prow[j] * (drow[j] - dot) * scale;
                }
            }
            let ds = MatRef::new(&dp, s, s);
            gemm(ds, kg, MatMut::strided(&mut dq[h * dh..], s, dh, d), false);
            let qh = MatRef::strided(&lt.q[h * dh..], s, dh, d);
            gemm(ds.t(), qh, MatMut::new(&mut dk_hm[kv_block], s, dh), true);
        }
        let mut dk = from_head_major(&dk_hm, s, nkv, dh);
        let dv = from_head_major(&dv_hm, s, nkv, dh);
        tr.rope.apply(&mut dq, nh, true);
        tr.rope.apply(&mut dk, nkv, true);

        let h1 = MatRef::new(&lt.h1, s, d);
        gemm(h1.t(), MatRef::new(&dq, s, d), MatMut::new(&mut lg.wq, d, d), true);
        gemm(h1.t(), MatRef::new(&dk, s, kvd), MatMut::new(&mut lg.wk, d, kvd), true);
        gemm(h1.t(), MatRef::new(&dv, s, kvd), MatMut::new(&mut lg.wv, d, kvd), true);
        let mut dh1 = vec![T::zero(); s * d];
        gemm(MatRef::new(&dq, s, d), MatRef::new(&lw.wq, d, d).t(), MatMut::new(&mut dh1, s, d), false);
        gemm(MatRef::new(&dk, s, kvd), MatRef::new(&lw.wk, d, kvd).t(), MatMut::new(&mut dh1, s, d), true);
        gemm(MatRef::new(&dv, s, kvd), MatRef::new(&lw.wv, d, kvd).t(), MatMut::new(&mut dh1, s, d), true);
        let mut dx_in = dx_mid;
        rmsnorm_backward(&lt.x_in, &lt.attn_inv_rms, &lw.attn_norm, &dh1, s, d, &mut lg.attn_norm, &mut dx_in);
        dx = dx_in;
    }

    for (p, &t) in tr.tokens.iter().enumerate() {
        let row = &mut grads.embed[t as usize * d..(t as usize + 1) * d];
        for (a, &b) in row.iter_mut().zip(&dx[p * d..(p + 1) * d]) {
            *a += b;
        }
    }
}

/// Global L2 norm of a gradient set, accumulated in f64.
pub fn grad_norm<T: Real>(g: &Gradients<T>) -> f64 {
    let mut acc = 0.0f64;
    g.visit(|_, t| {
        acc += t.iter().map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>();
    });
    acc.sqrt()
}

/// Rescale `g` so its global norm is at most `max_norm`. Returns the norm
/// before clipping. A non-positive or infinite bound disables clipping.
pub fn clip_grad_norm<T: Real>(g: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(g);
    if max_norm > 0.0 && max_norm.is_finite() && norm > max_norm {
        let f: T = c(max_norm / norm);
        g.visit_mut(|_, t| t.iter_mut().for_each(|x| *x *= f));
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

/// Adam moments mirroring the parameter layout.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub m: Weights<T>,
    pub v: Weights<T>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(w: &Weights<T>, config: AdamConfig) -> Self {
        Self { m: w.zeros_like(), v: w.zeros_like(), step: 0, config }
    }

    /// One Adam update with bias correction.
    pub fn step(&mut self, w: &mut Weights<T>, g: &Gradients<T>) {
        self.step += 1;
        let cfg = &self.config;
        let t = self.step as i32;
        let bc1: T = c(1.0 - cfg.beta1.powi(t));
        let bc2: T = c(1.0 - cfg.beta2.powi(t));
        let (b1, b2, lr, eps): (T, T, T, T) = (c(cfg.beta1), c(cfg.beta2), c(cfg.lr), c(cfg.eps));
        let one = T::one();
        for (((_, wt), (_, mt)), ((_, vt), (_, gt))) in w
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut().into_iter().zip(g.tensors()))
        {
            for i in 0..wt.len() {
                let gi = gt[i];
                if gi == T::zero() && mt[i] == T::zero() && vt[i] == T::zero() {
                    continue;
                }
                mt[i] = b1 * mt[i] + (one - b1) * gi;
                vt[i] = b2 * vt[i] + (one - b2) * gi * gi;
                let mhat = mt[i] / bc1;
                let vhat = vt[i] / bc2;
                wt[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 3, batch_size: 8, seed: 0, optimizer: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean loss over each epoch, measured on each example before its update.
    pub epoch_losses: Vec<f64>,
    pub loss_non_increasing: bool,
    pub steps: u64,
    pub examples: usize,
}

/// Mini-batch Adam over `data` for `cfg.epochs` epochs, reshuffled each
/// epoch from `cfg.seed`. Aborts on a non-finite loss.
pub fn sft<T: Real>(w: &mut Weights<T>, vocab: &Vocab, data: &[TrainExample], cfg: &TrainConfig) -> Result<SftReport> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let bs = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(w, cfg.optimizer.clone());
    let mut grads = w.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(bs).enumerate() {
            grads.visit_mut(|_, t| t.iter_mut().for_each(|x| *x = T::zero()));
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss = match accumulate_gradients(w, vocab, &data[i], &mut grads, scale) {
                    Err(Error::NonFinite(_)) => f64::NAN,
                    r => r?,
                };
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step: b, loss });
                }
                total += loss;
            }
            let norm = clip_grad_norm(&mut grads, cfg.optimizer.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, step: b, loss: norm });
            }
            opt.step(w, &grads);
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    let loss_non_increasing = epoch_losses.windows(2).all(|p| p[1] <= p[0]);
    if !loss_non_increasing {
        log::warn!("training loss increased between epochs: {epoch_losses:?}");
    }
    Ok(SftReport { epoch_losses, loss_non_increasing, steps: opt.step, examples: data.len() })
}

/// Tokenize graded pairs into training examples under `token_budget`.
pub fn build_examples(
    queries: &[Query],
    items: &[JobItem],
    pairs: &[GradedPair],
    vocab: &Vocab,
    token_budget: usize,
) -> Result<Vec<TrainExample>> {
    let qmap: BTreeMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let imap: BTreeMap<&str, &JobItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let enc = Encoder::new(vocab);
    pairs
        .iter()
        .map(|p| {
            let q = qmap.get(p.query_id.as_str()).ok_or_else(|| Error::InvalidArgument(format!("unknown query {}", p.query_id)))?;
            let it = imap.get(p.item_id.as_str()).ok_or_else(|| Error::InvalidArgument(format!("unknown item {}", p.item_id)))?;
            let seg = truncate_description(&assemble_prompt(q, it), token_budget, &enc)?;
            Ok(TrainExample { tokens: enc.encode(&seg.full()), p_star_yes: p.p_star_yes, p_star_no: p.p_star_no })
        })
        .collect()
}

/// Split pairs by query: a seeded `eval_fraction` of the queries go to eval.
pub fn split_by_query(pairs: &[GradedPair], eval_fraction: f64, seed: u64) -> (Vec<GradedPair>, Vec<GradedPair>) {
    let mut ids: Vec<&str> = pairs.iter().map(|p| p.query_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_eval = ((ids.len() as f64) * eval_fraction).round() as usize;
    let eval: BTreeSet<&str> = ids.into_iter().take(n_eval).collect();
    pairs.iter().cloned().partition(|p| !eval.contains(p.query_id.as_str()))
}

/// Headline numbers of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_ndcg_at_10: f64,
    pub poor_match_rate_at_10: f64,
    pub count: usize,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self { mean_ndcg_at_10: r.mean_ndcg_at_10, poor_match_rate_at_10: r.poor_match_rate_at_10, count: r.count }
    }
}

/// Everything needed to reproduce and audit a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub token_budget: usize,
    pub n_train_examples: usize,
    pub epoch_losses: Vec<f64>,
    pub loss_non_increasing: bool,
    pub eval_before: Option<EvalSummary>,
    pub eval_after: Option<EvalSummary>,
    pub checkpoint: Option<String>,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub tensor: String,
    pub layer: Option<usize>,
    pub index: usize,
    pub group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub samples: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub entries: Vec<GradcheckEntry>,
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn failing_groups(&self) -> Vec<ParamGroup> {
        self.groups.iter().filter(|g| !g.pass).map(|g| g.group).collect()
    }
}

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Entries whose analytic gradient is smaller than this are not sampled:
/// their central difference is dominated by rounding noise.
pub const GRADCHECK_MIN_GRAD: f64 = 1e-4;

/// Compare analytic gradients of `ex` against central differences on
/// `n_params` entries, stratified round-robin over every tensor kind.
pub fn gradcheck(w: &Weights<f64>, vocab: &Vocab, ex: &TrainExample, n_params: usize, tolerance: f64, seed: u64) -> Result<GradcheckReport> {
    let (_, g) = backward(w, vocab, ex)?;
    gradcheck_against(w, vocab, ex, &g, n_params, tolerance, seed)
}

/// As [`gradcheck`], but checks a caller-supplied gradient (fault injection).
pub fn gradcheck_against(
    w: &Weights<f64>,
    vocab: &Vocab,
    ex: &TrainExample,
    analytic: &Gradients<f64>,
    n_params: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = w.clone();
    let h = GRADCHECK_STEP;
    let mut kinds = ParamKind::ALL.to_vec();
    kinds.shuffle(&mut rng);
    let mut entries = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let kind = kinds[i % kinds.len()];
        let layer = kind.per_layer().then(|| rng.random_range(0..w.config.n_layers));
        let id = TensorId { kind, layer };
        let g = analytic.tensor(id);
        let candidates: Vec<usize> = (0..g.len()).filter(|&j| g[j].abs() >= GRADCHECK_MIN_GRAD).collect();
        let index = if candidates.is_empty() {
            (0..g.len()).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs())).unwrap_or(0)
        } else {
            candidates[rng.random_range(0..candidates.len())]
        };
        let orig = probe.tensor(id)[index];
        probe.tensor_mut(id)[index] = orig + h;
        let up = example_loss(&probe, vocab, ex)?;
        probe.tensor_mut(id)[index] = orig - h;
        let down = example_loss(&probe, vocab, ex)?;
        probe.tensor_mut(id)[index] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = g[index];
        let denom = a.abs().max(numeric.abs());
        let rel_error = if denom == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        let pass = tolerance.is_infinite() || rel_error <= tolerance;
        entries.push(GradcheckEntry {
            tensor: kind.name().to_string(),
            layer,
            index,
            group: kind.group(),
            analytic: a,
            numeric,
            rel_error,
            pass,
        });
    }
    let mut by_group: BTreeMap<ParamGroup, (usize, f64, bool)> = BTreeMap::new();
    for e in &entries {
        let slot = by_group.entry(e.group).or_insert((0, 0.0, true));
        slot.0 += 1;
        slot.1 = slot.1.max(e.rel_error);
        slot.2 &= e.pass;
    }
    let groups: Vec<GroupReport> = by_group
        .into_iter()
        .map(|(group, (samples, max_rel_error, pass))| GroupReport { group, samples, max_rel_error, pass })
        .collect();
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    let pass = entries.iter().all(|e| e.pass);
    Ok(GradcheckReport { tolerance, step: h, entries, groups, max_rel_error, pass })
}
