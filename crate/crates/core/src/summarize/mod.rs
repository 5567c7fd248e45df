//! Context compression: the summarization reward with its two length
//! penalties, deterministic compressors standing in for a trained
//! summarizer, group-relative advantages, and a harness measuring the
//! compression/quality tradeoff of a compressor against a scorer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::corpus::JobItem;
use crate::error::{Error, Result};
use crate::model::Weights;
use crate::scoring::{rank_items, relevance_scores, EvalReport, EvalSet, RankedItem, RelevanceScore};
use crate::tensor::Real;
use crate::tokenizer::{count_tokens, token_spans, words};
use crate::training::kl_loss;

static STOP_LIST: &str = include_str!("stopwords.txt");

static STOP_WORDS: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| STOP_LIST.lines().map(str::trim).filter(|l| !l.is_empty()).collect());

/// The committed English stop-word list.
pub fn stop_words() -> &'static HashSet<&'static str> {
    &STOP_WORDS
}

fn is_stop(word: &str) -> bool {
    STOP_WORDS.contains(word.to_lowercase().as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    /// Penalty weight.
    pub w: f64,
    /// Lengths below `m` tokens are never penalized by P1.
    pub m: usize,
    /// Largest acceptable compression ratio for P1.
    pub tau: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self { w: 0.4, m: 256, tau: 1.0 / 3.0 }
    }
}

impl PenaltyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidArgument(format!("penalty weight {} must be finite and ≥ 0", self.w)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        Ok(())
    }
}

fn ratio(l_o: usize, l_c: usize) -> Result<f64> {
    if l_o == 0 {
        return Err(Error::InvalidArgument("original length must be at least 1".into()));
    }
    Ok(l_c as f64 / l_o as f64)
}

/// Zero for short originals or ratios at or below `tau`; above it the
/// penalty grows quadratically to `-w` at `r = 1`.
pub fn penalty_p1(l_o: usize, l_c: usize, p: &PenaltyParams) -> Result<f64> {
    p.validate()?;
    let r = ratio(l_o, l_c)?;
    if l_o < p.m || r <= p.tau {
        return Ok(0.0);
    }
    let x = (r - p.tau) / (1.0 - p.tau);
    Ok(-p.w * x * x)
}

/// `-w·r²` at every length.
pub fn penalty_p2(l_o: usize, l_c: usize, p: &PenaltyParams) -> Result<f64> {
    p.validate()?;
    let r = ratio(l_o, l_c)?;
    Ok(-p.w * r * r)
}

/// Ratio above which P1 is no longer smaller in magnitude than P2 at equal
/// weight. Solving `(r−τ)/(1−τ) = r` gives `r = 1` for every τ, so on
/// `(τ, 1)` P1 is always the gentler penalty.
pub fn p1_p2_crossover(tau: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0);
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    None,
    P1,
    P2,
}

/// The length-penalty slot of the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    #[serde(flatten)]
    pub params: PenaltyParams,
}

impl Default for Penalty {
    fn default() -> Self {
        Self { kind: PenaltyKind::P2, params: PenaltyParams::default() }
    }
}

impl Penalty {
    pub fn value(&self, l_o: usize, l_c: usize) -> Result<f64> {
        match self.kind {
            PenaltyKind::None => {
                ratio(l_o, l_c)?;
                Ok(0.0)
            }
            PenaltyKind::P1 => penalty_p1(l_o, l_c, &self.params),
            PenaltyKind::P2 => penalty_p2(l_o, l_c, &self.params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// `-KL(p_sum ‖ p_raw)`
    pub kl_term: f64,
    pub penalty_term: f64,
    pub total: f64,
    pub l_o: usize,
    pub l_c: usize,
    pub ratio: f64,
}

fn check_distribution(p: RelevanceScore, what: &str) -> Result<()> {
    let ok = p.p_yes > 0.0 && p.p_no > 0.0 && p.p_yes.is_finite() && p.p_no.is_finite() && (p.p_yes + p.p_no - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("{what} ({}, {}) is not a strictly positive distribution", p.p_yes, p.p_no)))
    }
}

/// `-KL(p_sum ‖ p_raw) + P(L_o, L_c)`.
pub fn reward(p_sum: RelevanceScore, p_raw: RelevanceScore, l_o: usize, l_c: usize, penalty: &Penalty) -> Result<RewardBreakdown> {
    check_distribution(p_sum, "summary distribution")?;
    check_distribution(p_raw, "raw distribution")?;
    let kl = kl_loss(p_raw, (p_sum.p_yes, p_sum.p_no))?.max(0.0);
    let pen = penalty.value(l_o, l_c)?;
    let kl_term = -kl;
    Ok(RewardBreakdown { kl_term, penalty_term: pen, total: kl_term + pen, l_o, l_c, ratio: ratio(l_o, l_c)? })
}

/// Group-relative advantages `(r_i − mean) / max(std, 1e-8)` with the
/// population standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!("advantage group needs at least 2 rewards, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Drop every word on the stop list together with the whitespace after it.
pub fn compress_stopwords(description: &str) -> String {
    let mut out = String::with_capacity(description.len());
    let mut from = 0;
    for span in token_spans(description) {
        if is_stop(&description[span.clone()]) {
            out.push_str(&description[from..span.start]);
            let rest = &description[span.end..];
            from = span.end + (rest.len() - rest.trim_start().len());
        }
    }
    out.push_str(&description[from..]);
    out.trim().to_string()
}

/// The text up to and including the `n`-th token.
fn first_tokens(text: &str, n: usize) -> String {
    if n == 0 {
        return String::new();
    }
    let spans = token_spans(text);
    match spans.get(n - 1) {
        Some(s) if n < spans.len() => text[..s.end].to_string(),
        _ => text.to_string(),
    }
}

/// Keep the first `⌈ratio·L_o⌉` tokens.
pub fn compress_truncate(description: &str, target_ratio: f64) -> Result<String> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("truncation ratio {target_ratio} outside (0, 1]")));
    }
    let l_o = count_tokens(description);
    // guard against 0.3·10 = 3.0000000000000004 rounding up
    let keep = (target_ratio * l_o as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(first_tokens(description, keep))
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?' | ':') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Keep the most salient sentences, in their original order, within
/// `token_budget` tokens. A sentence's salience is the mean in-document
/// frequency of its content words.
pub fn compress_extractive(description: &str, token_budget: usize) -> Result<String> {
    if token_budget == 0 {
        return Err(Error::InvalidArgument("extractive budget must be at least 1".into()));
    }
    if count_tokens(description) <= token_budget {
        return Ok(description.to_string());
    }
    let sents = sentences(description);
    let mut tf: HashMap<String, usize> = HashMap::new();
    for w in words(description) {
        if !STOP_WORDS.contains(w.as_str()) {
            *tf.entry(w).or_default() += 1;
        }
    }
    let mut scored: Vec<(f64, usize, usize)> = sents
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ws = words(s);
            let content: Vec<&String> = ws.iter().filter(|w| !STOP_WORDS.contains(w.as_str())).collect();
            let score = if content.is_empty() {
                0.0
            } else {
                content.iter().map(|w| tf[w.as_str()] as f64).sum::<f64>() / content.len() as f64
            };
            (score, i, count_tokens(s))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = token_budget;
    let mut keep = Vec::new();
    for &(_, i, n) in &scored {
        if n > 0 && n <= left {
            keep.push(i);
            left -= n;
        }
    }
    if keep.is_empty() {
        let top = scored.first().map(|s| s.1).unwrap_or(0);
        return Ok(first_tokens(sents.get(top).copied().unwrap_or(""), token_budget));
    }
    keep.sort_unstable();
    Ok(keep.iter().map(|&i| sents[i]).collect::<Vec<_>>().join(" "))
}

/// A deterministic description rewriter.
pub trait Compressor {
    fn name(&self) -> String;
    fn compress(&self, description: &str) -> Result<String>;
}

pub struct Identity;
pub struct DropDescription;
pub struct StopWords;
pub struct Truncate(pub f64);
pub struct Extractive(pub usize);

impl Compressor for Identity {
    fn name(&self) -> String {
        "identity".into()
    }
    fn compress(&self, d: &str) -> Result<String> {
        Ok(d.to_string())
    }
}

impl Compressor for DropDescription {
    fn name(&self) -> String {
        "no_description".into()
    }
    fn compress(&self, _: &str) -> Result<String> {
        Ok(String::new())
    }
}

impl Compressor for StopWords {
    fn name(&self) -> String {
        "stop_words".into()
    }
    fn compress(&self, d: &str) -> Result<String> {
        Ok(compress_stopwords(d))
    }
}

impl Compressor for Truncate {
    fn name(&self) -> String {
        format!("truncate_{:.3}", self.0)
    }
    fn compress(&self, d: &str) -> Result<String> {
        compress_truncate(d, self.0)
    }
}

impl Compressor for Extractive {
    fn name(&self) -> String {
        format!("extractive_{}", self.0)
    }
    fn compress(&self, d: &str) -> Result<String> {
        compress_extractive(d, self.0)
    }
}

/// One compressor's row of the tradeoff table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub name: String,
    pub penalty: PenaltyKind,
    pub w: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    /// `100·(mean r − 1)`: −100 means nothing kept.
    pub compression_pct: f64,
    /// Same, from the 50th/99th percentile of per-item ratios.
    pub compression_p50_pct: f64,
    pub compression_p99_pct: f64,
    /// `100·(pct(L_c)/pct(L_o) − 1)` from length percentiles.
    pub length_p50_pct: f64,
    pub length_p99_pct: f64,
    pub ndcg10_raw: f64,
    pub ndcg10_compressed: f64,
    pub delta_ndcg10: f64,
    /// `delta_ndcg10` relative to the raw NDCG, in percent.
    pub delta_ndcg10_pct: f64,
    pub n_items: usize,
    pub n_pairs: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Score every pair with raw and compressed descriptions through the same
/// prompt and truncation path and compare rankings and rewards.
pub fn evaluate_compressor<T: Real>(
    w: &Weights<T>,
    eval: &EvalSet<'_>,
    compressor: &dyn Compressor,
    penalty: &Penalty,
) -> Result<TradeoffRow> {
    let by_id: HashMap<&str, &JobItem> = eval.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut compressed: BTreeMap<&str, (JobItem, usize, usize)> = BTreeMap::new();
    for p in eval.pairs {
        if compressed.contains_key(p.item_id.as_str()) {
            continue;
        }
        let item = by_id.get(p.item_id.as_str()).ok_or_else(|| Error::InvalidArgument(format!("unknown item {}", p.item_id)))?;
        let text = compressor.compress(&item.description)?;
        let (l_o, l_c) = (count_tokens(&item.description), count_tokens(&text));
        let mut c = (*item).clone();
        c.description = text;
        compressed.insert(p.item_id.as_str(), (c, l_o, l_c));
    }
    let queries: HashMap<&str, _> = eval.queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut groups: BTreeMap<&str, Vec<&crate::corpus::GradedPair>> = BTreeMap::new();
    for p in eval.pairs {
        groups.entry(p.query_id.as_str()).or_default().push(p);
    }

    let (mut raw_rank, mut comp_rank) = (Vec::new(), Vec::new());
    let (mut rewards, mut kls) = (Vec::new(), Vec::new());
    for (qid, ps) in groups {
        let q = queries.get(qid).ok_or_else(|| Error::InvalidArgument(format!("unknown query {qid}")))?;
        let raw_items: Vec<&JobItem> = ps.iter().map(|p| by_id[p.item_id.as_str()]).collect();
        let comp_items: Vec<&JobItem> = ps.iter().map(|p| &compressed[p.item_id.as_str()].0).collect();
        let raw = relevance_scores(w, eval.vocab, q, &raw_items, eval.token_budget)?;
        let comp = relevance_scores(w, eval.vocab, q, &comp_items, eval.token_budget)?;
        let mut rr = Vec::with_capacity(ps.len());
        let mut cr = Vec::with_capacity(ps.len());
        for ((p, r), c) in ps.iter().zip(&raw).zip(&comp) {
            let (_, l_o, l_c) = compressed[p.item_id.as_str()];
            let rw = reward(*c, *r, l_o, l_c, penalty)?;
            rewards.push(rw.total);
            kls.push(-rw.kl_term);
            rr.push(RankedItem { item_id: p.item_id.clone(), p_yes: r.p_yes, grade: Some(p.grade) });
            cr.push(RankedItem { item_id: p.item_id.clone(), p_yes: c.p_yes, grade: Some(p.grade) });
        }
        raw_rank.push((qid.to_string(), rank_items(rr)));
        comp_rank.push((qid.to_string(), rank_items(cr)));
    }
    if rewards.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let raw_ndcg = EvalReport::from_rankings(&raw_rank).mean_ndcg_at_10;
    let comp_ndcg = EvalReport::from_rankings(&comp_rank).mean_ndcg_at_10;

    let items: Vec<(usize, usize)> = compressed.values().map(|&(_, o, c)| (o, c)).collect();
    let ratios = sorted(items.iter().filter(|(o, _)| *o > 0).map(|&(o, c)| c as f64 / o as f64).collect());
    let lo = sorted(items.iter().map(|&(o, _)| o as f64).collect());
    let lc = sorted(items.iter().map(|&(_, c)| c as f64).collect());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let len_pct = |q: f64| 100.0 * (percentile(&lc, q) / percentile(&lo, q) - 1.0);
    let delta = comp_ndcg - raw_ndcg;
    Ok(TradeoffRow {
        name: compressor.name(),
        penalty: penalty.kind,
        w: penalty.params.w,
        mean_reward: mean(&rewards),
        mean_kl: mean(&kls),
        compression_pct: 100.0 * (mean(&ratios) - 1.0),
        compression_p50_pct: 100.0 * (percentile(&ratios, 0.5) - 1.0),
        compression_p99_pct: 100.0 * (percentile(&ratios, 0.99) - 1.0),
        length_p50_pct: len_pct(0.5),
        length_p99_pct: len_pct(0.99),
        ndcg10_raw: raw_ndcg,
        ndcg10_compressed: comp_ndcg,
        delta_ndcg10: delta,
        delta_ndcg10_pct: if raw_ndcg > 0.0 { 100.0 * delta / raw_ndcg } else { 0.0 },
        n_items: items.len(),
        n_pairs: rewards.len(),
    })
}

/// Truncation rows at each ratio, ordered from least to most compression.
pub fn truncation_curve<T: Real>(w: &Weights<T>, eval: &EvalSet<'_>, ratios: &[f64], penalty: &Penalty) -> Result<Vec<TradeoffRow>> {
    let mut rs = ratios.to_vec();
    rs.sort_by(|a, b| b.total_cmp(a));
    rs.iter().map(|&r| evaluate_compressor(w, eval, &Truncate(r), penalty)).collect()
}

/// Plain-text table of tradeoff rows.
pub fn render_tradeoff_table(rows: &[TradeoffRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<18} {:>7} {:>6} {:>11} {:>12} {:>10} {:>9}", "approach", "penalty", "w", "mean reward", "compression", "NDCG@10 Δ", "Δ %");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:>7} {:>6.2} {:>11.5} {:>11.1}% {:>+10.4} {:>+8.2}%",
            r.name,
            format!("{:?}", r.penalty).to_lowercase(),
            r.w,
            r.mean_reward,
            r.compression_pct,
            r.delta_ndcg10,
            r.delta_ndcg10_pct
        );
    }
    s
}
