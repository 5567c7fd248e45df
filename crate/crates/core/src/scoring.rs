//! Relevance probabilities from yes/no logits, ranking, and ranking metrics.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{assemble_prompt, truncate_description, GradedPair, JobItem, Query};
use crate::error::{Error, Result};
use crate::model::Weights;
use crate::prefixcache::{score_shared_batch, split_at};
use crate::tensor::Real;
use crate::tokenizer::{Encoder, TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScore {
    pub p_yes: f64,
    pub p_no: f64,
}

/// Two-way softmax over `(a, b)`, computed as a sigmoid of the gap.
/// Swapping the arguments swaps the outputs exactly.
pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let gap = a - b;
    let e = (-gap.abs()).exp();
    let (hi, lo) = (1.0 / (1.0 + e), e / (1.0 + e));
    if gap >= 0.0 {
        (hi, lo)
    } else {
        (lo, hi)
    }
}

pub fn relevance_score<T: Real>(logits: &[T], vocab: &Vocab) -> Result<RelevanceScore> {
    let get = |id: TokenId| {
        logits
            .get(id as usize)
            .and_then(|x| x.to_f64())
            .ok_or_else(|| Error::Shape(format!("logit vector of {} lacks id {id}", logits.len())))
    };
    let (y, n) = (get(vocab.yes_id)?, get(vocab.no_id)?);
    if !y.is_finite() || !n.is_finite() {
        return Err(Error::NonFinite("yes/no logits"));
    }
    let (p_yes, p_no) = softmax2(y, n);
    Ok(RelevanceScore { p_yes, p_no })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub p_yes: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
}

/// Items by descending `p_yes`, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn grades(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.grade.unwrap_or(0)).collect()
    }
}

pub fn rank_items(mut items: Vec<RankedItem>) -> RankedList {
    items.sort_by(|a, b| {
        b.p_yes.partial_cmp(&a.p_yes).unwrap_or(Ordering::Equal).then_with(|| a.item_id.cmp(&b.item_id))
    });
    RankedList { items }
}

/// NDCG@k with linear gain; the ideal ordering is the same grades sorted
/// descending. Zero when the ideal DCG is zero.
pub fn ndcg_at_k(ranked_grades: &[u8], k: usize) -> f64 {
    let dcg = |g: &[u8]| -> f64 {
        g.iter().take(k).enumerate().map(|(i, &x)| x as f64 / ((i + 2) as f64).log2()).sum()
    };
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(ranked_grades) / idcg
}

/// Fraction of the top-k positions holding a grade-0 item. Positions past
/// the end of a short list are not counted.
pub fn poor_match_rate_at_k(ranked_grades: &[u8], k: usize) -> f64 {
    let top = &ranked_grades[..k.min(ranked_grades.len())];
    if top.is_empty() {
        return 0.0;
    }
    top.iter().filter(|&&g| g == 0).count() as f64 / top.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub ndcg_at_10: f64,
    pub poor_match_rate_at_10: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryEval>,
    pub mean_ndcg_at_10: f64,
    pub poor_match_rate_at_10: f64,
    pub count: usize,
}

impl EvalReport {
    pub fn from_rankings(rankings: &[(String, RankedList)]) -> Self {
        let per_query: Vec<QueryEval> = rankings
            .iter()
            .map(|(q, r)| {
                let g = r.grades();
                QueryEval {
                    query_id: q.clone(),
                    ndcg_at_10: ndcg_at_k(&g, 10),
                    poor_match_rate_at_10: poor_match_rate_at_k(&g, 10),
                    n_items: g.len(),
                }
            })
            .collect();
        let n = per_query.len().max(1) as f64;
        Self {
            mean_ndcg_at_10: per_query.iter().map(|q| q.ndcg_at_10).sum::<f64>() / n,
            poor_match_rate_at_10: per_query.iter().map(|q| q.poor_match_rate_at_10).sum::<f64>() / n,
            count: per_query.len(),
            per_query,
        }
    }
}

/// Tokenized prompts of one request and the length of their shared
/// system+query prefix.
#[derive(Debug, Clone)]
pub struct EncodedRequest {
    pub prompts: Vec<Vec<TokenId>>,
    pub prefix_len: usize,
}

/// Assemble, truncate to `token_budget` and tokenize every prompt for one query.
pub fn encode_request(
    query: &Query,
    items: &[&JobItem],
    token_budget: usize,
    encoder: &Encoder<'_>,
) -> Result<EncodedRequest> {
    let mut prompts = Vec::with_capacity(items.len());
    let mut prefix_len = 0;
    for item in items {
        let seg = truncate_description(&assemble_prompt(query, item), token_budget, encoder)?;
        prefix_len = encoder.count(&seg.shared_prefix());
        prompts.push(encoder.encode(&seg.full()));
    }
    Ok(EncodedRequest { prompts, prefix_len })
}

/// Yes/no distribution of each item for `query`, prefilling the shared
/// prefix once.
pub fn relevance_scores<T: Real>(
    w: &Weights<T>,
    vocab: &Vocab,
    query: &Query,
    items: &[&JobItem],
    token_budget: usize,
) -> Result<Vec<RelevanceScore>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let encoder = Encoder::new(vocab);
    let req = encode_request(query, items, token_budget, &encoder)?;
    let mut batch = split_at::<T>(&req.prompts, req.prefix_len)?;
    score_shared_batch(w, &mut batch)?.iter().map(|l| relevance_score(l, vocab)).collect()
}

/// `p_yes` of each item for `query`.
pub fn score_items<T: Real>(
    w: &Weights<T>,
    vocab: &Vocab,
    query: &Query,
    items: &[&JobItem],
    token_budget: usize,
) -> Result<Vec<f64>> {
    Ok(relevance_scores(w, vocab, query, items, token_budget)?.into_iter().map(|s| s.p_yes).collect())
}

/// Score every graded pair, rank per query, and compute the metrics.
pub fn evaluate<T: Real>(
    w: &Weights<T>,
    vocab: &Vocab,
    queries: &[Query],
    items: &[JobItem],
    pairs: &[GradedPair],
    token_budget: usize,
) -> Result<EvalReport> {
    let qmap: BTreeMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let imap: BTreeMap<&str, &JobItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut by_query: BTreeMap<&str, Vec<&GradedPair>> = BTreeMap::new();
    for p in pairs {
        by_query.entry(p.query_id.as_str()).or_default().push(p);
    }
    let mut rankings = Vec::with_capacity(by_query.len());
    for (qid, ps) in by_query {
        let q = qmap.get(qid).ok_or_else(|| Error::InvalidArgument(format!("unknown query {qid}")))?;
        let its: Vec<&JobItem> = ps
            .iter()
            .map(|p| imap.get(p.item_id.as_str()).copied().ok_or_else(|| Error::InvalidArgument(format!("unknown item {}", p.item_id))))
            .collect::<Result<_>>()?;
        let scores = score_items(w, vocab, q, &its, token_budget)?;
        let ranked = rank_items(
            ps.iter()
                .zip(scores)
                .map(|(p, s)| RankedItem { item_id: p.item_id.clone(), p_yes: s, grade: Some(p.grade) })
                .collect(),
        );
        rankings.push((qid.to_string(), ranked));
    }
    Ok(EvalReport::from_rankings(&rankings))
}

/// Queries, items and graded pairs used to compute NDCG@10.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub vocab: &'a Vocab,
    pub queries: &'a [Query],
    pub items: &'a [JobItem],
    pub pairs: &'a [GradedPair],
    pub token_budget: usize,
}

impl EvalSet<'_> {
    pub fn report<T: Real>(&self, w: &Weights<T>) -> Result<EvalReport> {
        evaluate(w, self.vocab, self.queries, self.items, self.pairs, self.token_budget)
    }

    pub fn ndcg<T: Real>(&self, w: &Weights<T>) -> Result<f64> {
        Ok(self.report(w)?.mean_ndcg_at_10)
    }
}
