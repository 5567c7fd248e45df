//! The standard desk-scale setup: corpus, query-disjoint split, training,
//! and the prune/fine-tune recovery trial built on it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GradedPair};
use crate::error::Result;
use crate::model::{init_weights, read_checkpoint, write_checkpoint, ModelConfig, Weights};
use crate::pruning::{capture_calibration, prune_mlp_neurons};
use crate::scoring::EvalSet;
use crate::tensor::Real;
use crate::tokenizer::{fnv1a64, TokenId, Vocab};
use crate::training::{build_examples, sft, split_by_query, SftReport, TrainConfig, TrainExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSetup {
    pub seed: u64,
    pub n_queries: usize,
    pub n_items: usize,
    pub n_candidates: usize,
    pub eval_fraction: f64,
    /// Cap on training pairs.
    pub max_train: usize,
    pub token_budget: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for DeskSetup {
    fn default() -> Self {
        Self {
            seed: 7,
            n_queries: 300,
            n_items: 1200,
            n_candidates: 20,
            eval_fraction: 0.2,
            max_train: 2000,
            token_budget: 96,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskData {
    pub vocab: Vocab,
    pub corpus: Corpus,
    pub train_pairs: Vec<GradedPair>,
    pub eval_pairs: Vec<GradedPair>,
    pub train_examples: Vec<TrainExample>,
    pub token_budget: usize,
}

impl DeskData {
    pub fn eval_set(&self) -> EvalSet<'_> {
        EvalSet {
            vocab: &self.vocab,
            queries: &self.corpus.queries,
            items: &self.corpus.items,
            pairs: &self.eval_pairs,
            token_budget: self.token_budget,
        }
    }

    pub fn train_prompts(&self) -> Vec<Vec<TokenId>> {
        self.train_examples.iter().map(|e| e.tokens.clone()).collect()
    }
}

impl DeskSetup {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, train: TrainConfig { seed, ..TrainConfig::default() }, ..Self::default() }
    }

    pub fn prepare(&self) -> Result<DeskData> {
        self.model.validate()?;
        let vocab = Vocab::with_size(self.model.vocab_size as u32);
        let corpus = Corpus::generate(self.seed, self.n_queries, self.n_items, self.n_candidates);
        let (mut train_pairs, eval_pairs) = split_by_query(&corpus.pairs, self.eval_fraction, self.seed);
        train_pairs.truncate(self.max_train);
        let train_examples = build_examples(&corpus.queries, &corpus.items, &train_pairs, &vocab, self.token_budget)?;
        Ok(DeskData { vocab, corpus, train_pairs, eval_pairs, train_examples, token_budget: self.token_budget })
    }

    /// Stable key for caching artifacts of this setup.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("setup serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    /// Like [`DeskSetup::train_model`], but reuses a checkpoint under `dir`
    /// keyed by the setup fingerprint when one exists.
    pub fn train_cached<T: Real>(&self, data: &DeskData, dir: &Path) -> Result<Weights<T>> {
        let path = dir.join(format!("desk-{}-{}.ckpt", self.fingerprint(), match T::PRECISION { crate::tensor::Precision::F32 => "f32", crate::tensor::Precision::F64 => "f64" }));
        if let Ok(w) = read_checkpoint::<T>(&path) {
            return Ok(w);
        }
        let (w, _) = self.train_model::<T>(data)?;
        std::fs::create_dir_all(dir)?;
        // write then rename so concurrent readers never see a partial file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        write_checkpoint(&w, &tmp)?;
        std::fs::rename(&tmp, &path)?;
        Ok(w)
    }

    /// Fresh weights for the setup's seed, fine-tuned on the training split.
    pub fn train_model<T: Real>(&self, data: &DeskData) -> Result<(Weights<T>, SftReport)> {
        let mut w = init_weights::<T>(&self.model, self.seed)?;
        let report = sft(&mut w, &data.vocab, &data.train_examples, &self.train)?;
        Ok((w, report))
    }
}

/// Eval NDCG@10 of a trained model, after pruning its MLPs, and after
/// fine-tuning the pruned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub seed: u64,
    pub sparsity: f64,
    pub params_before: usize,
    pub params_after: usize,
    pub baseline: f64,
    pub pruned: f64,
    pub recovered: f64,
}

impl RecoveryTrial {
    /// NDCG lost to pruning (positive means worse).
    pub fn pruning_drop(&self) -> f64 {
        self.baseline - self.pruned
    }

    /// NDCG regained by fine-tuning the pruned model.
    pub fn recovery(&self) -> f64 {
        self.recovered - self.pruned
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub sparsity: f64,
    pub calibration_positions: usize,
    pub post_sft: TrainConfig,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { sparsity: 0.5, calibration_positions: 50_000, post_sft: TrainConfig { epochs: 1, ..TrainConfig::default() } }
    }
}

pub fn mlp_recovery_trial<T: Real>(
    w: &Weights<T>,
    data: &DeskData,
    seed: u64,
    cfg: &RecoveryConfig,
) -> Result<RecoveryTrial> {
    let eval = data.eval_set();
    let baseline = eval.ndcg(w)?;
    let calib = capture_calibration(w, &data.train_prompts(), cfg.calibration_positions, seed)?;
    let (mut pruned_w, rep) = prune_mlp_neurons(w, &calib, cfg.sparsity)?;
    let pruned = eval.ndcg(&pruned_w)?;
    let post = TrainConfig { seed: cfg.post_sft.seed ^ seed.wrapping_mul(0x9E37_79B9), ..cfg.post_sft.clone() };
    sft(&mut pruned_w, &data.vocab, &data.train_examples, &post)?;
    let recovered = eval.ndcg(&pruned_w)?;
    Ok(RecoveryTrial {
        seed,
        sparsity: cfg.sparsity,
        params_before: rep.params_before,
        params_after: rep.params_after,
        baseline,
        pruned,
        recovered,
    })
}
