//! Subcommand configs and runners behind the `slmrank` binary. Each runner
//! returns a JSON report and a text rendering of it.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slmrank_core::corpus::Corpus;
use slmrank_core::experiment::DeskSetup;
use slmrank_core::model::{read_checkpoint, write_checkpoint, write_config_json, ConfigFile, Weights};
use slmrank_core::pruning::{compress_pipeline, LayerSelection, PipelineData, PruneRecipe};
use slmrank_core::summarize::{
    evaluate_compressor, render_tradeoff_table, truncation_curve, Compressor, DropDescription, Extractive, Identity, Penalty,
    StopWords,
};
use slmrank_core::training::TrainConfig;

use crate::bench::{
    compare_setups, max_rps_search, render_compare_table, run_load, BenchConfig, CompareConfig, HttpEngine, LatencyReport,
    SearchConfig, Setup,
};
use crate::engine::Engine;
use crate::service::{ScoringService, ServiceConfig};
use crate::workload::{corpus_requests, map_descriptions};

pub struct Output {
    pub json: Value,
    pub text: String,
}

fn load_weights(path: &Option<PathBuf>) -> Result<Weights<f32>> {
    let path = path.as_ref().context("config needs a `checkpoint` path")?;
    read_checkpoint::<f32>(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenCorpusConfig {
    pub n_queries: usize,
    pub n_items: usize,
    pub n_candidates: usize,
    pub out_dir: PathBuf,
}

impl Default for GenCorpusConfig {
    fn default() -> Self {
        Self { n_queries: 120, n_items: 1200, n_candidates: 20, out_dir: "corpus".into() }
    }
}

pub fn gen_corpus(cfg: &GenCorpusConfig, seed: u64) -> Result<Output> {
    let corpus = Corpus::generate(seed, cfg.n_queries, cfg.n_items, cfg.n_candidates);
    corpus.save(&cfg.out_dir)?;
    let json = json!({
        "out_dir": cfg.out_dir,
        "queries": corpus.queries.len(),
        "items": corpus.items.len(),
        "pairs": corpus.pairs.len(),
    });
    let text = format!(
        "wrote {} queries, {} items, {} pairs to {}\n",
        corpus.queries.len(),
        corpus.items.len(),
        corpus.pairs.len(),
        cfg.out_dir.display()
    );
    Ok(Output { json, text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCmdConfig {
    pub setup: DeskSetup,
    pub out: PathBuf,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self { setup: DeskSetup::default(), out: "model.ckpt".into() }
    }
}

fn seeded(setup: &DeskSetup, seed: u64) -> DeskSetup {
    DeskSetup { seed, train: TrainConfig { seed, ..setup.train.clone() }, ..setup.clone() }
}

pub fn train(cfg: &TrainCmdConfig, seed: u64) -> Result<Output> {
    let setup = seeded(&cfg.setup, seed);
    let data = setup.prepare()?;
    let (w, report) = setup.train_model::<f32>(&data)?;
    write_checkpoint(&w, &cfg.out)?;
    write_config_json(&ConfigFile { model: w.config.clone(), vocab: data.vocab.clone() }, cfg.out.with_extension("json"))?;
    let ndcg = data.eval_set().ndcg(&w)?;
    let text = format!(
        "trained {} examples, epoch losses {:?}, eval NDCG@10 {ndcg:.4}; wrote {}\n",
        report.examples,
        report.epoch_losses,
        cfg.out.display()
    );
    Ok(Output { json: json!({ "sft": report, "eval_ndcg_at_10": ndcg, "checkpoint": cfg.out }), text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalCmdConfig {
    pub setup: DeskSetup,
    pub checkpoint: Option<PathBuf>,
}

pub fn eval(cfg: &EvalCmdConfig, seed: u64) -> Result<Output> {
    let w = load_weights(&cfg.checkpoint)?;
    let data = seeded(&cfg.setup, seed).prepare()?;
    let report = data.eval_set().report(&w)?;
    let text = format!(
        "queries {}  NDCG@10 {:.4}  poor-match@10 {:.4}\n",
        report.count, report.mean_ndcg_at_10, report.poor_match_rate_at_10
    );
    Ok(Output { json: serde_json::to_value(&report)?, text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneCmdConfig {
    pub setup: DeskSetup,
    pub checkpoint: Option<PathBuf>,
    pub recipe: PruneRecipe,
    pub calibration_positions: usize,
    /// Fine-tuning between stages; defaults to one epoch.
    pub sft: TrainConfig,
    pub out: PathBuf,
}

impl Default for PruneCmdConfig {
    fn default() -> Self {
        Self {
            setup: DeskSetup::default(),
            checkpoint: None,
            recipe: PruneRecipe { mlp_sparsity: 0.5, layers_to_remove: LayerSelection::FromEnd { from_end: 2 }, sft_after_each_stage: true },
            calibration_positions: 50_000,
            sft: TrainConfig { epochs: 1, ..TrainConfig::default() },
            out: "pruned.ckpt".into(),
        }
    }
}

pub fn prune(cfg: &PruneCmdConfig, seed: u64) -> Result<Output> {
    let w = load_weights(&cfg.checkpoint)?;
    let data = seeded(&cfg.setup, seed).prepare()?;
    let pipeline = PipelineData {
        eval: data.eval_set(),
        train: &data.train_examples,
        train_config: TrainConfig { seed, ..cfg.sft.clone() },
        calibration_positions: cfg.calibration_positions,
        calibration_seed: seed,
    };
    let (pruned, report) = compress_pipeline(&w, &cfg.recipe, &pipeline)?;
    write_checkpoint(&pruned, &cfg.out)?;
    let mut text = format!("{:<14} {:>10} {:>9} {:>9}\n", "stage", "params", "NDCG@10", "delta");
    for s in &report.stages {
        text.push_str(&format!(
            "{:<14} {:>10} {:>9.4} {:>+9.4}\n",
            serde_json::to_value(s.stage)?.as_str().unwrap_or("?"),
            s.params,
            s.ndcg_at_10,
            s.delta_vs_baseline
        ));
    }
    Ok(Output { json: serde_json::to_value(&report)?, text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizeEvalConfig {
    pub setup: DeskSetup,
    pub checkpoint: Option<PathBuf>,
    pub penalty: Penalty,
    pub truncation_ratios: Vec<f64>,
    /// Token budgets of the extractive summarizer.
    pub extractive_budgets: Vec<usize>,
}

impl Default for SummarizeEvalConfig {
    fn default() -> Self {
        Self {
            setup: DeskSetup::default(),
            checkpoint: None,
            penalty: Penalty::default(),
            truncation_ratios: vec![0.75, 0.5, 0.25],
            extractive_budgets: vec![48, 24],
        }
    }
}

pub fn summarize_eval(cfg: &SummarizeEvalConfig, seed: u64) -> Result<Output> {
    let w = load_weights(&cfg.checkpoint)?;
    let data = seeded(&cfg.setup, seed).prepare()?;
    let eval = data.eval_set();
    let mut fixed: Vec<Box<dyn Compressor>> = vec![Box::new(Identity), Box::new(DropDescription), Box::new(StopWords)];
    fixed.extend(cfg.extractive_budgets.iter().map(|&b| Box::new(Extractive(b)) as Box<dyn Compressor>));
    let mut rows = fixed.iter().map(|c| evaluate_compressor(&w, &eval, c.as_ref(), &cfg.penalty)).collect::<Result<Vec<_>, _>>()?;
    rows.extend(truncation_curve(&w, &eval, &cfg.truncation_ratios, &cfg.penalty)?);
    Ok(Output { json: serde_json::to_value(&rows)?, text: render_tradeoff_table(&rows) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeCmdConfig {
    pub addr: SocketAddr,
    pub service: ServiceConfig,
}

impl Default for ServeCmdConfig {
    fn default() -> Self {
        Self { addr: "127.0.0.1:8080".parse().expect("literal address"), service: ServiceConfig::default() }
    }
}

pub fn build_service(cfg: &ServiceConfig) -> Result<Arc<ScoringService>> {
    let w = load_weights(&cfg.checkpoint)?;
    let engine = Engine::new(w, cfg.token_budget)?;
    Ok(Arc::new(ScoringService::new(engine, cfg.clone()).map_err(anyhow::Error::msg)?))
}

/// Serve until interrupted.
pub fn serve(cfg: &ServeCmdConfig) -> Result<()> {
    let svc = build_service(&cfg.service)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        crate::server::serve(svc, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

/// Where bench requests come from: a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub corpus_seed: u64,
    pub n_queries: usize,
    pub n_items: usize,
    pub n_candidates: usize,
    pub n_requests: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self { corpus_seed: 7, n_queries: 120, n_items: 1200, n_candidates: 20, n_requests: 1000 }
    }
}

impl WorkloadSpec {
    pub fn requests(&self, per_request: usize, seed: u64) -> Vec<crate::service::ScoreRequest> {
        let corpus = Corpus::generate(self.corpus_seed, self.n_queries, self.n_items, self.n_candidates);
        corpus_requests(&corpus, self.n_requests, per_request, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchCmdConfig {
    pub url: String,
    pub bench: BenchConfig,
    pub search: SearchConfig,
    pub workload: WorkloadSpec,
    pub timeout_s: f64,
}

impl Default for BenchCmdConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080".into(),
            bench: BenchConfig { senders: 32, ..BenchConfig::default() },
            search: SearchConfig::default(),
            workload: WorkloadSpec::default(),
            timeout_s: 30.0,
        }
    }
}

pub fn render_latency(r: &LatencyReport) -> String {
    format!(
        "{} | {}\noffered {:.2} rps  achieved {:.2} rps  items/sec {:.1}  requests {}  errors {}\np50 {:.1}  p90 {:.1}  p95 {:.1}  p99 {:.1} ms\n",
        r.setup, r.hardware, r.offered_rps, r.achieved_rps, r.items_per_sec, r.requests, r.errors, r.p50_ms, r.p90_ms, r.p95_ms, r.p99_ms
    )
}

pub fn bench(cfg: &BenchCmdConfig, seed: u64) -> Result<Output> {
    let bench = BenchConfig { seed, ..cfg.bench.clone() };
    let requests = cfg.workload.requests(bench.prompts_per_request, seed);
    let engine = HttpEngine::new(&cfg.url, Duration::from_secs_f64(cfg.timeout_s));
    let report = run_load(&engine, &bench, &requests)?;
    Ok(Output { text: render_latency(&report), json: serde_json::to_value(&report)? })
}

pub fn max_rps(cfg: &BenchCmdConfig, seed: u64) -> Result<Output> {
    let bench = BenchConfig { seed, ..cfg.bench.clone() };
    let requests = cfg.workload.requests(bench.prompts_per_request, seed);
    let engine = HttpEngine::new(&cfg.url, Duration::from_secs_f64(cfg.timeout_s));
    let res = max_rps_search(&bench, &cfg.search, |b| Ok(run_load(&engine, b, &requests)?))?;
    let mut text = String::new();
    for p in &res.trail {
        text.push_str(&format!(
            "probe {:>9.3} rps  p{} {:>8.1} ms  errors {:>4}  {}\n",
            p.rps,
            bench.slo_percentile,
            p.report.slo_latency_ms,
            p.report.errors,
            if p.passed { "pass" } else { "miss" }
        ));
    }
    text.push_str(&format!("max rps {:.3}  items/sec {:.1}\n", res.max_rps, res.report.items_per_sec));
    Ok(Output { json: serde_json::to_value(&res)?, text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareCmdConfig {
    pub original: Option<PathBuf>,
    pub pruned: Option<PathBuf>,
    /// Prompt budget shared by all setups.
    pub token_budget: usize,
    /// Token budget of the extractive summaries served by the last setup.
    pub summary_tokens: usize,
    pub workload: WorkloadSpec,
    pub compare: CompareConfig,
}

impl Default for CompareCmdConfig {
    fn default() -> Self {
        Self {
            original: None,
            pruned: None,
            token_budget: 128,
            summary_tokens: 48,
            workload: WorkloadSpec { n_requests: 60, ..WorkloadSpec::default() },
            compare: CompareConfig::default(),
        }
    }
}

/// Original, pruned, and pruned with summarized descriptions, on the same
/// request stream.
pub fn compare_setups_from(
    original: Weights<f32>,
    pruned: Weights<f32>,
    token_budget: usize,
    summary_tokens: usize,
    requests: &[crate::service::ScoreRequest],
) -> Result<Vec<Setup>> {
    let summarized = map_descriptions(requests, |d| Extractive(summary_tokens).compress(d))?;
    Ok(vec![
        Setup { label: "original".into(), engine: Engine::new(original, token_budget)?, requests: requests.to_vec() },
        Setup { label: "pruned".into(), engine: Engine::new(pruned.clone(), token_budget)?, requests: requests.to_vec() },
        Setup { label: "pruned+summarized".into(), engine: Engine::new(pruned, token_budget)?, requests: summarized },
    ])
}

pub fn compare(cfg: &CompareCmdConfig, seed: u64) -> Result<Output> {
    let original = load_weights(&cfg.original)?;
    let pruned = load_weights(&cfg.pruned)?;
    let compare = CompareConfig { bench: BenchConfig { seed, ..cfg.compare.bench.clone() }, ..cfg.compare.clone() };
    let requests = cfg.workload.requests(compare.bench.prompts_per_request, seed);
    let setups = compare_setups_from(original, pruned, cfg.token_budget, cfg.summary_tokens, &requests)?;
    let report = compare_setups(&setups, &compare)?;
    if report.rows.iter().any(|r| !r.ratio.is_finite()) {
        bail!("original setup measured zero throughput");
    }
    Ok(Output { text: render_compare_table(&report), json: serde_json::to_value(&report)? })
}
