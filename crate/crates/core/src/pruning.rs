//! Structured compression: MLP hidden-neuron pruning, block removal,
//! per-block sensitivity sweeps and the prune/fine-tune pipeline.
//!
//! Neuron selection is a layer-wise reconstruction method in the spirit of
//! OSSCAR: over calibration activations `H` it greedily removes the neuron
//! whose deletion least increases `‖H·W_down − H_S·W̃_down‖_F` after a
//! least-squares refit of the surviving `W_down` rows, then refits once more
//! on the final keep-set.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_prefill, Weights};
pub use crate::scoring::EvalSet;
use crate::tensor::{gemm, matmul, silu, MatMut, MatRef, Real};
use crate::tokenizer::TokenId;
use crate::training::{sft, TrainConfig, TrainExample};

/// Captured MLP inputs (post-norm) at a uniform sample of token positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub d_model: usize,
    pub rows: usize,
    /// One `rows × d_model` matrix per layer.
    pub layers: Vec<Vec<f64>>,
    /// `(prompt index, token position)` of every row.
    pub positions: Vec<(usize, usize)>,
}

impl CalibrationSet {
    /// Number of distinct prompts contributing at least one row.
    pub fn prompts_covered(&self) -> usize {
        let mut p: Vec<usize> = self.positions.iter().map(|&(i, _)| i).collect();
        p.dedup();
        p.len()
    }
}

/// Sample `position_budget` token positions uniformly without replacement
/// across all prompts and record every layer's MLP input at those positions.
/// If the prompts hold fewer positions than the budget, all are taken.
pub fn capture_calibration<T: Real>(
    w: &Weights<T>,
    prompts: &[Vec<TokenId>],
    position_budget: usize,
    seed: u64,
) -> Result<CalibrationSet> {
    if prompts.is_empty() || prompts.iter().all(|p| p.is_empty()) {
        return Err(Error::Empty("calibration prompts"));
    }
    if position_budget == 0 {
        return Err(Error::InvalidArgument("calibration budget must be at least 1".into()));
    }
    let total: usize = prompts.iter().map(Vec::len).sum();
    let n = position_budget.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();

    let d = w.config.d_model;
    let mut layers = vec![Vec::with_capacity(n * d); w.config.n_layers];
    let mut positions = Vec::with_capacity(n);
    let mut cursor = 0;
    let mut offset = 0;
    for (pi, prompt) in prompts.iter().enumerate() {
        let end = offset + prompt.len();
        let start = cursor;
        while cursor < picks.len() && picks[cursor] < end {
            cursor += 1;
        }
        if cursor > start {
            let cap = forward_prefill(w, prompt, true)?.captured.expect("capture requested");
            for &flat in &picks[start..cursor] {
                let pos = flat - offset;
                positions.push((pi, pos));
                for (dst, src) in layers.iter_mut().zip(&cap) {
                    dst.extend(src[pos * d..(pos + 1) * d].iter().map(|x| x.to_f64().unwrap_or(f64::NAN)));
                }
            }
        }
        offset = end;
    }
    Ok(CalibrationSet { d_model: d, rows: n, layers, positions })
}

/// SwiGLU hidden activations `silu(X·W_gate) ⊙ (X·W_up)` for `rows` inputs.
pub fn mlp_activations(x: &[f64], rows: usize, d: usize, w_up: &[f64], w_gate: &[f64], ff: usize) -> Vec<f64> {
    let up = matmul(x, w_up, rows, d, ff);
    let gate = matmul(x, w_gate, rows, d, ff);
    gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect()
}

/// Outcome of neuron selection for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSelection {
    /// Retained neuron indices, ascending.
    pub keep: Vec<usize>,
    /// Refit `k × d` down projection for the kept neurons.
    pub w_down: Vec<f64>,
    /// `‖H·W − H_S·W̃‖_F²`
    pub error: f64,
    /// `‖H·W‖_F²`
    pub target_energy: f64,
    /// `‖G_S·W̃ − C_S‖_F / ‖C_S‖_F` for the system actually solved.
    pub normal_residual: f64,
    /// Ridge added to the Gram diagonal when it was not positive definite.
    pub ridge: Option<f64>,
}

/// Cholesky factor, rejecting pivots below `1e-12` of the largest diagonal
/// entry as numerically singular.
fn well_conditioned_cholesky(g: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = g.diagonal().max();
    let ch = g.clone().cholesky()?;
    let l = ch.l_dirty();
    let ok = (0..g.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * scale);
    ok.then_some(ch)
}

fn cholesky_with_ridge(g: &DMatrix<f64>, what: &str) -> (nalgebra::Cholesky<f64, nalgebra::Dyn>, Option<f64>) {
    if let Some(ch) = well_conditioned_cholesky(g) {
        return (ch, None);
    }
    let n = g.nrows();
    let mut lambda = 1e-6 * g.trace() / n as f64;
    if !(lambda > 0.0) {
        lambda = 1e-12;
    }
    loop {
        log::warn!("{what}: Gram matrix is singular, adding ridge {lambda:.3e}");
        let reg = g + DMatrix::identity(n, n) * lambda;
        if let Some(ch) = well_conditioned_cholesky(&reg) {
            return (ch, Some(lambda));
        }
        lambda *= 10.0;
    }
}

/// Least-squares refit of `W̃` on columns `keep` of `H`, given `G = HᵀH`
/// and `C = HᵀY`.
fn refit(g: &DMatrix<f64>, c: &DMatrix<f64>, keep: &[usize], ridge: Option<f64>) -> (DMatrix<f64>, f64, Option<f64>) {
    let k = keep.len();
    let mut gs = g.select_rows(keep).select_columns(keep);
    if let Some(l) = ridge {
        for i in 0..k {
            gs[(i, i)] += l;
        }
    }
    let cs = c.select_rows(keep);
    let (ch, extra) = cholesky_with_ridge(&gs, "refit");
    let ws = ch.solve(&cs);
    let mut solved = gs;
    if let Some(l) = extra {
        for i in 0..k {
            solved[(i, i)] += l;
        }
    }
    let denom = cs.norm();
    let resid = (&solved * &ws - &cs).norm();
    let rel = if denom > 0.0 { resid / denom } else { resid };
    (ws, rel, ridge.map(|l| l + extra.unwrap_or(0.0)).or(extra))
}

/// Keep `k` of the `ff` columns of `h` (`rows × ff`) to reconstruct
/// `Y = h · w_down` (`w_down` is `ff × d`).
///
/// Greedy backward elimination: with `P = G_S⁻¹` and `B = P·C_S`, removing
/// neuron `j` raises the optimal error by `‖B_j‖² / P_jj`. Both `P` and `B`
/// are downdated in place after each removal.
pub fn select_neurons(h: &[f64], rows: usize, ff: usize, w_down: &[f64], d: usize, k: usize) -> Result<NeuronSelection> {
    if h.len() != rows * ff || w_down.len() != ff * d {
        return Err(Error::Shape(format!("activations {}×{ff} / down {ff}×{d}", rows)));
    }
    if k == 0 || k > ff {
        return Err(Error::InvalidArgument(format!("cannot keep {k} of {ff} neurons")));
    }
    if h.iter().chain(w_down).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pruning inputs"));
    }
    let mut gram = vec![0.0; ff * ff];
    gemm(MatRef::new(h, rows, ff).t(), MatRef::new(h, rows, ff), MatMut::new(&mut gram, ff, ff), false);
    let g = DMatrix::from_row_slice(ff, ff, &gram);
    let wm = DMatrix::from_row_slice(ff, d, w_down);
    let c = &g * &wm;

    let (ch, ridge) = cholesky_with_ridge(&g, "neuron selection");
    let mut alive = vec![true; ff];
    if k < ff {
        let mut p = ch.inverse();
        let mut b = &p * &c;
        for _ in k..ff {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in (0..ff).filter(|&j| alive[j]) {
                let cost = b.row(j).norm_squared() / p[(j, j)];
                if cost < best.0 {
                    best = (cost, j);
                }
            }
            let j = best.1;
            alive[j] = false;
            let pjj = p[(j, j)];
            let pj: DVector<f64> = p.column(j).into_owned();
            let bj = b.row(j).into_owned();
            for a in (0..ff).filter(|&a| alive[a]) {
                let f = pj[a] / pjj;
                if f != 0.0 {
                    for c2 in (0..ff).filter(|&c2| alive[c2]) {
                        p[(a, c2)] -= f * pj[c2];
                    }
                    for t in 0..d {
                        b[(a, t)] -= f * bj[t];
                    }
                }
            }
        }
    }
    let keep: Vec<usize> = (0..ff).filter(|&j| alive[j]).collect();
    let (ws, normal_residual, ridge) = refit(&g, &c, &keep, ridge);

    let mut w_out = Vec::with_capacity(k * d);
    for i in 0..k {
        w_out.extend(ws.row(i).iter());
    }
    // Y − H_S·W̃ = H·(W − W̃ embedded at the kept rows)
    let mut diff = w_down.to_vec();
    for (i, &j) in keep.iter().enumerate() {
        for t in 0..d {
            diff[j * d + t] -= w_out[i * d + t];
        }
    }
    let sq = |m: &[f64]| matmul(h, m, rows, ff, d).iter().map(|x| x * x).sum::<f64>();
    let (error, target_energy) = (sq(&diff), sq(w_down));
    Ok(NeuronSelection { keep, w_down: w_out, error, target_energy, normal_residual, ridge })
}

/// `‖H·W − H_S·W̃‖_F²` evaluated directly.
pub fn reconstruction_error(h: &[f64], rows: usize, ff: usize, w_down: &[f64], d: usize, keep: &[usize], w_refit: &[f64]) -> f64 {
    let y = matmul(h, w_down, rows, ff, d);
    let mut err = 0.0;
    for r in 0..rows {
        for t in 0..d {
            let approx: f64 = keep.iter().enumerate().map(|(i, &j)| h[r * ff + j] * w_refit[i * d + t]).sum();
            let e = y[r * d + t] - approx;
            err += e * e;
        }
    }
    err
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPruneStats {
    pub layer: usize,
    pub kept: usize,
    /// Reconstruction error relative to the layer's output energy.
    pub relative_error: f64,
    pub normal_residual: f64,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub d_ff_before: usize,
    pub d_ff_after: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub layers: Vec<LayerPruneStats>,
}

/// Hidden width left after pruning `sparsity` of `d_ff` neurons.
pub fn kept_neurons(d_ff: usize, sparsity: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let k = ((1.0 - sparsity) * d_ff as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} leaves no neurons of {d_ff}")));
    }
    Ok(k.min(d_ff))
}

/// Remove `sparsity` of every MLP's hidden neurons, refitting each `W_down`
/// on the calibration activations.
pub fn prune_mlp_neurons<T: Real>(w: &Weights<T>, calib: &CalibrationSet, sparsity: f64) -> Result<(Weights<T>, PruneReport)> {
    let cfg = &w.config;
    let (d, ff) = (cfg.d_model, cfg.d_ff);
    let k = kept_neurons(ff, sparsity)?;
    if calib.layers.len() != cfg.n_layers || calib.d_model != d {
        return Err(Error::Shape(format!(
            "calibration has {} layers of width {}, model has {} of width {d}",
            calib.layers.len(),
            calib.d_model,
            cfg.n_layers
        )));
    }
    if calib.rows == 0 {
        return Err(Error::Empty("calibration set"));
    }
    let mut out = w.clone();
    out.config.d_ff = k;
    let mut stats = Vec::with_capacity(cfg.n_layers);
    for (li, (lw, x)) in w.layers.iter().zip(&calib.layers).enumerate() {
        let f = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect() };
        let (up, gate, down) = (f(&lw.w_up), f(&lw.w_gate), f(&lw.w_down));
        let h = mlp_activations(x, calib.rows, d, &up, &gate, ff);
        let sel = select_neurons(&h, calib.rows, ff, &down, d, k)?;
        let ol = &mut out.layers[li];
        ol.w_up = (0..d).flat_map(|r| sel.keep.iter().map(move |&j| lw.w_up[r * ff + j])).collect();
        ol.w_gate = (0..d).flat_map(|r| sel.keep.iter().map(move |&j| lw.w_gate[r * ff + j])).collect();
        ol.w_down = sel.w_down.iter().map(|&x| T::from_f64(x)).collect();
        stats.push(LayerPruneStats {
            layer: li,
            kept: k,
            relative_error: if sel.target_energy > 0.0 { sel.error / sel.target_energy } else { sel.error },
            normal_residual: sel.normal_residual,
            ridge: sel.ridge,
        });
        log::debug!("layer {li}: kept {k}/{ff}, relative error {:.4e}", stats[li].relative_error);
    }
    out.check_shapes()?;
    let report = PruneReport {
        d_ff_before: ff,
        d_ff_after: k,
        params_before: w.param_count(),
        params_after: out.param_count(),
        layers: stats,
    };
    Ok((out, report))
}

/// Delete the listed blocks; the rest keep their order.
pub fn remove_layers<T: Real>(w: &Weights<T>, indices: &[usize]) -> Result<Weights<T>> {
    let n = w.config.n_layers;
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("layer {bad} out of range for {n} layers")));
    }
    let mut drop = vec![false; n];
    indices.iter().for_each(|&i| drop[i] = true);
    let remaining = drop.iter().filter(|&&x| !x).count();
    if remaining == 0 {
        return Err(Error::InvalidArgument("cannot remove every layer".into()));
    }
    let mut out = w.clone();
    out.layers = w.layers.iter().zip(&drop).filter(|(_, &d)| !d).map(|(l, _)| l.clone()).collect();
    out.config.n_layers = remaining;
    Ok(out)
}

/// Which blocks a recipe removes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSelection {
    Indices(Vec<usize>),
    FromEnd { from_end: usize },
}

impl Default for LayerSelection {
    fn default() -> Self {
        LayerSelection::FromEnd { from_end: 0 }
    }
}

impl LayerSelection {
    pub fn resolve(&self, n_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerSelection::Indices(v) => {
                if let Some(&bad) = v.iter().find(|&&i| i >= n_layers) {
                    return Err(Error::InvalidArgument(format!("layer {bad} out of range for {n_layers} layers")));
                }
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
            LayerSelection::FromEnd { from_end } => {
                if *from_end > n_layers {
                    return Err(Error::InvalidArgument(format!("cannot remove {from_end} of {n_layers} layers")));
                }
                Ok((n_layers - from_end..n_layers).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRecipe {
    pub mlp_sparsity: f64,
    #[serde(default)]
    pub layers_to_remove: LayerSelection,
    pub sft_after_each_stage: bool,
}

impl PruneRecipe {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.mlp_sparsity) {
            return Err(Error::InvalidArgument(format!("sparsity {} outside [0, 1)", self.mlp_sparsity)));
        }
        if self.layers_to_remove.resolve(n_layers)?.len() >= n_layers {
            return Err(Error::InvalidArgument("recipe removes every layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub removed_layer: usize,
    pub ndcg_at_10: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub baseline_ndcg_at_10: f64,
    /// One row per block, by index.
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityTable {
    /// The row with the most negative delta.
    pub fn most_damaging(&self) -> Option<&SensitivityRow> {
        self.rows.iter().min_by(|a, b| a.delta.total_cmp(&b.delta))
    }
}

/// Evaluate the model with each single block removed.
pub fn layer_sensitivity_sweep<T: Real>(w: &Weights<T>, eval: &EvalSet<'_>) -> Result<SensitivityTable> {
    let base = eval.ndcg(w)?;
    let mut rows = Vec::with_capacity(w.config.n_layers);
    if w.config.n_layers > 1 {
        for l in 0..w.config.n_layers {
            let ndcg = eval.ndcg(&remove_layers(w, &[l])?)?;
            rows.push(SensitivityRow { removed_layer: l, ndcg_at_10: ndcg, delta: ndcg - base });
        }
    }
    Ok(SensitivityTable { baseline_ndcg_at_10: base, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    PruneMlp,
    Sft,
    RemoveLayers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: Stage,
    pub params: usize,
    pub ndcg_at_10: f64,
    pub delta_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub recipe: PruneRecipe,
    pub stages: Vec<StageRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp: Option<PruneReport>,
}

impl StageReport {
    pub fn final_row(&self) -> &StageRow {
        self.stages.last().expect("report always has a baseline row")
    }
}

/// Data for the fine-tuning and calibration steps of [`compress_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineData<'a> {
    pub eval: EvalSet<'a>,
    pub train: &'a [TrainExample],
    pub train_config: TrainConfig,
    pub calibration_positions: usize,
    pub calibration_seed: u64,
}

/// prune MLP → SFT → remove blocks → SFT, skipping stages the recipe does
/// not call for, with NDCG@10 and parameter count after each.
pub fn compress_pipeline<T: Real>(
    w: &Weights<T>,
    recipe: &PruneRecipe,
    data: &PipelineData<'_>,
) -> Result<(Weights<T>, StageReport)> {
    recipe.validate(w.config.n_layers)?;
    let base = data.eval.ndcg(w)?;
    let mut stages = vec![StageRow { stage: Stage::Baseline, params: w.param_count(), ndcg_at_10: base, delta_vs_baseline: 0.0 }];
    let mut record = |stage, m: &Weights<T>| -> Result<()> {
        let ndcg = data.eval.ndcg(m)?;
        log::info!("{stage:?}: params {} ndcg@10 {ndcg:.4}", m.param_count());
        stages.push(StageRow { stage, params: m.param_count(), ndcg_at_10: ndcg, delta_vs_baseline: ndcg - base });
        Ok(())
    };
    let mut cur = w.clone();
    let mut mlp = None;
    if recipe.mlp_sparsity > 0.0 {
        let prompts: Vec<Vec<TokenId>> = data.train.iter().map(|e| e.tokens.clone()).collect();
        let calib = capture_calibration(&cur, &prompts, data.calibration_positions, data.calibration_seed)?;
        let (pruned, rep) = prune_mlp_neurons(&cur, &calib, recipe.mlp_sparsity)?;
        cur = pruned;
        mlp = Some(rep);
        record(Stage::PruneMlp, &cur)?;
        if recipe.sft_after_each_stage {
            sft(&mut cur, data.eval.vocab, data.train, &data.train_config)?;
            record(Stage::Sft, &cur)?;
        }
    }
    let drop = recipe.layers_to_remove.resolve(cur.config.n_layers)?;
    if !drop.is_empty() {
        cur = remove_layers(&cur, &drop)?;
        record(Stage::RemoveLayers, &cur)?;
        if recipe.sft_after_each_stage {
            sft(&mut cur, data.eval.vocab, data.train, &data.train_config)?;
            record(Stage::Sft, &cur)?;
        }
    }
    Ok((cur, StageReport { recipe: recipe.clone(), stages, mlp }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kept_counts() {
        assert_eq!(kept_neurons(256, 0.5).unwrap(), 128);
        assert_eq!(kept_neurons(10, 0.0).unwrap(), 10);
        assert_eq!(kept_neurons(10, 0.25).unwrap(), 8);
        assert!(kept_neurons(10, 1.0).is_err());
        assert!(kept_neurons(10, 0.99).is_err());
        assert!(kept_neurons(10, -0.1).is_err());
    }

    #[test]
    fn selection_from_end() {
        assert_eq!(LayerSelection::FromEnd { from_end: 2 }.resolve(8).unwrap(), vec![6, 7]);
        assert_eq!(LayerSelection::Indices(vec![3, 1, 3]).resolve(4).unwrap(), vec![1, 3]);
        assert!(LayerSelection::Indices(vec![4]).resolve(4).is_err());
        assert!(LayerSelection::FromEnd { from_end: 9 }.resolve(8).is_err());
    }

    #[test]
    fn recipe_json_round_trip() {
        let r = PruneRecipe { mlp_sparsity: 0.5, layers_to_remove: LayerSelection::FromEnd { from_end: 2 }, sft_after_each_stage: true };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"mlp_sparsity":0.5,"layers_to_remove":{"from_end":2},"sft_after_each_stage":true}"#);
        assert_eq!(serde_json::from_str::<PruneRecipe>(&s).unwrap(), r);
        let r2: PruneRecipe = serde_json::from_str(r#"{"mlp_sparsity":0.0,"layers_to_remove":[0,5],"sft_after_each_stage":false}"#).unwrap();
        assert_eq!(r2.layers_to_remove, LayerSelection::Indices(vec![0, 5]));
    }

    #[test]
    fn duplicate_columns_trigger_ridge() {
        // two identical neurons make the Gram matrix singular
        let rows = 20;
        let ff = 4;
        let mut h = vec![0.0; rows * ff];
        for r in 0..rows {
            let a = (r as f64 * 0.37).sin();
            h[r * ff] = a;
            h[r * ff + 1] = a;
            h[r * ff + 2] = (r as f64 * 0.11).cos();
            h[r * ff + 3] = r as f64 / rows as f64;
        }
        let wd = vec![1.0, 0.5, -1.0, 2.0, 0.3, 0.3, 0.7, -0.2];
        let sel = select_neurons(&h, rows, ff, &wd, 2, 3).unwrap();
        assert!(sel.ridge.is_some());
        assert!(sel.keep.contains(&2) && sel.keep.contains(&3));
        assert!(sel.error / sel.target_energy < 1e-6);
    }
}
