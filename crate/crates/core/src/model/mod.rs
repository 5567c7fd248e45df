//! Tiny decoder-only transformer: RoPE, RMSNorm, grouped-query attention and
//! SwiGLU MLPs. Only prefill exists; the head projects the final position.

pub mod attention;
mod checkpoint;
pub mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{c, cast_vec, Precision, Real};
use crate::tokenizer::Vocab;

pub use attention::{attend, attend_wide, merge_attention, AttentionPartial};
pub use checkpoint::{
    checkpoint_bytes, content_hash, parse_checkpoint, read_checkpoint, read_config_json, write_checkpoint, write_config_json, ConfigFile,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{
    forward_prefill, forward_traced, forward_with_prefix, head_flops, prefill_cache, prefill_flops, suffix_flops, token_flops, Captured, KvCache,
    LayerKv, LayerTrace, PrefillOutput, Trace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    pub max_seq: usize,
    pub norm_eps: f64,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 256,
            vocab_size: Vocab::default().size as usize,
            rope_theta: 10_000.0,
            max_seq: 2048,
            norm_eps: 1e-6,
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.d_head()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("d_model, n_heads and n_kv_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return bad(format!("n_heads {} not divisible by n_kv_heads {}", self.n_heads, self.n_kv_heads));
        }
        if self.d_head() % 2 != 0 {
            return bad(format!("rotary embedding needs an even head size, got {}", self.d_head()));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be at least 1".into());
        }
        if self.vocab_size < 3 || self.max_seq == 0 {
            return bad("vocab_size and max_seq too small".into());
        }
        if !(self.rope_theta > 1.0) || !(self.norm_eps > 0.0) {
            return bad("rope_theta must exceed 1 and norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Parameters in one transformer block.
    pub fn layer_params(&self) -> usize {
        let d = self.d_model;
        2 * d + 2 * d * d + 2 * d * self.kv_dim() + 3 * d * self.d_ff
    }

    /// Closed-form total parameter count.
    pub fn param_count(&self) -> usize {
        2 * self.vocab_size * self.d_model + self.n_layers * self.layer_params() + self.d_model
    }
}

/// Which tensor a parameter slice belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Embed,
    AttnNorm,
    Wq,
    Wk,
    Wv,
    Wo,
    MlpNorm,
    WUp,
    WGate,
    WDown,
    FinalNorm,
    Head,
}

/// Coarse parameter families used to stratify gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Attention,
    Norm,
    Mlp,
    Head,
}

impl ParamKind {
    pub const ALL: [ParamKind; 12] = [
        ParamKind::Embed,
        ParamKind::AttnNorm,
        ParamKind::Wq,
        ParamKind::Wk,
        ParamKind::Wv,
        ParamKind::Wo,
        ParamKind::MlpNorm,
        ParamKind::WUp,
        ParamKind::WGate,
        ParamKind::WDown,
        ParamKind::FinalNorm,
        ParamKind::Head,
    ];

    pub fn group(self) -> ParamGroup {
        match self {
            ParamKind::Embed => ParamGroup::Embedding,
            ParamKind::Wq | ParamKind::Wk | ParamKind::Wv | ParamKind::Wo => ParamGroup::Attention,
            ParamKind::AttnNorm | ParamKind::MlpNorm | ParamKind::FinalNorm => ParamGroup::Norm,
            ParamKind::WUp | ParamKind::WGate | ParamKind::WDown => ParamGroup::Mlp,
            ParamKind::Head => ParamGroup::Head,
        }
    }

    /// Whether the tensor lives inside a transformer block.
    pub fn per_layer(self) -> bool {
        !matches!(self, ParamKind::Embed | ParamKind::FinalNorm | ParamKind::Head)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Embed => "embed",
            ParamKind::AttnNorm => "attn_norm",
            ParamKind::Wq => "w_q",
            ParamKind::Wk => "w_k",
            ParamKind::Wv => "w_v",
            ParamKind::Wo => "w_o",
            ParamKind::MlpNorm => "mlp_norm",
            ParamKind::WUp => "w_up",
            ParamKind::WGate => "w_gate",
            ParamKind::WDown => "w_down",
            ParamKind::FinalNorm => "final_norm",
            ParamKind::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: Vec<T>,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    pub mlp_norm: Vec<T>,
    /// `d_model × d_ff`
    pub w_up: Vec<T>,
    /// `d_model × d_ff`
    pub w_gate: Vec<T>,
    /// `d_ff × d_model`
    pub w_down: Vec<T>,
}

impl<T: Real> LayerWeights<T> {
    fn tensors(&self) -> [(ParamKind, &Vec<T>); 9] {
        [
            (ParamKind::AttnNorm, &self.attn_norm),
            (ParamKind::Wq, &self.wq),
            (ParamKind::Wk, &self.wk),
            (ParamKind::Wv, &self.wv),
            (ParamKind::Wo, &self.wo),
            (ParamKind::MlpNorm, &self.mlp_norm),
            (ParamKind::WUp, &self.w_up),
            (ParamKind::WGate, &self.w_gate),
            (ParamKind::WDown, &self.w_down),
        ]
    }

    fn tensors_mut(&mut self) -> [(ParamKind, &mut Vec<T>); 9] {
        [
            (ParamKind::AttnNorm, &mut self.attn_norm),
            (ParamKind::Wq, &mut self.wq),
            (ParamKind::Wk, &mut self.wk),
            (ParamKind::Wv, &mut self.wv),
            (ParamKind::Wo, &mut self.wo),
            (ParamKind::MlpNorm, &mut self.mlp_norm),
            (ParamKind::WUp, &mut self.w_up),
            (ParamKind::WGate, &mut self.w_gate),
            (ParamKind::WDown, &mut self.w_down),
        ]
    }
}

/// All model parameters. Matrices are row-major `[in × out]`; activations are
/// row vectors multiplied on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub config: ModelConfig,
    /// `vocab_size × d_model`
    pub embed: Vec<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: Vec<T>,
    /// `d_model × vocab_size`
    pub head: Vec<T>,
}

/// Location of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId {
    pub kind: ParamKind,
    pub layer: Option<usize>,
}

impl<T: Real> Weights<T> {
    /// Expected element count of a tensor under `config`.
    pub fn expected_len(config: &ModelConfig, kind: ParamKind) -> usize {
        let d = config.d_model;
        match kind {
            ParamKind::Embed | ParamKind::Head => config.vocab_size * d,
            ParamKind::AttnNorm | ParamKind::MlpNorm | ParamKind::FinalNorm => d,
            ParamKind::Wq | ParamKind::Wo => d * d,
            ParamKind::Wk | ParamKind::Wv => d * config.kv_dim(),
            ParamKind::WUp | ParamKind::WGate | ParamKind::WDown => d * config.d_ff,
        }
    }

    /// Every tensor in declaration (checkpoint) order.
    pub fn tensors(&self) -> Vec<(TensorId, &Vec<T>)> {
        let mut out = Vec::with_capacity(2 + 9 * self.layers.len() + 1);
        out.push((TensorId { kind: ParamKind::Embed, layer: None }, &self.embed));
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors().into_iter().map(|(kind, t)| (TensorId { kind, layer: Some(i) }, t)));
        }
        out.push((TensorId { kind: ParamKind::FinalNorm, layer: None }, &self.final_norm));
        out.push((TensorId { kind: ParamKind::Head, layer: None }, &self.head));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorId, &mut Vec<T>)> {
        let mut out = Vec::with_capacity(2 + 9 * self.layers.len() + 1);
        out.push((TensorId { kind: ParamKind::Embed, layer: None }, &mut self.embed));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.tensors_mut().into_iter().map(|(kind, t)| (TensorId { kind, layer: Some(i) }, t)));
        }
        out.push((TensorId { kind: ParamKind::FinalNorm, layer: None }, &mut self.final_norm));
        out.push((TensorId { kind: ParamKind::Head, layer: None }, &mut self.head));
        out
    }

    pub fn visit(&self, mut f: impl FnMut(TensorId, &[T])) {
        for (id, t) in self.tensors() {
            f(id, t);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(TensorId, &mut Vec<T>)) {
        for (id, t) in self.tensors_mut() {
            f(id, t);
        }
    }

    pub fn tensor(&self, id: TensorId) -> &[T] {
        match (id.kind, id.layer) {
            (ParamKind::Embed, _) => &self.embed,
            (ParamKind::FinalNorm, _) => &self.final_norm,
            (ParamKind::Head, _) => &self.head,
            (kind, Some(l)) => {
                let lw = &self.layers[l];
                lw.tensors().into_iter().find(|(k, _)| *k == kind).map(|(_, t)| t.as_slice()).unwrap_or(&[])
            }
            (_, None) => &[],
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut Vec<T> {
        match (id.kind, id.layer) {
            (ParamKind::Embed, _) => &mut self.embed,
            (ParamKind::FinalNorm, _) => &mut self.final_norm,
            (ParamKind::Head, _) => &mut self.head,
            (kind, Some(l)) => self.layers[l]
                .tensors_mut()
                .into_iter()
                .find(|(k, _)| *k == kind)
                .map(|(_, t)| t)
                .expect("layer tensor kind"),
            (kind, None) => panic!("{} needs a layer index", kind.name()),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, t| t.iter_mut().for_each(|x| *x = T::zero()));
        z
    }

    /// Check every tensor against the config.
    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.n_layers {
            return Err(Error::Shape(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let mut err = None;
        let cfg = self.config.clone();
        self.visit(|id, t| {
            let want = Self::expected_len(&cfg, id.kind);
            if t.len() != want && err.is_none() {
                err = Some(Error::Shape(format!(
                    "{}{} has {} elements, expected {}",
                    id.kind.name(),
                    id.layer.map(|l| format!("[{l}]")).unwrap_or_default(),
                    t.len(),
                    want
                )));
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Convert to another scalar type; the config's precision follows.
    pub fn cast<U: Real>(&self) -> Weights<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerWeights {
                attn_norm: cast_vec(&l.attn_norm),
                wq: cast_vec(&l.wq),
                wk: cast_vec(&l.wk),
                wv: cast_vec(&l.wv),
                wo: cast_vec(&l.wo),
                mlp_norm: cast_vec(&l.mlp_norm),
                w_up: cast_vec(&l.w_up),
                w_gate: cast_vec(&l.w_gate),
                w_down: cast_vec(&l.w_down),
            })
            .collect();
        Weights {
            config: ModelConfig { precision: U::PRECISION, ..self.config.clone() },
            embed: cast_vec(&self.embed),
            layers,
            final_norm: cast_vec(&self.final_norm),
            head: cast_vec(&self.head),
        }
    }
}

fn gaussian<T: Real>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            c(z * std)
        })
        .collect()
}

/// Seeded Gaussian init, each matrix scaled by `1/sqrt(fan_in)`; norm scales start at one.
pub fn init_weights<T: Real>(config: &ModelConfig, seed: u64) -> Result<Weights<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let s = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    let embed = gaussian(&mut rng, config.vocab_size * d, s(d));
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            attn_norm: vec![T::one(); d],
            wq: gaussian(&mut rng, d * d, s(d)),
            wk: gaussian(&mut rng, d * config.kv_dim(), s(d)),
            wv: gaussian(&mut rng, d * config.kv_dim(), s(d)),
            wo: gaussian(&mut rng, d * d, s(d)),
            mlp_norm: vec![T::one(); d],
            w_up: gaussian(&mut rng, d * config.d_ff, s(d)),
            w_gate: gaussian(&mut rng, d * config.d_ff, s(d)),
            w_down: gaussian(&mut rng, config.d_ff * d, s(config.d_ff)),
        })
        .collect();
    let final_norm = vec![T::one(); d];
    let head = gaussian(&mut rng, d * config.vocab_size, s(d));
    Ok(Weights { config: ModelConfig { precision: T::PRECISION, ..config.clone() }, embed, layers, final_norm, head })
}
