//! Binary weight checkpoints and the JSON config dump.
//!
//! Layout: magic `PRLK`, `u32` version, the config fields, then every tensor
//! in declaration order as little-endian scalars of the stored precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Real};
use crate::tokenizer::{fnv1a64, Vocab};

use super::{LayerWeights, ModelConfig, ParamKind, Weights};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PRLK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model and tokenizer configuration as written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub vocab: Vocab,
}

fn put_u32(b: &mut Vec<u8>, x: usize) -> Result<()> {
    let v = u32::try_from(x).map_err(|_| Error::Checkpoint(format!("{x} does not fit in u32")))?;
    b.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialize weights to checkpoint bytes.
pub fn checkpoint_bytes<T: Real>(w: &Weights<T>) -> Result<Vec<u8>> {
    w.check_shapes()?;
    let cfg = &w.config;
    let mut b = Vec::with_capacity(64 + w.param_count() * T::BYTES);
    b.extend_from_slice(&CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for x in [cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.n_kv_heads, cfg.d_ff, cfg.vocab_size, cfg.max_seq] {
        put_u32(&mut b, x)?;
    }
    b.extend_from_slice(&cfg.rope_theta.to_le_bytes());
    b.extend_from_slice(&cfg.norm_eps.to_le_bytes());
    b.push(match T::PRECISION {
        Precision::F32 => 0,
        Precision::F64 => 1,
    });
    w.visit(|_, t| t.iter().for_each(|&x| T::to_le_bytes_vec(x, &mut b)));
    Ok(b)
}

pub fn write_checkpoint<T: Real>(w: &Weights<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(w)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<S: Real, T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(S::BYTES).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(S::BYTES).map(|ch| T::from_f64(S::from_le_slice(ch).to_f64().unwrap_or(f64::NAN))).collect())
    }
}

fn decode<S: Real, T: Real>(r: &mut Reader<'_>, cfg: ModelConfig) -> Result<Weights<T>> {
    let n = |k| Weights::<T>::expected_len(&cfg, k);
    let embed = r.tensor::<S, T>(n(ParamKind::Embed))?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for _ in 0..cfg.n_layers {
        layers.push(LayerWeights {
            attn_norm: r.tensor::<S, T>(n(ParamKind::AttnNorm))?,
            wq: r.tensor::<S, T>(n(ParamKind::Wq))?,
            wk: r.tensor::<S, T>(n(ParamKind::Wk))?,
            wv: r.tensor::<S, T>(n(ParamKind::Wv))?,
            wo: r.tensor::<S, T>(n(ParamKind::Wo))?,
            mlp_norm: r.tensor::<S, T>(n(ParamKind::MlpNorm))?,
            w_up: r.tensor::<S, T>(n(ParamKind::WUp))?,
            w_gate: r.tensor::<S, T>(n(ParamKind::WGate))?,
            w_down: r.tensor::<S, T>(n(ParamKind::WDown))?,
        });
    }
    let final_norm = r.tensor::<S, T>(n(ParamKind::FinalNorm))?;
    let head = r.tensor::<S, T>(n(ParamKind::Head))?;
    Ok(Weights { config: ModelConfig { precision: T::PRECISION, ..cfg }, embed, layers, final_norm, head })
}

/// Parse checkpoint bytes, converting to `T` if the stored precision differs.
pub fn parse_checkpoint<T: Real>(bytes: &[u8]) -> Result<Weights<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut cfg = ModelConfig {
        n_layers: r.u32()?,
        d_model: r.u32()?,
        n_heads: r.u32()?,
        n_kv_heads: r.u32()?,
        d_ff: r.u32()?,
        vocab_size: r.u32()?,
        max_seq: r.u32()?,
        rope_theta: r.f64()?,
        norm_eps: r.f64()?,
        precision: Precision::F32,
    };
    cfg.precision = match r.take(1)?[0] {
        0 => Precision::F32,
        1 => Precision::F64,
        p => return Err(Error::Checkpoint(format!("unknown precision tag {p}"))),
    };
    cfg.validate()?;
    let w = match cfg.precision {
        Precision::F32 => decode::<f32, T>(&mut r, cfg)?,
        Precision::F64 => decode::<f64, T>(&mut r, cfg)?,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    w.check_shapes()?;
    Ok(w)
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Weights<T>> {
    parse_checkpoint(&std::fs::read(path)?)
}

/// Stable identifier of a weight set: FNV-1a over its checkpoint bytes, hex.
pub fn content_hash<T: Real>(w: &Weights<T>) -> Result<String> {
    Ok(format!("{:016x}", fnv1a64(&checkpoint_bytes(w)?)))
}

pub fn write_config_json(cfg: &ConfigFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

pub fn read_config_json(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let cfg: ConfigFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    cfg.model.validate()?;
    cfg.vocab.validate().map_err(Error::InvalidConfig)?;
    if cfg.vocab.size as usize != cfg.model.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "vocab size {} disagrees with model vocab_size {}",
            cfg.vocab.size, cfg.model.vocab_size
        )));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    fn cfg() -> ModelConfig {
        ModelConfig { n_layers: 2, d_model: 8, n_heads: 2, n_kv_heads: 1, d_ff: 12, vocab_size: 40, ..Default::default() }
    }

    #[test]
    fn roundtrip_is_exact() {
        let w = init_weights::<f32>(&cfg(), 9).unwrap();
        let bytes = checkpoint_bytes(&w).unwrap();
        assert_eq!(&bytes[..4], b"PRLK");
        let back: Weights<f32> = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back, w);
        let wide: Weights<f64> = parse_checkpoint(&bytes).unwrap();
        assert_eq!(wide.config.precision, Precision::F64);
        assert_eq!(wide.embed[3], w.embed[3] as f64);
    }

    #[test]
    fn rejects_corruption() {
        let w = init_weights::<f64>(&cfg(), 9).unwrap();
        let mut bytes = checkpoint_bytes(&w).unwrap();
        assert!(parse_checkpoint::<f64>(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(matches!(parse_checkpoint::<f64>(&bytes), Err(Error::Checkpoint(m)) if m.contains("trailing")));
        bytes[0] = b'X';
        assert!(matches!(parse_checkpoint::<f64>(&bytes), Err(Error::Checkpoint(m)) if m.contains("magic")));
    }

    #[test]
    fn hash_tracks_content() {
        let a = init_weights::<f32>(&cfg(), 1).unwrap();
        let mut b = a.clone();
        assert_eq!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
        b.head[0] += 1.0;
        assert_ne!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
    }
}
