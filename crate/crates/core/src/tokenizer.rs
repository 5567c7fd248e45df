//! Deterministic word-hash tokenizer.
//!
//! Text is split into template tags (matched greedily as single special
//! tokens) and runs of letters/digits; everything else separates words.
//! Words are lowercased and hashed with FNV-1a-64 into the id range
//! `[reserved, size)`. The words "yes" and "no" map to their reserved ids so
//! the scorer can read their logits directly.
//!
//! An [`Encoder`] compiles the pre-tokenization pattern once; `encode` pays
//! that setup on every call while `encode_batch` pays it once per batch.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const FNV_OFFSET: u64 = 14695981039346656037;
pub const FNV_PRIME: u64 = 1099511628211;

pub const TAG_SYS: &str = "<|sys|>";
pub const TAG_SYS_END: &str = "<|/sys|>";
pub const TAG_Q: &str = "<|q|>";
pub const TAG_Q_END: &str = "<|/q|>";
pub const TAG_META: &str = "<|meta|>";
pub const TAG_META_END: &str = "<|/meta|>";
pub const TAG_DESC: &str = "<|desc|>";
pub const TAG_DESC_END: &str = "<|/desc|>";
pub const TAG_ANS: &str = "<|ans|>";

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialToken {
    pub text: String,
    pub id: TokenId,
}

/// Vocabulary layout. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: u32,
    pub reserved: u32,
    pub pad_id: TokenId,
    pub yes_id: TokenId,
    pub no_id: TokenId,
    pub specials: Vec<SpecialToken>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::with_size(32768)
    }
}

impl Vocab {
    /// Standard layout: pad=0, yes=1, no=2, template tags from 3; 16 reserved ids.
    pub fn with_size(size: u32) -> Self {
        let tags = [
            TAG_SYS,
            TAG_SYS_END,
            TAG_Q,
            TAG_Q_END,
            TAG_META,
            TAG_META_END,
            TAG_DESC,
            TAG_DESC_END,
            TAG_ANS,
        ];
        let specials = tags
            .iter()
            .enumerate()
            .map(|(i, t)| SpecialToken { text: (*t).to_string(), id: 3 + i as u32 })
            .collect();
        let v = Self { size, reserved: 16, pad_id: 0, yes_id: 1, no_id: 2, specials };
        v.validate().expect("standard vocab layout is valid");
        v
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.yes_id == self.no_id {
            return Err("yes_id == no_id".into());
        }
        if self.yes_id >= self.reserved || self.no_id >= self.reserved || self.pad_id >= self.reserved {
            return Err("reserved ids must lie below `reserved`".into());
        }
        if self.reserved >= self.size {
            return Err("vocab has no room for hashed words".into());
        }
        for s in &self.specials {
            if s.id >= self.reserved {
                return Err(format!("special token {} has id {} >= reserved", s.text, s.id));
            }
            if s.id == self.yes_id || s.id == self.no_id || s.id == self.pad_id {
                return Err(format!("special token {} collides with a fixed id", s.text));
            }
        }
        Ok(())
    }

    /// Id of a lowercased word.
    pub fn word_id(&self, word: &str) -> TokenId {
        match word {
            "yes" => self.yes_id,
            "no" => self.no_id,
            _ => {
                let span = (self.size - self.reserved) as u64;
                self.reserved + (fnv1a64(word.as_bytes()) % span) as u32
            }
        }
    }

    pub fn special_id(&self, tag: &str) -> Option<TokenId> {
        self.specials.iter().find(|s| s.text == tag).map(|s| s.id)
    }

    pub fn special_text(&self, id: TokenId) -> Option<&str> {
        if id == self.yes_id {
            return Some("yes");
        }
        if id == self.no_id {
            return Some("no");
        }
        if id == self.pad_id {
            return Some("<|pad|>");
        }
        self.specials.iter().find(|s| s.id == id).map(|s| s.text.as_str())
    }
}

/// One pre-tokenized piece of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Tag(TokenId),
    Word,
}

/// A compiled pre-tokenizer bound to a vocabulary.
pub struct Encoder<'v> {
    vocab: &'v Vocab,
    pattern: Regex,
}

impl<'v> Encoder<'v> {
    pub fn new(vocab: &'v Vocab) -> Self {
        let mut tags: Vec<&str> = vocab.specials.iter().map(|s| s.text.as_str()).collect();
        // longest first so alternation is greedy
        tags.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alt = tags.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|");
        let pattern = if alt.is_empty() {
            r"[\p{Alphabetic}\p{Nd}]+".to_string()
        } else {
            format!(r"(?i:{alt})|[\p{{Alphabetic}}\p{{Nd}}]+")
        };
        let pattern = Regex::new(&pattern).expect("pre-tokenizer pattern compiles");
        Self { vocab, pattern }
    }

    pub fn vocab(&self) -> &Vocab {
        self.vocab
    }

    /// Byte spans of every token in `text`, in order.
    pub fn pieces<'t>(&'t self, text: &'t str) -> impl Iterator<Item = (Range<usize>, Piece)> + 't {
        self.pattern.find_iter(text).map(move |m| {
            let s = m.as_str();
            let piece = if s.starts_with("<|") {
                let lower = s.to_lowercase();
                match self.vocab.special_id(&lower) {
                    Some(id) => Piece::Tag(id),
                    None => Piece::Word,
                }
            } else {
                Piece::Word
            };
            (m.range(), piece)
        })
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(text.len() / 5 + 1);
        let mut lower = String::new();
        for (range, piece) in self.pieces(text) {
            match piece {
                Piece::Tag(id) => out.push(id),
                Piece::Word => {
                    let w = &text[range];
                    if w.bytes().all(|b| !b.is_ascii_uppercase()) {
                        out.push(self.vocab.word_id(w));
                    } else {
                        lower.clear();
                        lower.extend(w.chars().flat_map(char::to_lowercase));
                        out.push(self.vocab.word_id(&lower));
                    }
                }
            }
        }
        out
    }

    pub fn count(&self, text: &str) -> usize {
        self.pattern.find_iter(text).count()
    }
}

/// Encode one string, paying the pre-tokenizer setup.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    Encoder::new(vocab).encode(text)
}

/// Encode many strings with one pre-tokenizer setup.
pub fn encode_batch<S: AsRef<str>>(texts: &[S], vocab: &Vocab) -> Vec<Vec<TokenId>> {
    let enc = Encoder::new(vocab);
    texts.iter().map(|t| enc.encode(t.as_ref())).collect()
}

/// Lossy rendering for debugging: special ids become their tag text, hashed
/// ids become `⟨w#id⟩`.
pub fn decode_debug(ids: &[TokenId], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&id| match vocab.special_text(id) {
            Some(t) => t.to_string(),
            None => format!("⟨w#{id}⟩"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

static DEFAULT_VOCAB: LazyLock<Vocab> = LazyLock::new(Vocab::default);
static DEFAULT_ENCODER: LazyLock<Encoder<'static>> = LazyLock::new(|| Encoder::new(&DEFAULT_VOCAB));

/// Shared encoder over the default vocabulary (token counting, word spans).
pub fn default_encoder() -> &'static Encoder<'static> {
    &DEFAULT_ENCODER
}

/// Token count of `text` under the default pre-tokenizer.
pub fn count_tokens(text: &str) -> usize {
    DEFAULT_ENCODER.count(text)
}

/// Byte spans of the tokens of `text` under the default pre-tokenizer.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    DEFAULT_ENCODER.pieces(text).map(|(r, _)| r).collect()
}

/// Lowercased word tokens of `text`, template tags skipped.
pub fn words(text: &str) -> Vec<String> {
    DEFAULT_ENCODER
        .pieces(text)
        .filter(|(_, p)| *p == Piece::Word)
        .map(|(r, _)| text[r].to_lowercase())
        .collect()
}
