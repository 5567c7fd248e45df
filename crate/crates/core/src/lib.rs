//! Prefill-only relevance scoring with a tiny decoder-only transformer.
//!
//! The crate covers the offline half of the stack: the synthetic corpus and
//! prompt template, the hash tokenizer, the model and its prefix-shared
//! forward pass, relevance metrics, KL fine-tuning with hand-written
//! backpropagation, structured pruning, and the summarization reward
//! machinery. The serving runtime and load benchmarks live in
//! `slmrank-runtime`.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod model;
pub mod prefixcache;
pub mod pruning;
pub mod scoring;
pub mod summarize;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
