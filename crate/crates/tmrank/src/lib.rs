//! Retrieval and re-ranking with lexical translation models: BM25 candidate
//! generation, EM-trained and neurally-trained translation tables, sparse CPU
//! scoring, linear score fusion, and an IR evaluation harness.
//!
//! The data-parallel inner loops (EM counts, batch gradients, the export
//! grid, per-query evaluation) run on rayon by default and fall back to
//! sequential code without the `parallel` feature. Work is chunked
//! independently of the worker count, so results are bit-identical for any
//! thread count.

pub mod bitext;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod export;
pub mod fusion;
pub mod index;
pub mod neural;
pub mod parallel;
pub mod synth;
pub mod translation;

pub use error::{Error, Result};
