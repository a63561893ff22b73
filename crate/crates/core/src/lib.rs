//! Two-hop passage retrieval.
//!
//! Lexical (BM25), two-stage reranked, dense, iterative dense beam search and
//! hybrid rerank-then-dense retrieval over a shared corpus, together with a
//! contrastive trainer for the toy dual encoder and an EM@k evaluator.

pub mod corpus;
pub mod dense;
pub mod encoder;
mod error;
pub mod eval;
pub mod lexical;
pub mod multihop;
pub mod par;
pub mod rank;
pub mod rerank;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
