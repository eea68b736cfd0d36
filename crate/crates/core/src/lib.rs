//! Query performance prediction smoothed over retrieved query variants.
//!
//! The pipeline retrieves variants of a target query from a training query
//! set, either directly (1-hop) or through the relevant documents of those
//! variants (2-hop), re-ranks the candidates by rank-biased overlap between
//! their BM25 document rankings and the target's, and linearly combines a
//! base post-retrieval predictor (NQC or UEF) over the target and its
//! variants.
//!
//! Modules, bottom-up:
//!
//! - [`corpus_io`]: TSV, TREC run and qrels, score-file readers and writers.
//! - [`text_index`]: tokenizer, inverted index, BM25, pseudo-queries.
//! - [`dense_index`]: exact cosine kNN over precomputed embeddings.
//! - [`rank_sim`]: extrapolated rank-biased overlap.
//! - [`predictors`]: NQC, relevance models and UEF.
//! - [`qv_qpp`]: variant retrieval, 2-hop expansion, re-ranking, smoothing.
//! - [`evaluation`]: AP/nDCG, Kendall's tau-b, Fisher z, tuning and sweeps.

pub mod corpus_io;
pub mod dense_index;
pub mod error;
pub mod evaluation;
pub mod predictors;
pub mod qv_qpp;
pub mod rank_sim;
pub mod text_index;
mod types;

pub use error::{Error, Result};
pub use types::{Document, Qrels, Query, RankedList, ScoredDoc};
