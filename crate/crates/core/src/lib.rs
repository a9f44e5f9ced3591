//! Dialogue-level hallucination detection over temporal turn graphs.
//!
//! A dialogue becomes a graph whose nodes are turns (carrying sentence
//! embeddings) and whose edges link consecutive turns and turns that mention
//! the same entities. A small message-passing network refines the node
//! vectors, attention pooling folds them into one dialogue vector, and a
//! feed-forward head scores six hallucination categories. The attention
//! weights double as per-turn explanations.
//!
//! The pipeline, module by module:
//!
//! - [`corpus`]: `dialogues.jsonl` ingestion and stratified splits
//! - [`entities`]: per-turn entity sets (heuristic or imported)
//! - [`embeddings`]: the `embeddings.tgne` store and a hashing embedder
//! - [`graph`]: turn graphs under the five ablation variants
//! - [`model`]: forward and reverse passes
//! - [`train`]: weighted sampling, Adam, multi-run suites and ablations
//! - [`eval`]: metrics, reports and attention listings
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository; its code listings are compiled as doc-tests of this crate.

pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod entities;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod rng;
pub mod train;

pub use corpus::{Category, DialogueRecord, Speaker, Turn};
pub use graph::{Variant, VariantConfig};
pub use model::{Hyperparams, ModelParameters};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/entities.md")]
    mod entities {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
