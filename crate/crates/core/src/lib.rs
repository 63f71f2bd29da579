//! Data curation, synthetic slide generation, tiling, frozen patch embedding,
//! and the retrieval/classification/text-metric evaluation stack.
//!
//! The crates in this workspace split along the pipeline:
//! `slidealign-core` owns everything that is not a trainable model, while
//! `slidealign-model` owns the aligner and the grafted decoder.

pub mod embedder;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod synth;
pub mod textsim;
pub mod tiler;
pub mod util;
