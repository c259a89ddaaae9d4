//! Description-driven multimodal recommendation.
//!
//! The pipeline turns item images and metadata into natural-language
//! descriptions through a multimodal LLM, reasons user preferences from
//! behavior lists, encodes both into vectors, refines an item-item graph
//! (thresholded semantic KNN plus audience co-occurrence), propagates item
//! features over it, and trains two MLP projections with a BPR ranking loss.

pub mod corpus;
pub mod descriptor;
pub mod digest;
pub mod embedder;
pub mod graph;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod synthetic;
