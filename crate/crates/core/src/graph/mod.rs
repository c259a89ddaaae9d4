//! Refined item-item graph: thresholded semantic KNN, Jaccard audience
//! co-occurrence, their sum, symmetric degree normalization and layer-sum
//! propagation of item features.

mod diagnostics;
mod io;
mod knn;
mod propagate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::InteractionMatrix;
use crate::embedder::EmbeddingMatrix;

pub use diagnostics::{edge_similarity_histogram, SimilarityHistogram};
pub use io::{export_graph, import_graph, read_graph, write_graph};
pub use knn::{cooccur_graph, jaccard, semantic_graph, semantic_neighbors};
pub use propagate::{merge, normalize, propagate, symmetrize};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("item {0} has a zero-norm embedding")]
    ZeroNormRow(usize),
    #[error("need at least two items, got {0}")]
    TooFewItems(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("expected a {expected} graph, got {found}")]
    WrongStage { expected: Stage, found: Stage },
    #[error("invalid edge ({src},{dst}): {reason}")]
    InvalidEdge {
        src: usize,
        dst: usize,
        reason: String,
    },
    #[error("invalid graph config: {0}")]
    BadConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {reason}")]
    ParseError { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Which construction step produced a graph; fixes the admissible weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Semantic,
    Cooccur,
    Merged,
    Normalized,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Semantic => "semantic",
            Stage::Cooccur => "cooccur",
            Stage::Merged => "merged",
            Stage::Normalized => "normalized",
        }
    }

    fn admits(self, w: f64) -> bool {
        match self {
            Stage::Semantic => w == 1.0,
            Stage::Cooccur => w > 0.0 && w <= 1.0,
            Stage::Merged => w > 0.0 && w <= 2.0,
            Stage::Normalized => w.is_finite() && w >= 0.0,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "semantic" => Ok(Stage::Semantic),
            "cooccur" => Ok(Stage::Cooccur),
            "merged" => Ok(Stage::Merged),
            "normalized" => Ok(Stage::Normalized),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// Directed weighted item-item adjacency in CSR form. Rows are sorted by
/// destination; there are no self-loops and no duplicate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    stage: Stage,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseGraph {
    pub fn empty(n: usize, stage: Stage) -> Self {
        SparseGraph {
            n,
            stage,
            offsets: vec![0; n + 1],
            targets: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds from per-source adjacency lists, validating every invariant.
    pub fn from_rows(n: usize, stage: Stage, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(GraphError::DimMismatch(format!(
                "{} adjacency rows for {n} items",
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (src, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(dst, _)| dst);
            for (k, &(dst, w)) in row.iter().enumerate() {
                let reason = if dst >= n {
                    Some(format!("destination out of range 0..{n}"))
                } else if dst == src {
                    Some("self-loop".to_string())
                } else if k > 0 && row[k - 1].0 == dst {
                    Some("duplicate pair".to_string())
                } else if !stage.admits(w) {
                    Some(format!("weight {w} not admissible for a {stage} graph"))
                } else {
                    None
                };
                if let Some(reason) = reason {
                    return Err(GraphError::InvalidEdge { src, dst, reason });
                }
                targets.push(dst);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Ok(SparseGraph {
            n,
            stage,
            offsets,
            targets,
            weights,
        })
    }

    pub fn from_edges(n: usize, stage: Stage, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n];
        for &(src, dst, w) in edges {
            if src >= n {
                return Err(GraphError::InvalidEdge {
                    src,
                    dst,
                    reason: format!("source out of range 0..{n}"),
                });
            }
            rows[src].push((dst, w));
        }
        Self::from_rows(n, stage, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    /// `(dst, weight)` pairs of `src`, ascending by `dst`.
    pub fn neighbors(&self, src: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[src]..self.offsets[src + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn out_degree(&self, src: usize) -> usize {
        self.offsets[src + 1] - self.offsets[src]
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        let range = self.offsets[src]..self.offsets[src + 1];
        let row = &self.targets[range.clone()];
        row.binary_search(&dst).ok().map(|k| self.weights[range.start + k])
    }

    /// All edges in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |src| self.neighbors(src).map(move |(dst, w)| (src, dst, w)))
    }

    pub fn edge_set(&self) -> std::collections::BTreeSet<(usize, usize)> {
        self.edges().map(|(s, d, _)| (s, d)).collect()
    }

    pub fn row_sum(&self, src: usize) -> f64 {
        self.neighbors(src).map(|(_, w)| w).sum()
    }

    pub(crate) fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n).map(|s| self.neighbors(s).collect()).collect()
    }

    pub(crate) fn expect_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(GraphError::WrongStage {
                expected,
                found: self.stage,
            });
        }
        Ok(())
    }
}

/// Row sums `N_aa` of the merged graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector(pub Vec<f64>);

impl DegreeVector {
    pub fn get(&self, a: usize) -> f64 {
        self.0[a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k_semantic: usize,
    pub alpha: f64,
    pub k_cooccur: usize,
    pub layers: usize,
    /// Replace the merged graph by `max(S*, S*^T)` before normalizing.
    pub symmetrize: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_semantic: 10,
            alpha: 0.5,
            k_cooccur: 10,
            layers: 1,
            symmetrize: false,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_semantic < 1 || self.k_cooccur < 1 {
            return Err(GraphError::BadConfig("K_s and K_c must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GraphError::BadConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Toggles for the ablated graph constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphVariant {
    /// Apply the similarity threshold to the semantic KNN.
    pub denoise: bool,
    /// Add the co-occurrence graph.
    pub enhance: bool,
    /// Propagate features; when off, raw encoder outputs are used.
    pub convolve: bool,
}

impl GraphVariant {
    pub const FULL: GraphVariant = GraphVariant {
        denoise: true,
        enhance: true,
        convolve: true,
    };
}

impl Default for GraphVariant {
    fn default() -> Self {
        Self::FULL
    }
}

/// Every intermediate of the refined graph plus the propagated features.
#[derive(Debug, Clone)]
pub struct RefinedGraph {
    pub semantic: SparseGraph,
    pub cooccur: SparseGraph,
    pub merged: SparseGraph,
    pub normalized: SparseGraph,
    pub degrees: DegreeVector,
    pub features: EmbeddingMatrix,
}

impl RefinedGraph {
    pub fn build(
        items: &EmbeddingMatrix,
        train: &InteractionMatrix,
        cfg: &GraphConfig,
        variant: GraphVariant,
    ) -> Result<Self> {
        cfg.validate()?;
        if items.rows() != train.n_items() {
            return Err(GraphError::DimMismatch(format!(
                "{} item embeddings for {} items",
                items.rows(),
                train.n_items()
            )));
        }
        let alpha = if variant.denoise {
            cfg.alpha
        } else {
            f64::NEG_INFINITY
        };
        let semantic = semantic_graph(items, cfg.k_semantic, alpha)?;
        let cooccur = if variant.enhance {
            cooccur_graph(train, cfg.k_cooccur)
        } else {
            SparseGraph::empty(train.n_items(), Stage::Cooccur)
        };
        let mut merged = merge(&semantic, &cooccur)?;
        if cfg.symmetrize {
            merged = symmetrize(&merged)?;
        }
        let (normalized, degrees) = normalize(&merged)?;
        let layers = if variant.convolve { cfg.layers } else { 0 };
        let features = propagate(&normalized, items, layers)?;
        Ok(RefinedGraph {
            semantic,
            cooccur,
            merged,
            normalized,
            degrees,
            features,
        })
    }
}
