use serde::Serialize;

use super::{semantic_neighbors, Result};
use crate::embedder::EmbeddingMatrix;

/// Equal-width histogram of cosine similarities over `[-1, 1]`. The last
/// bin is closed so that a similarity of exactly 1 is counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityHistogram {
    pub counts: Vec<usize>,
}

impl SimilarityHistogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        SimilarityHistogram {
            counts: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        2.0 / self.bins() as f64
    }

    /// `[lo, hi)` of bin `i`.
    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        (-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w)
    }

    pub fn bin_of(&self, s: f64) -> usize {
        let i = ((s + 1.0) / self.width()).floor();
        (i.max(0.0) as usize).min(self.bins() - 1)
    }

    pub fn add(&mut self, s: f64) {
        let i = self.bin_of(s);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Edges in bins lying entirely below `x`.
    pub fn mass_below(&self, x: f64) -> usize {
        (0..self.bins())
            .filter(|&i| self.bin_range(i).1 <= x + 1e-12)
            .map(|i| self.counts[i])
            .sum()
    }
}

/// Similarities of the edges plain KNN would keep (no threshold), binned.
/// Low-similarity mass here is what thresholding removes.
pub fn edge_similarity_histogram(items: &EmbeddingMatrix, k: usize, bins: usize) -> Result<SimilarityHistogram> {
    let mut hist = SimilarityHistogram::new(bins);
    for row in semantic_neighbors(items, k, f64::NEG_INFINITY)? {
        for (_, s) in row {
            hist.add(s);
        }
    }
    Ok(hist)
}
