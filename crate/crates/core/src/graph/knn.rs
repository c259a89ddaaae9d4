use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;

use super::{GraphError, Result, SparseGraph, Stage};
use crate::corpus::InteractionMatrix;
use crate::embedder::EmbeddingMatrix;

const ROW_BLOCK: usize = 256;

/// Candidate ordered so that the heap top is the worst kept neighbor:
/// lower score is worse, and on equal scores the higher index is worse.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.index.cmp(&other.index))
    }
}

/// Keeps the `k` best `(index, score)` pairs, best first.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, index: usize, score: f64) {
        let c = Candidate { score, index };
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_sorted(self) -> Vec<(usize, f64)> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index, c.score))
            .collect()
    }
}

fn unit_rows(items: &EmbeddingMatrix) -> Result<Array2<f64>> {
    let mut unit = items.as_array().clone();
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(GraphError::ZeroNormRow(i));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(unit)
}

/// Per item, the top-`k` other items by cosine similarity among those with
/// similarity `>= alpha`, as `(neighbor, cosine)` best first. Ties at equal
/// similarity go to the lower index. Similarities are produced one row block
/// at a time, so the full item x item matrix is never allocated.
pub fn semantic_neighbors(items: &EmbeddingMatrix, k: usize, alpha: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = items.rows();
    if n < 2 {
        return Err(GraphError::TooFewItems(n));
    }
    let unit = unit_rows(items)?;
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let blocks: Vec<Vec<Vec<(usize, f64)>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + ROW_BLOCK).min(n);
            let sims = unit.slice(s![start..end, ..]).dot(&unit.t());
            sims.axis_iter(Axis(0))
                .enumerate()
                .map(|(r, row)| {
                    let a = start + r;
                    let mut top = TopK::new(k);
                    for (b, &s) in row.iter().enumerate() {
                        if b != a && s >= alpha {
                            top.push(b, s);
                        }
                    }
                    top.into_sorted()
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Thresholded semantic KNN graph with unit weights. Pass
/// `f64::NEG_INFINITY` as `alpha` for plain KNN.
pub fn semantic_graph(items: &EmbeddingMatrix, k: usize, alpha: f64) -> Result<SparseGraph> {
    let rows = semantic_neighbors(items, k, alpha)?
        .into_iter()
        .map(|row| row.into_iter().map(|(b, _)| (b, 1.0)).collect())
        .collect();
    SparseGraph::from_rows(items.rows(), Stage::Semantic, rows)
}

/// Jaccard similarity of two sorted user lists.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Audience co-occurrence KNN graph weighted by Jaccard similarity of the
/// items' user sets. Intersections are counted by walking user lists, so
/// only pairs with a shared user are ever scored.
pub fn cooccur_graph(train: &InteractionMatrix, k: usize) -> SparseGraph {
    let n = train.n_items();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0usize; n], Vec::new()),
            |(counts, touched), a| {
                for &u in train.users_of(a) {
                    for &b in train.items_of(u) {
                        if b != a {
                            if counts[b] == 0 {
                                touched.push(b);
                            }
                            counts[b] += 1;
                        }
                    }
                }
                let deg_a = train.users_of(a).len();
                let mut top = TopK::new(k);
                for &b in touched.iter() {
                    let inter = counts[b];
                    let union = deg_a + train.users_of(b).len() - inter;
                    top.push(b, inter as f64 / union as f64);
                    counts[b] = 0;
                }
                touched.clear();
                top.into_sorted()
            },
        )
        .collect();
    SparseGraph::from_rows(n, Stage::Cooccur, rows).expect("co-occurrence rows are valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn topk_prefers_lower_index_on_ties() {
        let mut t = TopK::new(2);
        t.push(5, 0.5);
        t.push(3, 0.5);
        t.push(1, 0.2);
        t.push(4, 0.5);
        assert_eq!(t.into_sorted(), vec![(3, 0.5), (4, 0.5)]);
    }

    #[test]
    fn identical_rows_fully_connected() {
        let g = semantic_graph(&emb(vec![vec![1.0, 2.0]; 3]), 2, 0.5).unwrap();
        assert_eq!(g.n_edges(), 6);
        assert!(g.edges().all(|(a, b, w)| a != b && w == 1.0));
    }

    #[test]
    fn orthogonal_rows_have_no_edges() {
        let g = semantic_graph(&emb(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 1, 0.5).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn zero_norm_row_is_reported() {
        let err = semantic_graph(&emb(vec![vec![1.0, 0.0], vec![0.0, 0.0]]), 1, 0.5).unwrap_err();
        assert!(matches!(err, GraphError::ZeroNormRow(1)));
        assert!(matches!(
            semantic_graph(&emb(vec![vec![1.0]]), 1, 0.5),
            Err(GraphError::TooFewItems(1))
        ));
    }

    #[test]
    fn jaccard_hand_values() {
        // {u1,u2,u3} vs {u2,u3,u4}: |∩| = 2, |∪| = 4
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[1, 2], &[1, 2]), 1.0);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
    }

    #[test]
    fn cooccur_hand_instance() {
        // item 0: users {1,2,3}; item 1: {2,3,4}; item 2: {1,2,3}; item 3: {5}
        let m = InteractionMatrix::from_pairs(
            6,
            4,
            [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (4, 1), (1, 2), (2, 2), (3, 2), (5, 3)],
        );
        let g = cooccur_graph(&m, 5);
        assert_eq!(g.weight(0, 1), Some(0.5));
        assert_eq!(g.weight(0, 2), Some(1.0));
        assert_eq!(g.out_degree(3), 0);
        assert_eq!(g.weight(1, 3), None);
        let g1 = cooccur_graph(&m, 1);
        assert_eq!(g1.neighbors(0).collect::<Vec<_>>(), vec![(2, 1.0)]);
        // tie between items 0 and 2 (both 0.5) resolved to the lower index
        assert_eq!(g1.neighbors(1).collect::<Vec<_>>(), vec![(0, 0.5)]);
    }
}
