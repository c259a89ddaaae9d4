use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::{DegreeVector, GraphError, Result, SparseGraph, Stage};
use crate::embedder::EmbeddingMatrix;

fn sum_rows(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(x, wx)), Some(&(y, wy))) if x == y => {
                out.push((x, wx + wy));
                i += 1;
                j += 1;
            }
            (Some(&(x, wx)), Some(&(y, _))) if x < y => {
                out.push((x, wx));
                i += 1;
            }
            (Some(&(x, wx)), None) => {
                out.push((x, wx));
                i += 1;
            }
            (_, Some(&(y, wy))) => {
                out.push((y, wy));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// `S* = S~ + C~`; the edge set is the union of both.
pub fn merge(semantic: &SparseGraph, cooccur: &SparseGraph) -> Result<SparseGraph> {
    semantic.expect_stage(Stage::Semantic)?;
    cooccur.expect_stage(Stage::Cooccur)?;
    if semantic.n() != cooccur.n() {
        return Err(GraphError::DimMismatch(format!(
            "semantic graph has {} items, co-occurrence graph {}",
            semantic.n(),
            cooccur.n()
        )));
    }
    let (a, b) = (semantic.rows(), cooccur.rows());
    let rows = a.iter().zip(&b).map(|(x, y)| sum_rows(x, y)).collect();
    SparseGraph::from_rows(semantic.n(), Stage::Merged, rows)
}

/// `max(S*, S*^T)` elementwise.
pub fn symmetrize(merged: &SparseGraph) -> Result<SparseGraph> {
    merged.expect_stage(Stage::Merged)?;
    let mut rows = merged.rows();
    for (a, b, w) in merged.edges() {
        match rows[b].binary_search_by_key(&a, |&(d, _)| d) {
            Ok(k) => rows[b][k].1 = rows[b][k].1.max(w),
            Err(k) => rows[b].insert(k, (a, w)),
        }
    }
    SparseGraph::from_rows(merged.n(), Stage::Merged, rows)
}

/// `N^{-1/2} S* N^{-1/2}` with `N_aa` the row sums of `S*`. A zero degree
/// contributes a zero factor, so edges touching such an item get weight 0.
pub fn normalize(merged: &SparseGraph) -> Result<(SparseGraph, DegreeVector)> {
    merged.expect_stage(Stage::Merged)?;
    let degrees: Vec<f64> = (0..merged.n()).map(|a| merged.row_sum(a)).collect();
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let rows = (0..merged.n())
        .map(|a| {
            merged
                .neighbors(a)
                .map(|(b, w)| (b, w * inv_sqrt[a] * inv_sqrt[b]))
                .collect()
        })
        .collect();
    let g = SparseGraph::from_rows(merged.n(), Stage::Normalized, rows)?;
    Ok((g, DegreeVector(degrees)))
}

fn spmm(g: &SparseGraph, x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(a, mut row)| {
            for (b, w) in g.neighbors(a) {
                row.scaled_add(w, &x.row(b));
            }
        });
    out
}

/// `E* = sum_{l=0}^{L} A^l E0` over the normalized graph.
pub fn propagate(normalized: &SparseGraph, e0: &EmbeddingMatrix, layers: usize) -> Result<EmbeddingMatrix> {
    normalized.expect_stage(Stage::Normalized)?;
    if e0.rows() != normalized.n() {
        return Err(GraphError::DimMismatch(format!(
            "{} feature rows for a graph over {} items",
            e0.rows(),
            normalized.n()
        )));
    }
    let mut layer = e0.as_array().clone();
    let mut total = layer.clone();
    for _ in 0..layers {
        layer = spmm(normalized, &layer);
        total += &layer;
    }
    Ok(EmbeddingMatrix::new(total).expect("propagation of finite features stays finite"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn merged(n: usize, edges: &[(usize, usize, f64)]) -> SparseGraph {
        SparseGraph::from_edges(n, Stage::Merged, edges).unwrap()
    }

    #[test]
    fn merge_sums_overlapping_edges() {
        let s = SparseGraph::from_edges(3, Stage::Semantic, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let c = SparseGraph::from_edges(3, Stage::Cooccur, &[(0, 1, 0.5), (2, 0, 0.25)]).unwrap();
        let m = merge(&s, &c).unwrap();
        assert_eq!(
            m.edges().collect::<Vec<_>>(),
            vec![(0, 1, 1.5), (1, 2, 1.0), (2, 0, 0.25)]
        );
        let empty = SparseGraph::empty(3, Stage::Cooccur);
        let only_s = merge(&s, &empty).unwrap();
        assert_eq!(only_s.edges().collect::<Vec<_>>(), s.edges().collect::<Vec<_>>());
    }

    #[test]
    fn merge_checks_stages_and_sizes() {
        let s = SparseGraph::empty(3, Stage::Semantic);
        assert!(matches!(merge(&s, &s), Err(GraphError::WrongStage { .. })));
        let c = SparseGraph::empty(4, Stage::Cooccur);
        assert!(matches!(merge(&s, &c), Err(GraphError::DimMismatch(_))));
    }

    #[test]
    fn normalize_two_items() {
        let (g, d) = normalize(&merged(2, &[(0, 1, 1.0), (1, 0, 1.0)])).unwrap();
        assert_eq!(g.weight(0, 1), Some(1.0));
        assert_eq!(g.weight(1, 0), Some(1.0));
        assert_eq!(d.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn normalize_uneven_degrees() {
        // item 0 row sum 4, item 1 row sum 1: 1 / (2 * 1)
        let m = merged(
            6,
            &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0), (1, 5, 1.0)],
        );
        let (g, d) = normalize(&m).unwrap();
        assert_eq!(d.get(0), 4.0);
        assert_eq!(g.weight(0, 1), Some(0.5));
        // items 2..5 have no out-edges: zero degree, zero incident weights
        assert_eq!(g.weight(0, 2), Some(0.0));
        assert_eq!(d.get(5), 0.0);
    }

    #[test]
    fn propagate_zero_layers_is_identity() {
        let (g, _) = normalize(&merged(2, &[(0, 1, 1.0), (1, 0, 1.0)])).unwrap();
        let e0 = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(propagate(&g, &e0, 0).unwrap(), e0);
        let e2 = propagate(&g, &e0, 2).unwrap();
        // A swaps rows; A^2 = I: e0 + swap(e0) + e0
        assert_eq!(e2.to_rows(), vec![vec![5.0, 8.0], vec![7.0, 10.0]]);
    }

    #[test]
    fn isolated_item_keeps_its_features() {
        let (g, _) = normalize(&merged(3, &[(0, 1, 1.0), (1, 0, 1.5)])).unwrap();
        let e0 = EmbeddingMatrix::from_rows(vec![vec![1.0], vec![2.0], vec![7.0]]).unwrap();
        for l in 0..4 {
            assert_eq!(propagate(&g, &e0, l).unwrap().row(2)[0], 7.0);
        }
    }

    #[test]
    fn symmetrize_takes_max() {
        let m = merged(3, &[(0, 1, 1.0), (1, 0, 1.5), (2, 0, 0.5)]);
        let s = symmetrize(&m).unwrap();
        assert_eq!(
            s.edges().collect::<Vec<_>>(),
            vec![(0, 1, 1.5), (0, 2, 0.5), (1, 0, 1.5), (2, 0, 0.5)]
        );
    }
}
