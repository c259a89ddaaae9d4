//! Full-ranking Top-N evaluation with Recall@k and NDCG@k.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, InteractionMatrix};
use crate::embedder::EmbeddingMatrix;
use crate::model::{ModelError, ModelParams};

/// Per-user ordered top-N item lists, in the order users were requested.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankingResult {
    pub lists: Vec<(usize, Vec<usize>)>,
}

impl RankingResult {
    pub fn list_for(&self, user: usize) -> Option<&[usize]> {
        self.lists.iter().find(|(u, _)| *u == user).map(|(_, l)| l.as_slice())
    }
}

fn top_n(scores: impl Iterator<Item = (usize, f64)>, n: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = scores.collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cand.len() > n && n > 0 {
        cand.select_nth_unstable_by(n - 1, order);
        cand.truncate(n);
    }
    cand.sort_unstable_by(order);
    cand.truncate(n);
    cand.into_iter().map(|(i, _)| i).collect()
}

/// Ranks items by a dense `users x items` score matrix, skipping each user's
/// masked (training) items. Ties go to the lower item index.
pub fn rank_by_scores(
    scores: ArrayView2<'_, f64>,
    mask: Option<&InteractionMatrix>,
    users: &[usize],
    n: usize,
) -> RankingResult {
    let lists = users
        .par_iter()
        .map(|&u| {
            let row = scores.row(u);
            let masked: &[usize] = mask.map_or(&[], |m| m.items_of(u));
            let it = row
                .iter()
                .copied()
                .enumerate()
                .filter(|(i, _)| masked.binary_search(i).is_err());
            (u, top_n(it, n))
        })
        .collect();
    RankingResult { lists }
}

/// Projects every user and item once, then ranks all non-training items.
pub fn rank_all(
    params: &ModelParams,
    user_embeds: &EmbeddingMatrix,
    item_embeds: &EmbeddingMatrix,
    train_mask: &InteractionMatrix,
    users: &[usize],
    n: usize,
    slope: f64,
) -> Result<RankingResult, ModelError> {
    let scores = score_matrix(params, user_embeds, item_embeds, users, slope)?;
    Ok(rank_by_scores(scores.view(), Some(train_mask), users, n))
}

/// `H_u H_i^T` for the requested users (other rows are left at zero).
pub fn score_matrix(
    params: &ModelParams,
    user_embeds: &EmbeddingMatrix,
    item_embeds: &EmbeddingMatrix,
    users: &[usize],
    slope: f64,
) -> Result<Array2<f64>, ModelError> {
    let (h_items, _) = params.item.forward_batch(item_embeds.view(), slope)?;
    let rows: Vec<usize> = users.to_vec();
    let xu = user_embeds.as_array().select(ndarray::Axis(0), &rows);
    let (h_users, _) = params.user.forward_batch(xu.view(), slope)?;
    let block = h_users.dot(&h_items.t());
    let mut scores = Array2::zeros((user_embeds.rows(), item_embeds.rows()));
    for (k, &u) in users.iter().enumerate() {
        scores.row_mut(u).assign(&block.row(k));
    }
    Ok(scores)
}

fn per_user<F: Fn(&[usize], &HashSet<usize>) -> f64>(ranked: &RankingResult, truth: &[Vec<usize>], f: F) -> f64 {
    let vals: Vec<f64> = ranked
        .lists
        .iter()
        .filter(|(u, _)| !truth[*u].is_empty())
        .map(|(u, list)| f(list, &truth[*u].iter().copied().collect()))
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Mean over users with non-empty truth of `|top-k ∩ truth| / |truth|`.
pub fn recall_at_k(ranked: &RankingResult, truth: &[Vec<usize>], k: usize) -> f64 {
    per_user(ranked, truth, |list, t| {
        let hits = list.iter().take(k).filter(|i| t.contains(i)).count();
        hits as f64 / t.len() as f64
    })
}

/// Binary-relevance NDCG with the ideal DCG over `min(k, |truth|)` slots.
pub fn ndcg_at_k(ranked: &RankingResult, truth: &[Vec<usize>], k: usize) -> f64 {
    per_user(ranked, truth, |list, t| {
        let dcg: f64 = list
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, i)| t.contains(i))
            .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..k.min(t.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
        dcg / idcg
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_users_evaluated: usize,
}

/// Metrics for an existing ranking against `truth` at each `k`.
pub fn report(ranked: &RankingResult, truth: &[Vec<usize>], ks: &[usize]) -> MetricsReport {
    MetricsReport {
        recall: ks.iter().map(|&k| (k, recall_at_k(ranked, truth, k))).collect(),
        ndcg: ks.iter().map(|&k| (k, ndcg_at_k(ranked, truth, k))).collect(),
        n_users_evaluated: ranked.lists.iter().filter(|(u, _)| !truth[*u].is_empty()).count(),
    }
}

pub fn evaluate(
    params: &ModelParams,
    split: &DatasetSplit,
    user_embeds: &EmbeddingMatrix,
    item_embeds: &EmbeddingMatrix,
    target: Target,
    ks: &[usize],
    slope: f64,
) -> Result<(MetricsReport, RankingResult), ModelError> {
    let truth = match target {
        Target::Valid => &split.valid,
        Target::Test => &split.test,
    };
    let users: Vec<usize> = (0..split.n_users()).filter(|&u| !truth[u].is_empty()).collect();
    let n = ks.iter().copied().max().unwrap_or(20);
    let ranked = rank_all(params, user_embeds, item_embeds, &split.train, &users, n, slope)?;
    Ok((report(&ranked, truth, ks), ranked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, MlpParams};
    use ndarray::array;

    fn ranking(lists: Vec<Vec<usize>>) -> RankingResult {
        RankingResult {
            lists: lists.into_iter().enumerate().collect(),
        }
    }

    #[test]
    fn rank_hand_scores() {
        let s = array![[0.3, 0.9, 0.1]];
        assert_eq!(rank_by_scores(s.view(), None, &[0], 3).lists[0].1, vec![1, 0, 2]);
        let mask = InteractionMatrix::from_pairs(1, 3, [(0, 1)]);
        assert_eq!(rank_by_scores(s.view(), Some(&mask), &[0], 3).lists[0].1, vec![0, 2]);
        let tied = array![[0.5, 0.7, 0.5, 0.7]];
        assert_eq!(rank_by_scores(tied.view(), None, &[0], 4).lists[0].1, vec![1, 3, 0, 2]);
        assert_eq!(rank_by_scores(tied.view(), None, &[0], 1).lists[0].1, vec![1]);
    }

    #[test]
    fn rank_all_through_identity_projection() {
        // 1-dim identity MLPs: score = e_u * e_i
        let mut p = MlpParams::zeros(Dims {
            input: 1,
            hidden: 1,
            output: 1,
        });
        p.w1.fill(1.0);
        p.w2.fill(1.0);
        let params = ModelParams {
            user: p.clone(),
            item: p,
        };
        let users = EmbeddingMatrix::from_rows(vec![vec![1.0]]).unwrap();
        let items = EmbeddingMatrix::from_rows(vec![vec![0.3], vec![0.9], vec![0.1]]).unwrap();
        let mask = InteractionMatrix::from_pairs(1, 3, []);
        let r = rank_all(&params, &users, &items, &mask, &[0], 3, 0.01).unwrap();
        assert_eq!(r.lists[0].1, vec![1, 0, 2]);
    }

    #[test]
    fn recall_values() {
        let r = ranking(vec![vec![0, 5, 6, 7, 8, 9, 10, 11, 12, 13]]);
        assert_eq!(recall_at_k(&r, &[vec![0, 1]], 10), 0.5);
        assert_eq!(recall_at_k(&r, &[vec![0, 13]], 10), 1.0);
        assert_eq!(recall_at_k(&r, &[vec![2, 3]], 10), 0.0);
    }

    #[test]
    fn ndcg_values() {
        let r = ranking(vec![vec![4, 2, 9]]);
        assert_eq!(ndcg_at_k(&r, &[vec![4]], 10), 1.0);
        assert!((ndcg_at_k(&r, &[vec![2]], 10) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at_k(&r, &[vec![2]], 10) - 0.6309297535714575).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&r, &[vec![7]], 10), 0.0);
    }

    #[test]
    fn empty_truth_users_are_skipped() {
        let r = ranking(vec![vec![0], vec![1]]);
        let truth = vec![vec![0], vec![]];
        assert_eq!(recall_at_k(&r, &truth, 1), 1.0);
        assert_eq!(report(&r, &truth, &[1]).n_users_evaluated, 1);
    }
}
