use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use super::{ModelError, ModelParams, Result, TripletBatch};
use crate::embedder::EmbeddingMatrix;

/// `-ln(sigmoid(x))`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `d/dx [-ln(sigmoid(x))] = -sigmoid(-x)`.
fn neg_log_sigmoid_grad(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + x.exp())
    }
}

/// Dense local indices for the distinct rows a batch touches.
fn local_index(ids: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut map: BTreeMap<usize, usize> = ids.map(|i| (i, 0)).collect();
    for (k, v) in map.values_mut().enumerate() {
        *v = k;
    }
    map
}

fn gather(m: &EmbeddingMatrix, index: &BTreeMap<usize, usize>) -> Array2<f64> {
    let rows: Vec<usize> = index.keys().copied().collect();
    m.as_array().select(Axis(0), &rows)
}

/// Summed BPR loss over the batch and its gradient with respect to both MLPs.
///
/// Each distinct user and item in the batch is projected once; the
/// per-triplet score-gap gradients are scattered onto those rows and pushed
/// back through the MLPs. With `weight_decay > 0`, `weight_decay * |theta|^2`
/// over every parameter is added.
pub fn bpr_loss_and_grads(
    params: &ModelParams,
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
    batch: &TripletBatch,
    slope: f64,
    weight_decay: f64,
) -> Result<(f64, ModelParams)> {
    params.check()?;
    for &(u, p, n) in batch.triplets() {
        if u >= users.rows() || p >= items.rows() || n >= items.rows() {
            return Err(ModelError::ShapeMismatch(format!(
                "triplet ({u},{p},{n}) outside {} users / {} items",
                users.rows(),
                items.rows()
            )));
        }
    }
    let u_idx = local_index(batch.triplets().iter().map(|t| t.0));
    let i_idx = local_index(batch.triplets().iter().flat_map(|t| [t.1, t.2]));
    let xu = gather(users, &u_idx);
    let xi = gather(items, &i_idx);
    let (hu, cache_u) = params.user.forward_batch(xu.view(), slope)?;
    let (hi, cache_i) = params.item.forward_batch(xi.view(), slope)?;

    let mut loss = 0.0;
    let mut d_hu = Array2::zeros(hu.raw_dim());
    let mut d_hi = Array2::zeros(hi.raw_dim());
    for &(u, p, n) in batch.triplets() {
        let (lu, lp, ln) = (u_idx[&u], i_idx[&p], i_idx[&n]);
        let (row_u, row_p, row_n) = (hu.row(lu), hi.row(lp), hi.row(ln));
        let gap = row_u.dot(&row_p) - row_u.dot(&row_n);
        loss += neg_log_sigmoid(gap);
        let g = neg_log_sigmoid_grad(gap);
        let diff = &row_p - &row_n;
        d_hu.row_mut(lu).scaled_add(g, &diff);
        d_hi.row_mut(lp).scaled_add(g, &row_u);
        d_hi.row_mut(ln).scaled_add(-g, &row_u);
    }

    let mut grads = ModelParams {
        user: params.user.backward(xu.view(), &cache_u, d_hu.view(), slope),
        item: params.item.backward(xi.view(), &cache_i, d_hi.view(), slope),
    };
    if weight_decay > 0.0 {
        loss += weight_decay * params.squared_norm();
        for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
            for (gv, pv) in g.iter_mut().zip(p) {
                *gv += 2.0 * weight_decay * pv;
            }
        }
    }
    if !loss.is_finite() || grads.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::NonFinite);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, MlpParams};

    #[test]
    fn stable_sigmoid_terms() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!(neg_log_sigmoid(800.0) >= 0.0 && neg_log_sigmoid(800.0) < 1e-300);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!((neg_log_sigmoid_grad(0.0) + 0.5).abs() < 1e-16);
    }

    #[test]
    fn zero_gap_gives_ln2_per_triplet() {
        // Zero output weights: every score is the bias product, so gaps vanish.
        let dims = Dims {
            input: 2,
            hidden: 3,
            output: 2,
        };
        let mut params = ModelParams {
            user: MlpParams::zeros(dims),
            item: MlpParams::zeros(dims),
        };
        params.user.b2.fill(0.7);
        params.item.b2.fill(-0.2);
        let users = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap();
        let items = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]]).unwrap();
        let batch = TripletBatch::new(vec![(0, 0, 1), (1, 2, 0), (0, 1, 2)]);
        let (loss, _) = bpr_loss_and_grads(&params, &users, &items, &batch, 0.01, 0.0).unwrap();
        assert!((loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_gap_gives_vanishing_loss() {
        let dims = Dims {
            input: 1,
            hidden: 1,
            output: 1,
        };
        let mut params = ModelParams {
            user: MlpParams::zeros(dims),
            item: MlpParams::zeros(dims),
        };
        params.user.b2.fill(1.0);
        params.item.w1.fill(1.0);
        params.item.w2.fill(1.0);
        let users = EmbeddingMatrix::from_rows(vec![vec![0.0]]).unwrap();
        let items = EmbeddingMatrix::from_rows(vec![vec![50.0], vec![0.0]]).unwrap();
        let batch = TripletBatch::new(vec![(0, 0, 1)]);
        let (loss, _) = bpr_loss_and_grads(&params, &users, &items, &batch, 0.01, 0.0).unwrap();
        assert!(loss > 0.0 && loss < 1e-20);
    }
}
