use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bpr_loss_and_grads, AdamState, Dims, ModelError, ModelParams, Result, TripletSampler};
use crate::corpus::{DatasetSplit, InteractionMatrix};
use crate::embedder::EmbeddingMatrix;
use crate::eval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Output width `d`.
    pub d: usize,
    /// Hidden width `d1`.
    pub d1: usize,
    pub max_epochs: usize,
    /// Epochs without a validation Recall@20 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2048,
            learning_rate: 0.001,
            d: 64,
            d1: 256,
            max_epochs: 1000,
            patience: 20,
            seed: 2024,
            leaky_slope: 0.01,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Also rejects NaN in every real-valued field.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let counts = [self.batch_size, self.d, self.d1, self.max_epochs, self.patience];
        if counts.contains(&0) {
            return Err(ModelError::BadConfig("batch size, dims, epochs and patience must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::BadConfig("learning rate must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::BadConfig("leaky slope must lie in (0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ModelError::BadConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean BPR loss per sampled triplet.
    pub loss: f64,
    pub recall20: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,recall20\n");
        for r in &self.epochs {
            writeln!(out, "{},{},{}", r.epoch, r.loss, r.recall20).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some("epoch,loss,recall20") {
            return Err("missing history header".into());
        }
        let epochs = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 3 {
                    return Err(format!("bad history line {l:?}"));
                }
                let bad = |_| format!("bad history line {l:?}");
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| format!("bad history line {l:?}"))?,
                    loss: f[1].parse().map_err(bad)?,
                    recall20: f[2].parse().map_err(bad)?,
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainHistory { epochs })
    }

    /// Latest epoch with the highest validation recall.
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.recall20 > r.recall20 => Some(b),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    /// Optimizer state at the best epoch.
    pub adam: AdamState,
    pub best_epoch: usize,
    pub history: TrainHistory,
}

/// Epoch loop with a caller-supplied validation score (higher is better).
/// A score at least as good as the best so far counts as an improvement: it
/// replaces the kept parameters and resets the patience counter.
pub fn train_with_validator<F>(
    train: &InteractionMatrix,
    user_embeds: &EmbeddingMatrix,
    item_embeds: &EmbeddingMatrix,
    cfg: &TrainConfig,
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelParams) -> f64,
{
    cfg.validate()?;
    if user_embeds.rows() != train.n_users() || item_embeds.rows() != train.n_items() {
        return Err(ModelError::ShapeMismatch(format!(
            "{}x{} embeddings for {} users and {} items",
            user_embeds.rows(),
            item_embeds.rows(),
            train.n_users(),
            train.n_items()
        )));
    }
    if user_embeds.dim() != item_embeds.dim() {
        return Err(ModelError::ShapeMismatch(format!(
            "user width {} differs from item width {}",
            user_embeds.dim(),
            item_embeds.dim()
        )));
    }
    let sampler = TripletSampler::new(train);
    if sampler.n_pairs() == 0 {
        return Err(ModelError::NoTrainingPairs);
    }
    let dims = Dims {
        input: user_embeds.dim(),
        hidden: cfg.d1,
        output: cfg.d,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::xavier(dims, &mut rng);
    let mut adam = AdamState::new(&params);

    let batch = cfg.batch_size.min(sampler.n_pairs());
    let n_batches = sampler.n_pairs().div_ceil(batch);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams, AdamState)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        for _ in 0..n_batches {
            let triplets = sampler.sample(batch, &mut rng);
            let (loss, grads) = bpr_loss_and_grads(
                &params,
                user_embeds,
                item_embeds,
                &triplets,
                cfg.leaky_slope,
                cfg.weight_decay,
            )?;
            total += loss;
            adam.step(&mut params, &grads, cfg.learning_rate)?;
        }
        let recall20 = validate(&params);
        history.epochs.push(EpochRecord {
            epoch,
            loss: total / (n_batches * batch) as f64,
            recall20,
        });
        log::debug!("epoch {epoch}: recall@20 {recall20:.4}");
        match &best {
            Some((score, ..)) if recall20 < *score => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((recall20, epoch, params.clone(), adam.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, params, adam) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        adam,
        best_epoch,
        history,
    })
}

/// Trains on `split.train`, early-stopping on validation Recall@20.
pub fn train(
    split: &DatasetSplit,
    user_embeds: &EmbeddingMatrix,
    item_embeds: &EmbeddingMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let users: Vec<usize> = (0..split.n_users()).filter(|&u| !split.valid[u].is_empty()).collect();
    train_with_validator(&split.train, user_embeds, item_embeds, cfg, |params| {
        let ranking = eval::rank_all(params, user_embeds, item_embeds, &split.train, &users, 20, cfg.leaky_slope)
            .expect("shapes validated before training");
        eval::recall_at_k(&ranking, &split.valid, 20)
    })
}
