//! User/item MLP projections trained with a BPR ranking loss.
//!
//! Only the MLP parameters are trainable. Encoder outputs and propagated item
//! features are inputs, computed once upstream.

mod adam;
mod bpr;
mod checkpoint;
mod mlp;
mod sampler;
mod train;

use rand::Rng;
use thiserror::Error;

use crate::digest::sha256_hex;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use bpr::{bpr_loss_and_grads, neg_log_sigmoid};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use mlp::{leaky_relu, mlp_forward, score, Dims, ForwardCache, MlpParams};
pub use sampler::{sample_triplets, TripletBatch, TripletSampler};
pub use train::{train, train_with_validator, EpochRecord, TrainConfig, TrainHistory, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss or gradient")]
    NonFinite,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training matrix has no sampleable pairs")]
    NoTrainingPairs,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Separate user-side and item-side MLPs of identical architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub user: MlpParams,
    pub item: MlpParams,
}

impl ModelParams {
    pub fn xavier<R: Rng>(dims: Dims, rng: &mut R) -> Self {
        let user = MlpParams::xavier(dims, rng);
        let item = MlpParams::xavier(dims, rng);
        ModelParams { user, item }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            user: MlpParams::zeros(self.user.dims()),
            item: MlpParams::zeros(self.item.dims()),
        }
    }

    pub fn dims(&self) -> Dims {
        self.user.dims()
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.user.check()?;
        self.item.check()?;
        if self.user.dims() != self.item.dims() {
            return Err(ModelError::ShapeMismatch(format!(
                "user MLP {:?} differs from item MLP {:?}",
                self.user.dims(),
                self.item.dims()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|(a, b)| a.len() == b.len())
            && self.user.w1.dim() == other.user.w1.dim()
            && self.item.w1.dim() == other.item.w1.dim()
            && self.user.w2.dim() == other.user.w2.dim()
            && self.item.w2.dim() == other.item.w2.dim()
    }

    /// Flat views in a fixed order: user W1, b1, W2, b2, then item.
    pub fn tensors(&self) -> [&[f64]; 8] {
        let [a, b, c, d] = self.user.tensors();
        let [e, f, g, h] = self.item.tensors();
        [a, b, c, d, e, f, g, h]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        let [a, b, c, d] = self.user.tensors_mut();
        let [e, f, g, h] = self.item.tensors_mut();
        [a, b, c, d, e, f, g, h]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    pub fn checksum(&self) -> String {
        let bytes: Vec<u8> = self
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .flat_map(|v| v.to_le_bytes())
            .collect();
        sha256_hex(bytes)
    }
}
