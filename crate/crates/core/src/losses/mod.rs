//! Classification and metric-learning losses with analytic gradients.
//!
//! All losses work in `f64` on [`Matrix`] inputs and return a [`LossOutput`]
//! carrying the batch-mean value and the gradient with respect to every
//! differentiable input that took part.

mod arcface;
mod combined;
mod smoothing;
mod triplet;

pub use arcface::{arcface_logits, arcface_loss, ArcFaceHead, COS_CLAMP};
pub use combined::{combined_loss, CombinedLossConfig, LossMode, ModelOutputs};
pub use smoothing::{ce_smoothed, ce_with_distribution, log_softmax, smooth_targets, softmax, target_matrix, SmoothedTarget};
pub use triplet::{batch_hard_triplet, pairwise_euclidean, TripletConfig};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Default)]
pub struct LossOutput {
    pub value: f64,
    /// Gradient with respect to class logits (`N × K`).
    pub grad_logits: Option<Matrix>,
    /// Gradient with respect to embeddings (`N × D`).
    pub grad_embeddings: Option<Matrix>,
    /// Gradient with respect to the ArcFace class weights (`K × D`).
    pub grad_head: Option<Matrix>,
}

impl LossOutput {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && [&self.grad_logits, &self.grad_embeddings, &self.grad_head]
                .into_iter()
                .flatten()
                .all(Matrix::all_finite)
    }
}

fn check_finite(m: &Matrix, what: &str) -> crate::Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(crate::Error::Input(format!("{what} contain NaN or infinite values")))
    }
}
