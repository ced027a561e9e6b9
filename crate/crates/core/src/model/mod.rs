//! The relation-aware attention graph convolution model.
//!
//! A layer scores every edge `(h, r, t)` with `aᵀ[W h_h ‖ W m_r ‖ W h_t]`,
//! normalizes the scores with a softmax over all edges entering `h`, and
//! aggregates relation-specific messages
//!
//! ```text
//! h_h' = σ( Σ_r Σ_{t ∈ N_h^r} α_(h,r,t) · (1/|N_h^r|) · W_r h_t + W_0 h_h )
//! ```
//!
//! where each `W_r` is a combination of shared basis matrices. Entity
//! embeddings from the last layer are scored with a diagonal bilinear
//! (DistMult) decoder and trained with a logistic loss.

mod attention;
mod decoder;
mod forward;
mod layer;
mod params;
mod trained;


use thiserror::Error;

use crate::graph::{AugmentOptions, GraphError};
use crate::numeric::NumericError;

pub use attention::{attention_logits, attention_normalize, AttentionMap};
pub use decoder::{bce_loss, distmult_score, score_triples};
pub use forward::{loss_on_tape, model_forward, training_loss, ForwardOutput, Mode};
pub use layer::{basis_expand, propagate_layer, Activation, LayerWeights};
pub use params::{ModelParams, ENTITY_TABLE};
pub use trained::TrainedModel;


#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("mode: {0}")]
    Mode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttnNonlinearity {
    /// The logit is the plain inner product.
    #[default]
    None,
    /// LeakyReLU with slope 0.2 applied to the logit.
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttnSchedule {
    /// Every layer scores edges from its own input features.
    #[default]
    PerLayer,
    /// Coefficients are computed once from the input features and reused.
    FirstLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    /// Hidden and output embedding size.
    pub dim: usize,
    pub bases: usize,
    pub attention: bool,
    pub attn_nonlinearity: AttnNonlinearity,
    pub attn_schedule: AttnSchedule,
    /// One attention vector `a` for all layers instead of one per layer.
    pub shared_attn_vector: bool,
    pub hidden_dropout: f64,
    pub attn_dropout: f64,
    pub augment: AugmentOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 100,
            bases: 2,
            attention: true,
            attn_nonlinearity: AttnNonlinearity::None,
            attn_schedule: AttnSchedule::PerLayer,
            shared_attn_vector: false,
            hidden_dropout: 0.0,
            attn_dropout: 0.0,
            augment: AugmentOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::Config("dim must be at least 1".into()));
        }
        if self.bases == 0 {
            return Err(ModelError::Config("bases must be at least 1".into()));
        }
        for (name, p) in [("hidden_dropout", self.hidden_dropout), ("attn_dropout", self.attn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModelError::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Whether layer `l` computes its own attention coefficients.
    pub(crate) fn layer_scores_edges(&self, l: usize) -> bool {
        self.attention && (self.attn_schedule == AttnSchedule::PerLayer || l == 0)
    }

    pub(crate) fn attn_vector_name(&self, l: usize) -> String {
        if self.shared_attn_vector {
            "attn_a".to_string()
        } else {
            format!("layer{l}.attn_a")
        }
    }
}
