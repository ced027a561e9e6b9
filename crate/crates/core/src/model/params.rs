use rand::Rng;

use super::{ModelConfig, ModelError};
use crate::numeric::{ParamStore, Tensor};

/// Name of the trainable entity table when features are not file-backed.
pub const ENTITY_TABLE: &str = "entity_emb";

/// All trainable tensors, under stable names:
///
/// | name | shape |
/// |---|---|
/// | `layer{l}.attn_W` | `d_in(l) × dim` |
/// | `layer{l}.attn_a` (or `attn_a` when shared) | `3·dim × 1` |
/// | `layer{l}.rel_W` (only when `d_feat ≠ d_in(l)`) | `d_feat × dim` |
/// | `rel_feats` | `R × d_feat` |
/// | `layer{l}.basis{b}` | `d_in(l) × dim` |
/// | `layer{l}.coeffs` | `R × B` |
/// | `layer{l}.self_W0` (self-loop on) | `d_in(l) × dim` |
/// | `distmult_diag` | `R × d_out` |
/// | `entity_emb` (table mode) | `N × d_feat` |
///
/// `R` counts relations after inverse augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    store: ParamStore,
}

pub(crate) fn layer_in_dim(cfg: &ModelConfig, feature_dim: usize, l: usize) -> usize {
    if l == 0 {
        feature_dim
    } else {
        cfg.dim
    }
}

pub(crate) fn output_dim(cfg: &ModelConfig, feature_dim: usize) -> usize {
    if cfg.layers == 0 {
        feature_dim
    } else {
        cfg.dim
    }
}

/// Whether layer `l` needs its own projection for relation features.
pub(crate) fn needs_rel_projection(cfg: &ModelConfig, feature_dim: usize, l: usize) -> bool {
    layer_in_dim(cfg, feature_dim, l) != feature_dim
}

impl ModelParams {
    /// Glorot-uniform matrices, zero attention vectors (uniform attention
    /// at the start) and DistMult diagonals of `1/√d`. `entity_table` is
    /// included as a trainable parameter when given.
    pub fn init<R: Rng>(
        cfg: &ModelConfig,
        feature_dim: usize,
        num_relations: usize,
        entity_table: Option<&Tensor>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate()?;
        if feature_dim == 0 {
            return Err(ModelError::Config("feature dimension must be at least 1".into()));
        }
        let d = cfg.dim;
        let mut store = ParamStore::new();
        if cfg.layers > 0 {
            store.insert("rel_feats", Tensor::glorot_uniform(num_relations, feature_dim, rng));
        }
        for l in 0..cfg.layers {
            let d_in = layer_in_dim(cfg, feature_dim, l);
            if cfg.attn_schedule == super::AttnSchedule::PerLayer || l == 0 {
                store.insert(format!("layer{l}.attn_W"), Tensor::glorot_uniform(d_in, d, rng));
                if needs_rel_projection(cfg, feature_dim, l) {
                    store.insert(format!("layer{l}.rel_W"), Tensor::glorot_uniform(feature_dim, d, rng));
                }
                store.insert(cfg.attn_vector_name(l), Tensor::zeros(3 * d, 1));
            }
            for b in 0..cfg.bases {
                store.insert(format!("layer{l}.basis{b}"), Tensor::glorot_uniform(d_in, d, rng));
            }
            store.insert(format!("layer{l}.coeffs"), Tensor::glorot_uniform(num_relations, cfg.bases, rng));
            if cfg.augment.add_self_loop {
                store.insert(format!("layer{l}.self_W0"), Tensor::glorot_uniform(d_in, d, rng));
            }
        }
        let d_out = output_dim(cfg, feature_dim);
        store.insert(
            "distmult_diag",
            Tensor::filled(num_relations, d_out, 1.0 / (d_out as f64).sqrt()),
        );
        if let Some(table) = entity_table {
            if table.cols() != feature_dim {
                return Err(ModelError::Config(format!(
                    "entity table has {} columns, expected {feature_dim}",
                    table.cols()
                )));
            }
            store.insert(super::ENTITY_TABLE, table.clone());
        }
        Ok(Self { store })
    }

    pub fn from_store(store: ParamStore) -> Result<Self, ModelError> {
        if !store.contains("distmult_diag") {
            return Err(ModelError::Config("parameters lack `distmult_diag`".into()));
        }
        if !store.is_finite() {
            return Err(ModelError::Config("parameters contain non-finite values".into()));
        }
        Ok(Self { store })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.store
            .get(name)
            .ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))
    }

    pub fn distmult_diag(&self) -> &Tensor {
        self.store.get("distmult_diag").expect("checked at construction")
    }

    pub fn entity_table(&self) -> Option<&Tensor> {
        self.store.get(super::ENTITY_TABLE)
    }

    pub fn num_relations(&self) -> usize {
        self.distmult_diag().rows()
    }

    /// Names of the parameters that only the attention path reads.
    pub fn attention_param_names(&self) -> Vec<String> {
        self.store
            .names()
            .filter(|n| n.ends_with("attn_W") || n.ends_with("attn_a") || n.ends_with("rel_W") || *n == "rel_feats")
            .map(str::to_string)
            .collect()
    }
}
