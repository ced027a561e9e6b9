use std::collections::BTreeMap;

use super::{model_forward, AttnNonlinearity, AttnSchedule, Mode, ModelConfig, ModelError, ModelParams};
use crate::graph::{AugmentOptions, AugmentedGraph, FeatureMode, FeatureSource, Triple, Vocab};
use crate::numeric::{Checkpoint, Tensor};

/// A model together with everything needed to apply it later: its
/// configuration, the feature layout it was trained on and the
/// vocabularies of the training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub feature_dim: usize,
    pub feature_mode: FeatureMode,
    pub entities: Vocab,
    /// Base (non-inverse) relation vocabulary.
    pub relations: Vocab,
}

fn flag(v: bool) -> String {
    if v { "true" } else { "false" }.to_string()
}

impl TrainedModel {
    pub fn augment(&self, num_entities: usize, triples: &[Triple]) -> AugmentedGraph {
        AugmentedGraph::build(num_entities, self.relations.len(), triples, self.config.augment)
    }

    /// Final-layer embeddings for `graph`, dropout disabled.
    pub fn embed(&self, graph: &AugmentedGraph, features: &FeatureSource) -> Result<Tensor, ModelError> {
        if features.dim() != self.feature_dim {
            return Err(ModelError::Config(format!(
                "features have dimension {}, model expects {}",
                features.dim(),
                self.feature_dim
            )));
        }
        Ok(model_forward(graph, features, &self.params, &self.config, Mode::Eval)?.embeddings)
    }

    pub fn config_map(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("model.{k}"), v);
        };
        put("layers", c.layers.to_string());
        put("dim", c.dim.to_string());
        put("bases", c.bases.to_string());
        put("attention", flag(c.attention));
        put(
            "attn_nonlinearity",
            match c.attn_nonlinearity {
                AttnNonlinearity::None => "none",
                AttnNonlinearity::LeakyRelu => "leaky_relu",
            }
            .into(),
        );
        put(
            "attn_schedule",
            match c.attn_schedule {
                AttnSchedule::PerLayer => "per_layer",
                AttnSchedule::FirstLayer => "first_layer",
            }
            .into(),
        );
        put("shared_attn_vector", flag(c.shared_attn_vector));
        put("hidden_dropout", c.hidden_dropout.to_string());
        put("attn_dropout", c.attn_dropout.to_string());
        put("inverse", flag(c.augment.add_inverse));
        put("self_loop", flag(c.augment.add_self_loop));
        put("feature_dim", self.feature_dim.to_string());
        put(
            "feature_mode",
            match self.feature_mode {
                FeatureMode::File => "file",
                FeatureMode::Table => "table",
            }
            .into(),
        );
        m
    }

    pub fn to_checkpoint(&self, config_hash: &str, run_config: &BTreeMap<String, String>) -> Checkpoint {
        let mut ck = Checkpoint::new(config_hash, self.params.store().clone());
        ck.config = run_config.clone();
        ck.config.extend(self.config_map());
        ck.vocabularies.insert("entities".into(), self.entities.ids().to_vec());
        ck.vocabularies.insert("relations".into(), self.relations.ids().to_vec());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let get = |k: &str| {
            ck.config
                .get(&format!("model.{k}"))
                .map(String::as_str)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks `model.{k}`")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Config(format!("bad `model.{k}`")))
        };
        let real = |k: &str| -> Result<f64, ModelError> {
            get(k)?.parse().map_err(|_| ModelError::Config(format!("bad `model.{k}`")))
        };
        let boolean = |k: &str| -> Result<bool, ModelError> {
            match get(k)? {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ModelError::Config(format!("bad `model.{k}`"))),
            }
        };
        let config = ModelConfig {
            layers: num("layers")?,
            dim: num("dim")?,
            bases: num("bases")?,
            attention: boolean("attention")?,
            attn_nonlinearity: match get("attn_nonlinearity")? {
                "none" => AttnNonlinearity::None,
                "leaky_relu" => AttnNonlinearity::LeakyRelu,
                other => return Err(ModelError::Config(format!("unknown attn_nonlinearity `{other}`"))),
            },
            attn_schedule: match get("attn_schedule")? {
                "per_layer" => AttnSchedule::PerLayer,
                "first_layer" => AttnSchedule::FirstLayer,
                other => return Err(ModelError::Config(format!("unknown attn_schedule `{other}`"))),
            },
            shared_attn_vector: boolean("shared_attn_vector")?,
            hidden_dropout: real("hidden_dropout")?,
            attn_dropout: real("attn_dropout")?,
            augment: AugmentOptions {
                add_inverse: boolean("inverse")?,
                add_self_loop: boolean("self_loop")?,
            },
        };
        config.validate()?;
        let feature_mode = match get("feature_mode")? {
            "file" => FeatureMode::File,
            "table" => FeatureMode::Table,
            other => return Err(ModelError::Config(format!("unknown feature_mode `{other}`"))),
        };
        let vocab = |k: &str| -> Result<Vocab, ModelError> {
            let ids = ck
                .vocabularies
                .get(k)
                .ok_or_else(|| ModelError::Config(format!("checkpoint lacks the `{k}` vocabulary")))?;
            Ok(Vocab::from_ids(ids.iter().cloned())?)
        };
        let params = ModelParams::from_store(ck.params.clone())?;
        let model = Self {
            config,
            params,
            feature_dim: num("feature_dim")?,
            feature_mode,
            entities: vocab("entities")?,
            relations: vocab("relations")?,
        };
        let expected_rel = if model.config.augment.add_inverse {
            2 * model.relations.len()
        } else {
            model.relations.len()
        };
        if model.params.num_relations() != expected_rel {
            return Err(ModelError::Config(format!(
                "checkpoint has {} relation diagonals for {} relation types",
                model.params.num_relations(),
                expected_rel
            )));
        }
        Ok(model)
    }
}
