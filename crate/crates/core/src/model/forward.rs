use rand::Rng as _;

use super::attention::{logits_on_tape, normalize_on_tape};
use super::decoder::scores_on_tape;
use super::layer::{activate, aggregate_on_tape, basis_on_tape};
use super::params::{layer_in_dim, needs_rel_projection, output_dim};
use super::{Activation, AttentionMap, ModelConfig, ModelError, ModelParams, ENTITY_TABLE};
use crate::graph::{AugmentedGraph, FeatureMode, FeatureSource, LabeledTripleBatch};
use crate::numeric::{evaluate_with_gradients, Bindings, ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

/// Inference or training. Dropout is applied only in training mode and
/// draws its masks from the given stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final-layer entity embeddings, `N × d_out`.
    pub embeddings: Tensor,
    /// `h^(l)` for `l = 1..=L`.
    pub layer_outputs: Vec<Tensor>,
    /// Coefficients (before attention dropout) of every layer that
    /// computed them.
    pub attention: Vec<AttentionMap>,
    pub dropout_masks: Vec<Tensor>,
}

pub(crate) struct TapeForward {
    pub embeddings: Var,
    pub layer_outputs: Vec<Var>,
    pub attention: Vec<Var>,
    pub masks: Vec<Tensor>,
}

fn dropout_mask(rng: &mut Rng, rows: usize, cols: usize, p: f64) -> Tensor {
    let keep = 1.0 - p;
    Tensor::from_fn(rows, cols, |_, _| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
}

/// Runs every layer on the tape. `input` holds `h^(0)`.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    b: &Bindings,
    graph: &AugmentedGraph,
    input: Var,
    cfg: &ModelConfig,
    mut dropout: Option<&mut Rng>,
) -> Result<TapeForward, ModelError> {
    let [n, feature_dim] = tape.value(input).shape();
    if n != graph.num_entities() {
        return Err(ModelError::Config(format!(
            "{n} feature rows for a graph of {} entities",
            graph.num_entities()
        )));
    }
    let num_rel = graph.num_relations();
    let wanted: Vec<bool> = (0..num_rel).map(|r| !graph.edges_of_relation(r).is_empty()).collect();
    let norm = tape.constant(Tensor::column(graph.edge_norm().to_vec()));

    let mut h = input;
    let mut out = TapeForward {
        embeddings: input,
        layer_outputs: Vec::new(),
        attention: Vec::new(),
        masks: Vec::new(),
    };
    let mut alpha: Option<Var> = None;
    let has_edges = graph.num_edges() > 0;

    for l in 0..cfg.layers {
        let d_in = layer_in_dim(cfg, feature_dim, l);
        if tape.value(h).cols() != d_in {
            return Err(ModelError::Config(format!(
                "layer {l} expects {d_in} input features, got {}",
                tape.value(h).cols()
            )));
        }
        if cfg.layer_scores_edges(l) && has_edges {
            let node_w = b.get(&format!("layer{l}.attn_W"))?;
            let rel_w = if needs_rel_projection(cfg, feature_dim, l) {
                b.get(&format!("layer{l}.rel_W"))?
            } else {
                node_w
            };
            let a = b.get(&cfg.attn_vector_name(l))?;
            let rel_feats = b.get("rel_feats")?;
            let e = logits_on_tape(tape, h, rel_feats, graph, node_w, rel_w, a, cfg.attn_nonlinearity)?;
            let att = normalize_on_tape(tape, e, graph)?;
            out.attention.push(att);
            alpha = Some(att);
        }

        let mut coeff = norm;
        if let (true, Some(att)) = (cfg.attention, alpha) {
            let mut att = att;
            if let (Some(rng), true) = (dropout.as_deref_mut(), cfg.attn_dropout > 0.0) {
                let mask = dropout_mask(rng, graph.num_edges(), 1, cfg.attn_dropout);
                let m = tape.constant(mask.clone());
                out.masks.push(mask);
                att = tape.mul(att, m)?;
            }
            coeff = tape.mul(att, norm)?;
        }

        let bases = (0..cfg.bases)
            .map(|i| b.get(&format!("layer{l}.basis{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let coeffs = b.get(&format!("layer{l}.coeffs"))?;
        let rel_mats = basis_on_tape(tape, &bases, coeffs, &wanted)?;
        let w0 = if graph.self_loop() {
            Some(b.get(&format!("layer{l}.self_W0"))?)
        } else {
            None
        };
        let pre = aggregate_on_tape(tape, h, graph, coeff, &rel_mats, w0, cfg.dim)?;
        let last = l + 1 == cfg.layers;
        let act = if last { Activation::Identity } else { Activation::Relu };
        let mut next = activate(tape, pre, act)?;
        if let (false, Some(rng), true) = (last, dropout.as_deref_mut(), cfg.hidden_dropout > 0.0) {
            let mask = dropout_mask(rng, n, cfg.dim, cfg.hidden_dropout);
            let m = tape.constant(mask.clone());
            out.masks.push(mask);
            next = tape.mul(next, m)?;
        }
        out.layer_outputs.push(next);
        h = next;
    }
    debug_assert_eq!(tape.value(h).cols(), output_dim(cfg, feature_dim));
    out.embeddings = h;
    Ok(out)
}

/// `h^(0)`: the trainable table when the parameters carry one, otherwise
/// the fixed features.
pub(crate) fn input_on_tape(
    tape: &mut Tape,
    b: &Bindings,
    features: &FeatureSource,
) -> Result<Var, ModelError> {
    match b.try_get(ENTITY_TABLE) {
        Some(v) if features.mode() == FeatureMode::Table => Ok(v),
        Some(_) => Err(ModelError::Mode(
            "parameters carry an entity table but features are file-backed".into(),
        )),
        None => Ok(tape.constant(features.values().clone())),
    }
}

/// Forward pass: entity embeddings after `cfg.layers` layers. With zero
/// layers the input features are returned unchanged.
pub fn model_forward(
    graph: &AugmentedGraph,
    features: &FeatureSource,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode<'_>,
) -> Result<ForwardOutput, ModelError> {
    let mut tape = Tape::new();
    let b = tape.register(params.store());
    let input = input_on_tape(&mut tape, &b, features)?;
    let dropout = match mode {
        Mode::Eval => None,
        Mode::Train(rng) => Some(rng),
    };
    let f = forward_on_tape(&mut tape, &b, graph, input, cfg, dropout)?;
    Ok(ForwardOutput {
        embeddings: tape.value(f.embeddings).clone(),
        layer_outputs: f.layer_outputs.iter().map(|&v| tape.value(v).clone()).collect(),
        attention: f
            .attention
            .iter()
            .map(|&v| AttentionMap::new(tape.value(v).data().to_vec(), graph.heads().to_vec()))
            .collect(),
        dropout_masks: f.masks,
    })
}

/// Builds forward → DistMult scores → mean logistic loss on `tape`.
pub fn loss_on_tape(
    tape: &mut Tape,
    b: &Bindings,
    graph: &AugmentedGraph,
    features: &FeatureSource,
    cfg: &ModelConfig,
    batch: &LabeledTripleBatch,
    dropout: Option<&mut Rng>,
) -> Result<Var, ModelError> {
    let input = input_on_tape(tape, b, features)?;
    let f = forward_on_tape(tape, b, graph, input, cfg, dropout)?;
    let diag = b.get("distmult_diag")?;
    let scores = scores_on_tape(tape, f.embeddings, diag, &batch.triples)?;
    Ok(tape.bce_with_logits(scores, &batch.label_values())?)
}

/// Loss of `batch` and its gradient with respect to every parameter.
pub fn training_loss(
    graph: &AugmentedGraph,
    features: &FeatureSource,
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &LabeledTripleBatch,
    mode: Mode<'_>,
) -> Result<(f64, ParamStore), ModelError> {
    let dropout = match mode {
        Mode::Eval => None,
        Mode::Train(rng) => Some(rng),
    };
    evaluate_with_gradients(params.store(), |tape, b| {
        loss_on_tape(tape, b, graph, features, cfg, batch, dropout)
    })
}
