use super::{AttnNonlinearity, ModelError};
use crate::graph::AugmentedGraph;
use crate::numeric::{Tape, Tensor, Var};

/// Normalized attention coefficient of every edge, aligned with the
/// edge order of the [`AugmentedGraph`] it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    alpha: Vec<f64>,
    heads: Vec<usize>,
}

impl AttentionMap {
    pub(crate) fn new(alpha: Vec<f64>, heads: Vec<usize>) -> Self {
        debug_assert_eq!(alpha.len(), heads.len());
        Self { alpha, heads }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Receiving node of each coefficient; the softmax group.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Σα per node; nodes without incident edges are absent.
    pub fn group_sums(&self) -> std::collections::BTreeMap<usize, f64> {
        let mut sums = std::collections::BTreeMap::new();
        for (&a, &h) in self.alpha.iter().zip(&self.heads) {
            *sums.entry(h).or_insert(0.0) += a;
        }
        sums
    }
}

/// Per-edge logits `aᵀ[W_node h_h ‖ W_rel m_r ‖ W_node h_t]` on a tape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn logits_on_tape(
    tape: &mut Tape,
    h: Var,
    rel_feats: Var,
    graph: &AugmentedGraph,
    node_w: Var,
    rel_w: Var,
    a: Var,
    nonlinearity: AttnNonlinearity,
) -> Result<Var, ModelError> {
    let edges = graph.edges();
    let heads: Vec<usize> = edges.iter().map(|e| e.head).collect();
    let tails: Vec<usize> = edges.iter().map(|e| e.tail).collect();
    let rels: Vec<usize> = edges.iter().map(|e| e.relation).collect();

    let projected = tape.matmul(h, node_w)?;
    let rel_projected = tape.matmul(rel_feats, rel_w)?;
    let wh_h = tape.gather_rows(projected, &heads)?;
    let wm_r = tape.gather_rows(rel_projected, &rels)?;
    let wh_t = tape.gather_rows(projected, &tails)?;
    let joined = tape.concat_cols(&[wh_h, wm_r, wh_t])?;
    let e = tape.matmul(joined, a)?;
    Ok(match nonlinearity {
        AttnNonlinearity::None => e,
        AttnNonlinearity::LeakyRelu => tape.leaky_relu(e, 0.2)?,
    })
}

/// Softmax of the logits over each node's full incident-edge group.
pub(crate) fn normalize_on_tape(tape: &mut Tape, logits: Var, graph: &AugmentedGraph) -> Result<Var, ModelError> {
    Ok(tape.group_softmax(logits, graph.heads())?)
}

/// Edge logits `e_(h,r,t) = aᵀ[W h_h ‖ W m_r ‖ W h_t]`, no nonlinearity.
pub fn attention_logits(
    layer_input: &Tensor,
    rel_feats: &Tensor,
    graph: &AugmentedGraph,
    attn_w: &Tensor,
    attn_a: &Tensor,
) -> Result<Tensor, ModelError> {
    if layer_input.rows() != graph.num_entities() || rel_feats.rows() < graph.num_relations() {
        return Err(ModelError::Config(format!(
            "attention inputs: {} node rows / {} relation rows for a graph with {} nodes / {} relations",
            layer_input.rows(),
            rel_feats.rows(),
            graph.num_entities(),
            graph.num_relations()
        )));
    }
    let mut tape = Tape::new();
    let h = tape.constant(layer_input.clone());
    let m = tape.constant(rel_feats.clone());
    let w = tape.constant(attn_w.clone());
    let a = tape.constant(attn_a.clone());
    let e = logits_on_tape(&mut tape, h, m, graph, w, w, a, AttnNonlinearity::None)?;
    Ok(tape.value(e).clone())
}

pub fn attention_normalize(logits: &Tensor, graph: &AugmentedGraph) -> Result<AttentionMap, ModelError> {
    if logits.shape() != [graph.num_edges(), 1] {
        return Err(ModelError::Config(format!(
            "expected {} logits, got shape {:?}",
            graph.num_edges(),
            logits.shape()
        )));
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let alpha = normalize_on_tape(&mut tape, l, graph)?;
    Ok(AttentionMap::new(
        tape.value(alpha).data().to_vec(),
        graph.heads().to_vec(),
    ))
}
