use super::{AttentionMap, ModelError};
use crate::graph::AugmentedGraph;
use crate::numeric::{NumericError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Materialized weights of one propagation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `W_r`, one `d_in × d_out` matrix per relation.
    pub relation_mats: Vec<Tensor>,
    /// `W_0`, absent when the self-loop term is off.
    pub self_w0: Option<Tensor>,
}

/// `W_r = Σ_b coeffs[r][b] · V_b` for every relation in `wanted`
/// (`None` elsewhere). Bases are flattened, stacked and combined with one
/// matrix product.
pub(crate) fn basis_on_tape(
    tape: &mut Tape,
    bases: &[Var],
    coeffs: Var,
    wanted: &[bool],
) -> Result<Vec<Option<Var>>, ModelError> {
    let [d_in, d_out] = tape
        .value(*bases.first().ok_or_else(|| ModelError::Config("at least one basis is required".into()))?)
        .shape();
    if tape.value(coeffs).cols() != bases.len() {
        return Err(NumericError::Contract(format!(
            "coefficients have {} columns for {} bases",
            tape.value(coeffs).cols(),
            bases.len()
        ))
        .into());
    }
    let flat = bases
        .iter()
        .map(|&b| tape.reshape(b, 1, d_in * d_out))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = tape.concat_rows(&flat)?;
    let combined = tape.matmul(coeffs, stacked)?;
    let mut out = Vec::with_capacity(wanted.len());
    for (r, &want) in wanted.iter().enumerate() {
        out.push(if want {
            let row = tape.gather_rows(combined, &[r])?;
            Some(tape.reshape(row, d_in, d_out)?)
        } else {
            None
        });
    }
    Ok(out)
}

/// Pre-activation layer output
/// `Σ_r Σ_{t ∈ N_h^r} coeff_(h,r,t) · W_r h_t + W_0 h_h`, where `coeff`
/// already folds in α and `1/|N_h^r|`.
pub(crate) fn aggregate_on_tape(
    tape: &mut Tape,
    h: Var,
    graph: &AugmentedGraph,
    coeff: Var,
    relation_mats: &[Option<Var>],
    self_w0: Option<Var>,
    d_out: usize,
) -> Result<Var, ModelError> {
    let n = graph.num_entities();
    if tape.value(h).rows() != n {
        return Err(NumericError::Contract(format!(
            "layer input has {} rows for {n} nodes",
            tape.value(h).rows()
        ))
        .into());
    }
    let edges = graph.edges();
    let mut acc: Option<Var> = None;
    for r in 0..graph.num_relations() {
        let ids = graph.edges_of_relation(r);
        if ids.is_empty() {
            continue;
        }
        let w_r = relation_mats
            .get(r)
            .copied()
            .flatten()
            .ok_or_else(|| ModelError::Config(format!("no weight matrix for relation {r}")))?;
        let tails: Vec<usize> = ids.iter().map(|&i| edges[i].tail).collect();
        let heads: Vec<usize> = ids.iter().map(|&i| edges[i].head).collect();
        let x = tape.gather_rows(h, &tails)?;
        let msg = tape.matmul(x, w_r)?;
        let c = tape.gather_rows(coeff, ids)?;
        let weighted = tape.mul_column(msg, c)?;
        let summed = tape.scatter_add_rows(weighted, &heads, n)?;
        acc = Some(match acc {
            None => summed,
            Some(a) => tape.add(a, summed)?,
        });
    }
    if let Some(w0) = self_w0 {
        let own = tape.matmul(h, w0)?;
        acc = Some(match acc {
            None => own,
            Some(a) => tape.add(a, own)?,
        });
    }
    Ok(match acc {
        Some(a) => a,
        None => tape.constant(Tensor::zeros(n, d_out)),
    })
}

pub(crate) fn activate(tape: &mut Tape, x: Var, activation: Activation) -> Result<Var, ModelError> {
    Ok(match activation {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x)?,
    })
}

pub fn basis_expand(bases: &[Tensor], coeffs: &Tensor) -> Result<Vec<Tensor>, ModelError> {
    if let Some(b0) = bases.first() {
        if bases.iter().any(|b| b.shape() != b0.shape()) {
            return Err(ModelError::Config("bases differ in shape".into()));
        }
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = bases.iter().map(|b| tape.constant(b.clone())).collect();
    let c = tape.constant(coeffs.clone());
    let wanted = vec![true; coeffs.rows()];
    let mats = basis_on_tape(&mut tape, &vars, c, &wanted)?;
    Ok(mats
        .into_iter()
        .map(|m| tape.value(m.expect("all wanted")).clone())
        .collect())
}

/// One propagation step. With `attention = None` every edge weight α is
/// the constant 1 (plain relational convolution).
pub fn propagate_layer(
    h_in: &Tensor,
    attention: Option<&AttentionMap>,
    graph: &AugmentedGraph,
    weights: &LayerWeights,
    activation: Activation,
) -> Result<Tensor, ModelError> {
    let d_out = weights
        .relation_mats
        .first()
        .or(weights.self_w0.as_ref())
        .map(Tensor::cols)
        .ok_or_else(|| ModelError::Config("layer has no weights".into()))?;
    let mut norm = graph.edge_norm().to_vec();
    if let Some(att) = attention {
        if att.len() != graph.num_edges() {
            return Err(ModelError::Config(format!(
                "attention map has {} coefficients for {} edges",
                att.len(),
                graph.num_edges()
            )));
        }
        for (n, a) in norm.iter_mut().zip(att.alpha()) {
            *n *= a;
        }
    }
    let mut tape = Tape::new();
    let h = tape.constant(h_in.clone());
    let coeff = tape.constant(Tensor::column(norm));
    let mats: Vec<Option<Var>> = weights
        .relation_mats
        .iter()
        .map(|w| Some(tape.constant(w.clone())))
        .collect();
    let w0 = weights.self_w0.as_ref().map(|w| tape.constant(w.clone()));
    let pre = aggregate_on_tape(&mut tape, h, graph, coeff, &mats, w0, d_out)?;
    let out = activate(&mut tape, pre, activation)?;
    Ok(tape.value(out).clone())
}
