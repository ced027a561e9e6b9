use super::ModelError;
use crate::graph::Triple;
use crate::numeric::{logistic_loss, NumericError, Tape, Tensor, Var};

/// `Σ_i h_i · diag_i · t_i`, the bilinear form `h_hᵀ M_r h_t` with a
/// diagonal `M_r`. Symmetric in `h` and `t`.
pub fn distmult_score(h: &[f64], diag: &[f64], t: &[f64]) -> Result<f64, ModelError> {
    if h.len() != diag.len() || t.len() != diag.len() {
        return Err(NumericError::Contract(format!(
            "distmult lengths {} / {} / {}",
            h.len(),
            diag.len(),
            t.len()
        ))
        .into());
    }
    // (h·t)·d is bitwise symmetric in h and t.
    Ok(h.iter().zip(t).zip(diag).map(|((a, b), d)| (a * b) * d).sum())
}

/// Mean logistic loss; the negated log-likelihood of the labels under
/// `σ(score)`.
pub fn bce_loss(scores: &[f64], labels: &[u8]) -> Result<f64, ModelError> {
    if scores.is_empty() {
        return Err(NumericError::Contract("empty batch".into()).into());
    }
    if scores.len() != labels.len() {
        return Err(NumericError::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        ))
        .into());
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| logistic_loss(s, f64::from(y)))
        .sum();
    Ok(total / scores.len() as f64)
}

pub fn score_triples(embeddings: &Tensor, diag: &Tensor, triples: &[Triple]) -> Result<Vec<f64>, ModelError> {
    triples
        .iter()
        .map(|t| distmult_score(embeddings.row(t.head), diag.row(t.relation), embeddings.row(t.tail)))
        .collect()
}

pub(crate) fn scores_on_tape(tape: &mut Tape, z: Var, diag: Var, triples: &[Triple]) -> Result<Var, ModelError> {
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let zh = tape.gather_rows(z, &heads)?;
    let dr = tape.gather_rows(diag, &rels)?;
    let zt = tape.gather_rows(z, &tails)?;
    let ht = tape.mul(zh, zt)?;
    let prod = tape.mul(ht, dr)?;
    Ok(tape.sum_cols(prod)?)
}
