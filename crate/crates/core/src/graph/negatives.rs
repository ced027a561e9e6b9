use std::collections::HashSet;

use rand::Rng;

use super::{GraphError, Triple};

/// Labeled triples: every positive (label 1) followed by its corruptions
/// (label 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTripleBatch {
    pub triples: Vec<Triple>,
    pub labels: Vec<u8>,
}

impl LabeledTripleBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn label_values(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSampling {
    /// Corruptions may coincide with true triples.
    #[default]
    Unfiltered,
    /// Corruptions found in the filter set are redrawn (bounded retries).
    Filtered,
}

const FILTER_RETRIES: usize = 64;

/// Corrupts each positive `ratio` times. The side (head or tail) is a
/// fair coin; the replacement is uniform over the other `N − 1` entities,
/// so every negative differs from its source in exactly one position.
pub fn sample_negatives<R: Rng>(
    positives: &[Triple],
    ratio: usize,
    num_entities: usize,
    rng: &mut R,
    filter: Option<&HashSet<Triple>>,
) -> Result<LabeledTripleBatch, GraphError> {
    if ratio == 0 {
        return Err(GraphError::Config("negative ratio must be at least 1".into()));
    }
    if num_entities < 2 {
        return Err(GraphError::Sampling(format!(
            "corruption needs at least 2 entities, graph has {num_entities}"
        )));
    }
    let total = positives.len() * (1 + ratio);
    let mut triples = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    triples.extend_from_slice(positives);
    labels.resize(positives.len(), 1);

    let corrupt = |t: &Triple, rng: &mut R| {
        let replacement = |orig: usize, rng: &mut R| {
            let x = rng.gen_range(0..num_entities - 1);
            if x >= orig {
                x + 1
            } else {
                x
            }
        };
        if rng.gen_bool(0.5) {
            Triple::new(replacement(t.head, rng), t.relation, t.tail)
        } else {
            Triple::new(t.head, t.relation, replacement(t.tail, rng))
        }
    };

    for t in positives {
        for _ in 0..ratio {
            let mut neg = corrupt(t, rng);
            if let Some(known) = filter {
                for _ in 0..FILTER_RETRIES {
                    if !known.contains(&neg) {
                        break;
                    }
                    neg = corrupt(t, rng);
                }
            }
            triples.push(neg);
            labels.push(0);
        }
    }
    Ok(LabeledTripleBatch { triples, labels })
}
