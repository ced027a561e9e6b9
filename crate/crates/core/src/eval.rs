//! Link-prediction ranking: filtered (or raw) ranks of test triples
//! against every head and tail corruption, aggregated into MRR and
//! Hits@{1,3,10}.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::Triple;
use crate::numeric::Tensor;

pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Every known true triple (train ∪ valid ∪ test).
#[derive(Debug, Clone, Default)]
pub struct FilterIndex(HashSet<Triple>);

impl FilterIndex {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        Self(triples.into_iter().copied().collect())
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.0.contains(t)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_set(&self) -> &HashSet<Triple> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

fn score(h: &[f64], diag: &[f64], t: &[f64]) -> f64 {
    h.iter().zip(t).zip(diag).map(|((a, b), d)| (a * b) * d).sum()
}

/// Rank of `test` among all triples obtained by replacing `side` with
/// every entity. Known triples other than `test` are skipped when a
/// filter is given. Ties count against the test triple:
/// `rank = 1 + #{c ≠ test : score(c) ≥ score(test)}`.
pub fn rank_triple(
    test: &Triple,
    embeddings: &Tensor,
    diag: &Tensor,
    filter: Option<&FilterIndex>,
    side: Side,
) -> usize {
    let d = diag.row(test.relation);
    let target = score(embeddings.row(test.head), d, embeddings.row(test.tail));
    let mut rank = 1;
    for x in 0..embeddings.rows() {
        let cand = match side {
            Side::Head => Triple::new(x, test.relation, test.tail),
            Side::Tail => Triple::new(test.head, test.relation, x),
        };
        if cand == *test || filter.is_some_and(|f| f.contains(&cand)) {
            continue;
        }
        if score(embeddings.row(cand.head), d, embeddings.row(cand.tail)) >= target {
            rank += 1;
        }
    }
    rank
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRanks {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub head_rank: usize,
    pub tail_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    /// Number of ranks aggregated (two per test triple).
    pub count: usize,
    pub filtered: bool,
    pub ranks: Vec<TripleRanks>,
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<TripleRanks>, filtered: bool) -> Self {
        let all: Vec<usize> = ranks.iter().flat_map(|r| [r.head_rank, r.tail_rank]).collect();
        let count = all.len();
        let mrr = all.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / count.max(1) as f64;
        let hits = HITS_AT
            .iter()
            .map(|&k| (k, all.iter().filter(|&&r| r <= k).count() as f64 / count.max(1) as f64))
            .collect();
        Self {
            mrr,
            hits,
            count,
            filtered,
            ranks,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// The report as JSON; `with_ranks = false` omits per-triple ranks.
    pub fn to_json(&self, with_ranks: bool) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if !with_ranks {
            v.as_object_mut().expect("object").remove("ranks");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}

/// Ranks both corruption sides of every test triple. Triples are ranked
/// in parallel; results keep input order.
pub fn evaluate(
    test: &[Triple],
    embeddings: &Tensor,
    diag: &Tensor,
    filter: Option<&FilterIndex>,
) -> RankingReport {
    let ranks = test
        .par_iter()
        .map(|t| TripleRanks {
            head: t.head,
            relation: t.relation,
            tail: t.tail,
            head_rank: rank_triple(t, embeddings, diag, filter, Side::Head),
            tail_rank: rank_triple(t, embeddings, diag, filter, Side::Tail),
        })
        .collect();
    RankingReport::from_ranks(ranks, filter.is_some())
}
