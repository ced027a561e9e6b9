mod common;

use std::collections::HashSet;

use common::*;
use rand::Rng;
use relatt_core::eval::{evaluate, rank_triple, FilterIndex, RankingReport, Side, HITS_AT};
use relatt_core::numeric::Tensor;
use relatt_core::rng::{item_rng, Phase};

/// Small integer embeddings make scores exact and ties frequent.
fn integer_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| f64::from(r.gen_range(-2i32..=2)))
}

#[test]
fn ranks_equal_sorting_oracle_on_toy_instances() {
    let mut ties_seen = 0;
    for seed in 0..200 {
        let mut r = item_rng(seed, Phase::Fixture, 0);
        let n = r.gen_range(2..=10);
        let k = r.gen_range(1..=3);
        let d = r.gen_range(1..=3);
        let count = r.gen_range(1..=12);
        let known = random_triples(&mut r, n, k, count);
        let emb = integer_tensor(&mut r, n, d);
        let diag = integer_tensor(&mut r, k, d);
        let filter = FilterIndex::new(&known);
        let set: HashSet<_> = known.iter().copied().collect();
        let test = &known[..known.len().div_ceil(2)];

        let filtered = evaluate(test, &emb, &diag, Some(&filter));
        let raw = evaluate(test, &emb, &diag, None);
        for ((t, f), w) in test.iter().zip(&filtered.ranks).zip(&raw.ranks) {
            assert_eq!(f.head_rank, sorted_rank(t, &emb, &diag, Some(&set), true), "seed {seed}");
            assert_eq!(f.tail_rank, sorted_rank(t, &emb, &diag, Some(&set), false), "seed {seed}");
            assert_eq!(w.head_rank, sorted_rank(t, &emb, &diag, None, true), "seed {seed}");
            assert_eq!(w.tail_rank, sorted_rank(t, &emb, &diag, None, false), "seed {seed}");
            assert!(f.head_rank <= w.head_rank && f.tail_rank <= w.tail_rank);
            assert_eq!((f.head, f.relation, f.tail), (t.head, t.relation, t.tail));
            if w.tail_rank > 1 {
                ties_seen += 1;
            }
        }
    }
    assert!(ties_seen > 50, "fixture should exercise ties, saw {ties_seen}");
}

#[test]
fn constant_scorer_ranks_last_among_survivors() {
    let emb = Tensor::filled(6, 2, 1.0);
    let diag = Tensor::filled(1, 2, 1.0);
    let test = relatt_core::graph::Triple::new(0, 0, 1);
    let other = relatt_core::graph::Triple::new(0, 0, 2);
    let filter = FilterIndex::new([&test, &other]);
    assert_eq!(rank_triple(&test, &emb, &diag, Some(&filter), Side::Tail), 5);
    assert_eq!(rank_triple(&test, &emb, &diag, None, Side::Tail), 6);
}

#[test]
fn aggregates_recompute_from_ranks() {
    let mut r = item_rng(9, Phase::Fixture, 0);
    let known = random_triples(&mut r, 10, 2, 30);
    let emb = random_tensor(&mut r, 10, 4);
    let diag = random_tensor(&mut r, 2, 4);
    let report = evaluate(&known, &emb, &diag, Some(&FilterIndex::new(&known)));
    let all: Vec<f64> = report.ranks.iter().flat_map(|t| [t.head_rank as f64, t.tail_rank as f64]).collect();
    let mrr = all.iter().map(|r| 1.0 / r).sum::<f64>() / all.len() as f64;
    assert!((report.mrr - mrr).abs() < 1e-12);
    let mut prev = 0.0;
    for k in HITS_AT {
        let h = all.iter().filter(|&&r| r <= k as f64).count() as f64 / all.len() as f64;
        assert!((report.hits_at(k) - h).abs() < 1e-12);
        assert!(report.hits_at(k) >= prev);
        prev = report.hits_at(k);
    }
    let again = RankingReport::from_ranks(report.ranks.clone(), true);
    assert_eq!(again, report);
    assert_eq!(report.to_json(true), evaluate(&known, &emb, &diag, Some(&FilterIndex::new(&known))).to_json(true));
}
