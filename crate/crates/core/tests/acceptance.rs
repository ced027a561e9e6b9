//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each and exits nonzero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use relatt_core::eval::{evaluate, FilterIndex};
use relatt_core::graph::{
    init_random_features, sample_negatives, AugmentOptions, AugmentedGraph, DatasetSplit, FeatureMode, FeatureSource,
    KnowledgeGraph, LabeledTripleBatch,
};
use relatt_core::matching::{evaluate_matching, ReferenceEmbeddings};
use relatt_core::model::{
    basis_expand, loss_on_tape, model_forward, propagate_layer, training_loss, Activation, AttnNonlinearity,
    AttnSchedule, LayerWeights, Mode, ModelConfig, ModelParams,
};
use relatt_core::numeric::{finite_difference_gradcheck, Tensor};
use relatt_core::rng::{item_rng, Phase};
use relatt_core::synthetic::{typed_random_graph, MatchingFixture, MatchingFixtureConfig};
use relatt_core::train::{history_csv, train, Monitor, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> relatt_core::rng::Rng {
    item_rng(seed, Phase::Fixture, 77)
}

/// Random parameters for `cfg` over an augmented graph with `num_rel`
/// relation types.
fn random_params(r: &mut relatt_core::rng::Rng, cfg: &ModelConfig, feature_dim: usize, num_rel: usize, table: Option<&Tensor>) -> ModelParams {
    let init = ModelParams::init(cfg, feature_dim, num_rel, table, r).unwrap();
    ModelParams::from_store(randomize(r, init.store())).unwrap()
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    let (n, k) = (5, 3);
    let triples = random_triples(&mut r, n, k, 8);
    let cfg = ModelConfig { layers: 2, dim: 4, bases: 2, attention: true, ..ModelConfig::default() };
    let g = AugmentedGraph::build(n, k, &triples, cfg.augment);
    let table = FeatureSource::new(FeatureMode::Table, random_tensor(&mut r, n, 4)).unwrap();
    let params = random_params(&mut r, &cfg, 4, g.num_relations(), Some(table.values()));
    let batch = sample_negatives(&triples, 1, n, &mut r, None).unwrap();
    let report = finite_difference_gradcheck(
        params.store(),
        |tape, b| loss_on_tape(tape, b, &g, &table, &cfg, &batch, None),
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        report.max_relative_error < 1e-5,
        format!(
            "gradient check over {} coordinates: max relative error {:.2e} (limit 1e-5)",
            report.coordinates, report.max_relative_error
        ),
    )
}

fn random_config(r: &mut impl Rng, max_layers: usize) -> ModelConfig {
    ModelConfig {
        layers: r.gen_range(1..=max_layers),
        dim: r.gen_range(1..=5),
        bases: r.gen_range(1..=3),
        attention: true,
        attn_nonlinearity: if r.gen_bool(0.5) { AttnNonlinearity::None } else { AttnNonlinearity::LeakyRelu },
        attn_schedule: if r.gen_bool(0.7) { AttnSchedule::PerLayer } else { AttnSchedule::FirstLayer },
        shared_attn_vector: r.gen_bool(0.3),
        augment: AugmentOptions { add_inverse: r.gen_bool(0.7), add_self_loop: r.gen_bool(0.7) },
        ..ModelConfig::default()
    }
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut groups = 0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let n = r.gen_range(2..=30);
        let k = r.gen_range(1..=4);
        let count = r.gen_range(1..=3 * n);
        let triples = random_triples(&mut r, n, k, count);
        let cfg = random_config(&mut r, 2);
        let g = AugmentedGraph::build(n, k, &triples, cfg.augment);
        let d = r.gen_range(1..=6);
        let feats = FeatureSource::new(FeatureMode::File, random_tensor(&mut r, n, d)).unwrap();
        let mut params = random_params(&mut r, &cfg, d, g.num_relations(), None);
        let names = params.attention_param_names();
        for name in names.iter().filter(|n| n.ends_with("attn_a")) {
            let a = params.store_mut().get_mut(name).unwrap();
            *a = a.scale(5.0);
        }
        let out = model_forward(&g, &feats, &params, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        for map in &out.attention {
            if map.alpha().iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(format!("seed {seed}: coefficient outside [0, 1]"));
            }
            let sums = map.group_sums();
            let heads_with_edges = (0..n).filter(|&h| g.degree(h) > 0).count();
            if sums.len() != heads_with_edges {
                return Err(format!("seed {seed}: {} groups for {heads_with_edges} heads", sums.len()));
            }
            for s in sums.values() {
                worst = worst.max((s - 1.0).abs());
                groups += 1;
            }
        }
    }
    ensure(worst <= 1e-9, format!("100 graphs, {groups} head groups: max |Σα − 1| = {worst:.1e} (limit 1e-9)"))
}

fn criterion_3() -> Outcome {
    let (mut worst_layer, mut worst_model) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let mut r = rng(2000 + seed);
        let n = r.gen_range(2..=20);
        let k = r.gen_range(1..=4);
        let count = r.gen_range(1..=3 * n);
        let triples = random_triples(&mut r, n, k, count);
        let cfg = random_config(&mut r, 2);
        let g = AugmentedGraph::build(n, k, &triples, cfg.augment);
        let d = r.gen_range(1..=6);
        let feats = FeatureSource::new(FeatureMode::File, random_tensor(&mut r, n, d)).unwrap();

        let mats: Vec<Tensor> = (0..g.num_relations()).map(|_| random_tensor(&mut r, d, 3)).collect();
        let w0 = cfg.augment.add_self_loop.then(|| random_tensor(&mut r, d, 3));
        let logits = Tensor::column((0..g.num_edges()).map(|_| r.gen_range(-3.0..3.0)).collect());
        let att = relatt_core::model::attention_normalize(&logits, &g).map_err(|e| e.to_string())?;
        let weights = LayerWeights { relation_mats: mats.clone(), self_w0: w0.clone() };
        let got = propagate_layer(feats.values(), Some(&att), &g, &weights, Activation::Relu).map_err(|e| e.to_string())?;
        let want = dense_layer(feats.values(), n, g.edges(), g.num_relations(), Some(att.alpha()), &mats, w0.as_ref(), true);
        worst_layer = worst_layer.max(got.max_abs_diff(&want));

        let params = random_params(&mut r, &cfg, d, g.num_relations(), None);
        let out = model_forward(&g, &feats, &params, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        let (want, _) = dense_forward(&triples, n, k, feats.values(), params.store(), &cfg);
        worst_model = worst_model.max(out.embeddings.max_abs_diff(&want));
    }
    ensure(
        worst_layer < 1e-10 && worst_model < 1e-10,
        format!("50 graphs: propagate_layer max diff {worst_layer:.1e}, model_forward max diff {worst_model:.1e} (limit 1e-10)"),
    )
}

fn criterion_4() -> Outcome {
    let (mut worst_alpha, mut worst_out) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut r = rng(3000 + seed);
        let n = r.gen_range(2..=15);
        let k = r.gen_range(1..=3);
        let count = r.gen_range(1..=3 * n);
        let triples = random_triples(&mut r, n, k, count);
        let cfg = ModelConfig { layers: 2, dim: 4, bases: 2, ..ModelConfig::default() };
        let g = AugmentedGraph::build(n, k, &triples, cfg.augment);
        let feats = FeatureSource::new(FeatureMode::File, random_tensor(&mut r, n, 5)).unwrap();
        let mut params = random_params(&mut r, &cfg, 5, g.num_relations(), None);
        for l in 0..cfg.layers {
            *params.store_mut().get_mut(&format!("layer{l}.attn_a")).unwrap() = Tensor::zeros(3 * cfg.dim, 1);
        }
        let out = model_forward(&g, &feats, &params, &cfg, Mode::Eval).map_err(|e| e.to_string())?;
        for map in &out.attention {
            for (a, &h) in map.alpha().iter().zip(map.heads()) {
                worst_alpha = worst_alpha.max((a - 1.0 / g.degree(h) as f64).abs());
            }
        }

        // Attention off, each head's aggregated messages scaled by 1/|N_h|.
        let mut h = feats.values().clone();
        for l in 0..cfg.layers {
            let p = |name: String| params.get(&name).unwrap().clone();
            let bases: Vec<Tensor> = (0..cfg.bases).map(|b| p(format!("layer{l}.basis{b}"))).collect();
            let mats = basis_expand(&bases, &p(format!("layer{l}.coeffs"))).map_err(|e| e.to_string())?;
            let messages = propagate_layer(
                &h,
                None,
                &g,
                &LayerWeights { relation_mats: mats, self_w0: None },
                Activation::Identity,
            )
            .map_err(|e| e.to_string())?;
            let self_term = h.matmul(&p(format!("layer{l}.self_W0"))).unwrap();
            let last = l + 1 == cfg.layers;
            h = Tensor::from_fn(n, cfg.dim, |i, j| {
                let scale = if g.degree(i) > 0 { 1.0 / g.degree(i) as f64 } else { 0.0 };
                let v = scale * messages.get(i, j) + self_term.get(i, j);
                if last { v } else { v.max(0.0) }
            });
        }
        worst_out = worst_out.max(h.max_abs_diff(&out.embeddings));
    }
    ensure(
        worst_alpha <= 1e-12 && worst_out <= 1e-10,
        format!("max |α − 1/|N_h|| = {worst_alpha:.1e} (limit 1e-12); manual 1/|N_h| scaling diff {worst_out:.1e} (limit 1e-10)"),
    )
}

fn overfit_fixture() -> (DatasetSplit, FeatureSource) {
    let g = typed_random_graph(50, 4, 200, 11).unwrap();
    let train = g.triples.clone();
    let split = DatasetSplit::from_parts(g, train, Vec::new(), Vec::new()).unwrap();
    let features = init_random_features(50, 16, 11).unwrap();
    (split, features)
}

/// Trains on the overfit fixture and returns (report bytes, train MRR).
fn run_overfit() -> Result<(String, f64), String> {
    let (split, features) = overfit_fixture();
    let cfg = TrainConfig {
        model: ModelConfig { layers: 2, dim: 16, ..ModelConfig::default() },
        neg_ratio: 10,
        max_epochs: 2000,
        monitor: Monitor::Train,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&split, &features, &cfg).map_err(|e| e.to_string())?;
    let g = out.model.augment(50, &split.train);
    let emb = out.model.embed(&g, &features).map_err(|e| e.to_string())?;
    let filter = FilterIndex::new(split.all_triples());
    let report = evaluate(&split.train, &emb, out.model.params.distmult_diag(), Some(&filter));
    let bytes = format!("{}\n{}", report.to_json(true), history_csv(&out.history));
    Ok((bytes, report.mrr))
}

fn criterion_5(reports: &mut Vec<String>) -> Outcome {
    let (bytes, mrr) = run_overfit()?;
    reports.push(bytes);
    ensure(mrr >= 0.95, format!("filtered MRR on training triples {mrr:.4} (limit ≥ 0.95) within 2000 epochs"))
}

fn brute_force_ranks(seed: u64) -> Result<usize, String> {
    let mut r = rng(4000 + seed);
    let n = r.gen_range(2..=10);
    let k = r.gen_range(1..=3);
    let d = r.gen_range(1..=3);
    let count = r.gen_range(1..=12);
    let known = random_triples(&mut r, n, k, count);
    let ints = |r: &mut relatt_core::rng::Rng, rows, cols| Tensor::from_fn(rows, cols, |_, _| f64::from(r.gen_range(-2i32..=2)));
    let emb = ints(&mut r, n, d);
    let diag = ints(&mut r, k, d);
    let set: std::collections::HashSet<_> = known.iter().copied().collect();
    let filter = FilterIndex::new(&known);
    let report = evaluate(&known, &emb, &diag, Some(&filter));
    for (t, got) in known.iter().zip(&report.ranks) {
        let want = (sorted_rank(t, &emb, &diag, Some(&set), true), sorted_rank(t, &emb, &diag, Some(&set), false));
        if (got.head_rank, got.tail_rank) != want {
            return Err(format!("seed {seed}: ranks {:?} vs oracle {want:?}", (got.head_rank, got.tail_rank)));
        }
    }
    let all: Vec<f64> = report.ranks.iter().flat_map(|t| [t.head_rank as f64, t.tail_rank as f64]).collect();
    let mrr = all.iter().map(|x| 1.0 / x).sum::<f64>() / all.len() as f64;
    if (mrr - report.mrr).abs() > 1e-12 {
        return Err(format!("seed {seed}: MRR {} vs recomputed {mrr}", report.mrr));
    }
    for (&kk, &h) in &report.hits {
        let want = all.iter().filter(|&&x| x <= kk as f64).count() as f64 / all.len() as f64;
        if (want - h).abs() > 1e-12 {
            return Err(format!("seed {seed}: Hits@{kk} {h} vs recomputed {want}"));
        }
    }
    Ok(all.iter().filter(|&&x| x > 1.0).count())
}

fn criterion_6() -> Outcome {
    let mut above_one = 0;
    for seed in 0..200 {
        above_one += brute_force_ranks(seed)?;
    }
    ensure(
        above_one > 0,
        "200 toy instances (N ≤ 10, integer scores with ties): ranks equal brute force exactly, aggregates within 1e-12".into(),
    )
}

fn criterion_7() -> Outcome {
    let (split, features) = overfit_fixture();
    let cfg = TrainConfig {
        model: ModelConfig { layers: 0, dim: 16, ..ModelConfig::default() },
        max_epochs: 500,
        monitor: Monitor::Train,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&split, &features, &cfg).map_err(|e| e.to_string())?;
    let baseline = 3.0 / 50.0;

    let mut r = rng(7);
    let n = 8;
    let triples = random_triples(&mut r, n, 2, 14);
    let off = ModelConfig { layers: 2, dim: 4, attention: false, ..ModelConfig::default() };
    let g = AugmentedGraph::build(n, 2, &triples, off.augment);
    let feats = FeatureSource::new(FeatureMode::File, random_tensor(&mut r, n, 4)).unwrap();
    let params = random_params(&mut r, &off, 4, g.num_relations(), None);
    let batch = LabeledTripleBatch { triples: triples.clone(), labels: vec![1; triples.len()] };
    let (_, grads) = training_loss(&g, &feats, &params, &off, &batch, Mode::Eval).map_err(|e| e.to_string())?;
    let names = params.attention_param_names();
    let nonzero: Vec<&String> = names
        .iter()
        .filter(|n| grads.get(n).is_none_or(|t| t.data().iter().any(|&v| v != 0.0)))
        .collect();
    ensure(
        out.best_mrr > baseline && nonzero.is_empty() && !names.is_empty(),
        format!(
            "L=0 table + DistMult MRR {:.4} (random baseline {baseline:.2}); attention off: {} attention tensors, {} with nonzero gradient",
            out.best_mrr,
            names.len(),
            nonzero.len()
        ),
    )
}

/// Matching experiment: exact copies at th=1, then noisy queries at th=1
/// and th=0.2 over five seeds. Returns (report bytes, hits@1 exact,
/// mean hits@10 at th=1, mean hits@10 at th=0.2).
fn run_matching() -> Result<(String, f64, f64, f64), String> {
    let fixture = MatchingFixture::generate(&MatchingFixtureConfig::default()).map_err(|e| e.to_string())?;
    let reference_graph: KnowledgeGraph = fixture.reference.clone();
    let train_triples = reference_graph.triples.clone();
    let split = DatasetSplit::from_parts(reference_graph.clone(), train_triples, Vec::new(), Vec::new())
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        model: ModelConfig { layers: 2, dim: 16, ..ModelConfig::default() },
        max_epochs: 100,
        eval_interval: 50,
        monitor: Monitor::Train,
        seed: 5,
        ..TrainConfig::default()
    };
    let model = train(&split, &fixture.features, &cfg).map_err(|e| e.to_string())?.model;
    let reference = ReferenceEmbeddings::compute(&model, &reference_graph, &fixture.features).map_err(|e| e.to_string())?;

    let exact = evaluate_matching(&fixture.queries, &model, &reference, 1.0, 0).map_err(|e| e.to_string())?;
    let mut bytes = exact.to_json();
    let (mut full, mut reduced) = (0.0, 0.0);
    let seeds = 5;
    for s in 0..seeds {
        let queries = fixture.make_queries(0.5, 100 + s).map_err(|e| e.to_string())?;
        let a = evaluate_matching(&queries, &model, &reference, 1.0, s).map_err(|e| e.to_string())?;
        let b = evaluate_matching(&queries, &model, &reference, 0.2, s).map_err(|e| e.to_string())?;
        full += a.hits_at(10);
        reduced += b.hits_at(10);
        bytes.push_str(&a.to_json());
        bytes.push_str(&b.to_json());
    }
    Ok((bytes, exact.hits_at(1), full / seeds as f64, reduced / seeds as f64))
}

fn criterion_8(reports: &mut Vec<String>) -> Outcome {
    let (bytes, exact, full, reduced) = run_matching()?;
    reports.push(bytes);
    ensure(
        exact == 1.0 && full >= reduced,
        format!("exact copies Hits@1 = {exact}; noisy queries, 5 seeds: Hits@10 th=1.0 {full:.3} ≥ th=0.2 {reduced:.3}"),
    )
}

fn criterion_9(first: &[String]) -> Outcome {
    if first.len() != 2 {
        return Err("criteria 5 and 8 did not both produce reports".into());
    }
    let (overfit, _) = run_overfit()?;
    let (matching, ..) = run_matching()?;
    ensure(
        overfit == first[0] && matching == first[1],
        format!(
            "rerun with identical seeds: overfit report {} ({} bytes), matching report {} ({} bytes)",
            if overfit == first[0] { "identical" } else { "differs" },
            overfit.len(),
            if matching == first[1] { "identical" } else { "differs" },
            matching.len()
        ),
    )
}

fn main() {
    let mut reports = Vec::new();
    let mut failed = 0;
    let mut run = |id: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let over = limit.is_some_and(|l| elapsed > l);
        let limit_note = limit.map(|l| format!(", limit {} s", l.as_secs())).unwrap_or_default();
        let (status, detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; too slow")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {id}: {detail} [{:.2} s{limit_note}]", elapsed.as_secs_f64());
    };

    let secs = |s| Some(Duration::from_secs(s));
    run("1", secs(10), &mut criterion_1);
    run("2", secs(10), &mut criterion_2);
    run("3", secs(30), &mut criterion_3);
    run("4", None, &mut criterion_4);
    run("5", secs(300), &mut || criterion_5(&mut reports));
    run("6", None, &mut criterion_6);
    run("7", None, &mut criterion_7);
    run("8", secs(300), &mut || criterion_8(&mut reports));
    let first = reports.clone();
    run("9", None, &mut || criterion_9(&first));
    println!(
        "SKIP criterion 10: long-run benchmark targets (FB15k-237, WN18) are documented in the README and not run here"
    );

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
