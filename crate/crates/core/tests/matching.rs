mod common;

use common::*;
use rand::Rng;
use relatt_core::graph::{AugmentOptions, FeatureMode, FeatureSource, KnowledgeGraph, Triple, Vocab};
use relatt_core::matching::{
    evaluate_matching, infer_embeddings, load_query_dir, load_reference, match_entities, sample_query_neighbors,
    MatchError, QueryGraph, ReferenceEmbeddings,
};
use relatt_core::model::{model_forward, Mode, ModelConfig, ModelError, ModelParams, TrainedModel};
use relatt_core::numeric::Tensor;
use relatt_core::rng::{item_rng, phase_rng, Phase};
use relatt_core::synthetic::{MatchingFixture, MatchingFixtureConfig};

fn relations(k: usize) -> Vocab {
    Vocab::from_ids((0..k).map(|r| format!("r{r}"))).unwrap()
}

fn random_model(cfg: ModelConfig, feature_dim: usize, k: usize, seed: u64) -> TrainedModel {
    let mut r = phase_rng(seed, Phase::Init);
    let num_rel = if cfg.augment.add_inverse { 2 * k } else { k };
    let init = ModelParams::init(&cfg, feature_dim, num_rel, None, &mut r).unwrap();
    let params = ModelParams::from_store(randomize(&mut r, init.store())).unwrap();
    TrainedModel {
        config: cfg,
        params,
        feature_dim,
        feature_mode: FeatureMode::File,
        entities: Vocab::new(),
        relations: relations(k),
    }
}

fn random_query(seed: u64, n: usize, k: usize, count: usize, d: usize) -> QueryGraph {
    let mut r = item_rng(seed, Phase::Fixture, 0);
    let triples = random_triples(&mut r, n, k, count);
    let graph = KnowledgeGraph {
        entities: Vocab::from_ids((0..n).map(|i| format!("n{i}"))).unwrap(),
        relations: relations(k),
        triples,
    };
    let features = FeatureSource::new(FeatureMode::File, random_tensor(&mut r, n, d)).unwrap();
    QueryGraph::new("q", graph, features, 0, "e0").unwrap()
}

#[test]
fn query_inference_matches_dense_oracle() {
    for seed in 0..20 {
        let cfg = ModelConfig { dim: 5, ..ModelConfig::default() };
        let model = random_model(cfg.clone(), 4, 3, seed);
        let q = random_query(seed, 8, 3, 12, 4);
        let got = infer_embeddings(&q, &model).unwrap();
        let (want, _) = dense_forward(&q.graph.triples, 8, 3, q.features.values(), model.params.store(), &cfg);
        assert!(got.max_abs_diff(&want) < 1e-10, "seed {seed}");
    }
}

#[test]
fn exact_copy_gets_the_standalone_embedding() {
    let cfg = ModelConfig { dim: 6, ..ModelConfig::default() };
    let model = random_model(cfg.clone(), 4, 3, 2);
    let q = random_query(5, 9, 3, 14, 4);
    let aug = model.augment(9, &q.graph.triples);
    let standalone = model_forward(&aug, &q.features, &model.params, &cfg, Mode::Eval).unwrap();
    assert_eq!(infer_embeddings(&q, &model).unwrap(), standalone.embeddings);
}

#[test]
fn isolated_node_uses_the_self_loop_path_only() {
    let cfg = ModelConfig { dim: 3, layers: 2, ..ModelConfig::default() };
    let model = random_model(cfg, 2, 2, 4);
    let graph = KnowledgeGraph {
        entities: Vocab::from_ids(["solo"]).unwrap(),
        relations: relations(2),
        triples: Vec::new(),
    };
    let x = Tensor::from_rows(&[vec![0.3, -0.8]]).unwrap();
    let q = QueryGraph::new("q", graph, FeatureSource::new(FeatureMode::File, x.clone()).unwrap(), 0, "e0").unwrap();
    let got = infer_embeddings(&q, &model).unwrap();
    let w0 = model.params.get("layer0.self_W0").unwrap();
    let w1 = model.params.get("layer1.self_W0").unwrap();
    let h1 = x.matmul(w0).unwrap().map(|v| v.max(0.0));
    let want = h1.matmul(w1).unwrap();
    assert!(got.max_abs_diff(&want) < 1e-15);
}

#[test]
fn unknown_relation_and_table_models_are_rejected() {
    let model = random_model(ModelConfig { dim: 3, ..ModelConfig::default() }, 2, 2, 1);
    let graph = KnowledgeGraph {
        entities: Vocab::from_ids(["a", "b"]).unwrap(),
        relations: Vocab::from_ids(["unseen"]).unwrap(),
        triples: vec![Triple::new(0, 0, 1)],
    };
    let feats = FeatureSource::new(FeatureMode::File, Tensor::zeros(2, 2)).unwrap();
    let q = QueryGraph::new("q", graph, feats, 0, "e0").unwrap();
    assert!(matches!(infer_embeddings(&q, &model), Err(ModelError::Vocab(_))));

    let mut table_model = model;
    table_model.feature_mode = FeatureMode::Table;
    let q = random_query(1, 4, 2, 3, 2);
    assert!(matches!(infer_embeddings(&q, &table_model), Err(ModelError::Mode(_))));
}

#[test]
fn sampling_is_seeded_and_never_adds_edges() {
    let q = random_query(3, 12, 2, 30, 3);
    for th in [0.1, 0.2, 0.5, 0.9] {
        let a = sample_query_neighbors(&q, th, &mut item_rng(1, Phase::Sampling, 0)).unwrap();
        let b = sample_query_neighbors(&q, th, &mut item_rng(1, Phase::Sampling, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.graph.triples.len() <= q.graph.triples.len());
        let deg = q.matching_degree();
        assert_eq!(a.matching_degree(), ((th * deg as f64) - 1e-9).ceil() as usize);
        assert_eq!(a.graph.entities.id(a.matching_entity), q.graph.entities.id(q.matching_entity));
    }
}

#[test]
fn ranking_is_scale_invariant() {
    let mut r = item_rng(4, Phase::Fixture, 0);
    let reference = random_tensor(&mut r, 30, 5);
    for _ in 0..20 {
        let q: Vec<f64> = (0..5).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c: f64 = r.gen_range(0.01..100.0);
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        let ref_scaled = reference.scale(r.gen_range(0.01..100.0));
        let a: Vec<usize> = match_entities(&q, &reference, 30).unwrap().iter().map(|x| x.index).collect();
        let b: Vec<usize> = match_entities(&scaled, &ref_scaled, 30).unwrap().iter().map(|x| x.index).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn fixture_round_trips_and_exact_copies_match_first() {
    let cfg = MatchingFixtureConfig { entities: 60, triples: 150, queries: 8, ..MatchingFixtureConfig::default() };
    let fixture = MatchingFixture::generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    fixture.write(dir.path()).unwrap();

    let model = random_model(ModelConfig { dim: 8, ..ModelConfig::default() }, 16, 4, 9);
    let (graph, features) = load_reference(&dir.path().join("reference"), &model.relations).unwrap();
    let strings = |g: &KnowledgeGraph| -> Vec<(String, String, String)> {
        g.triples
            .iter()
            .map(|t| {
                let (h, r, tl) = g.triple_strings(t);
                (h.into(), r.into(), tl.into())
            })
            .collect()
    };
    assert_eq!(strings(&graph), strings(&fixture.reference));
    for (i, id) in graph.entities.ids().iter().enumerate() {
        let j = fixture.reference.entities.index_of(id).unwrap();
        assert_eq!(features.values().row(i), fixture.features.values().row(j));
    }
    let queries = load_query_dir(&dir.path().join("queries"), &model.relations).unwrap();
    assert_eq!(queries.len(), fixture.queries.len());
    for (a, b) in queries.iter().zip(&fixture.queries) {
        assert_eq!((&a.name, &a.ground_truth), (&b.name, &b.ground_truth));
        assert_eq!(a.graph.entities.id(a.matching_entity), b.graph.entities.id(b.matching_entity));
        assert!(strings(&a.graph) == strings(&b.graph), "{} triples differ", a.name);
    }

    let reference = ReferenceEmbeddings::compute(&model, &graph, &features).unwrap();
    let before = (reference.clone(), model.clone());
    let report = evaluate_matching(&queries, &model, &reference, 1.0, 3).unwrap();
    assert_eq!(report.hits_at(1), 1.0);
    assert_eq!((reference, model.clone()), before);
    let again = evaluate_matching(&queries, &model, &before.0, 1.0, 3).unwrap();
    assert_eq!(report.to_json(), again.to_json());
}

#[test]
fn missing_ground_truth_entity_is_an_error() {
    let model = random_model(ModelConfig { dim: 3, ..ModelConfig::default() }, 3, 2, 1);
    let q = random_query(2, 5, 2, 6, 3);
    let reference = ReferenceEmbeddings {
        entities: Vocab::from_ids(["x", "y"]).unwrap(),
        embeddings: Tensor::filled(2, 3, 1.0),
    };
    assert!(matches!(
        evaluate_matching(&[q], &model, &reference, 1.0, 0),
        Err(MatchError::Query { .. })
    ));
}

#[test]
fn augmentation_flags_flow_into_inference() {
    let cfg = ModelConfig {
        dim: 4,
        augment: AugmentOptions { add_inverse: false, add_self_loop: false },
        ..ModelConfig::default()
    };
    let model = random_model(cfg.clone(), 3, 2, 6);
    let q = random_query(8, 7, 2, 10, 3);
    let got = infer_embeddings(&q, &model).unwrap();
    let (want, _) = dense_forward(&q.graph.triples, 7, 2, q.features.values(), model.params.store(), &cfg);
    assert!(got.max_abs_diff(&want) < 1e-10);
}
