//! Seeded synthetic fixtures: random knowledge graphs and entity-matching
//! benchmarks built from ego graphs of a reference graph.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use rand::Rng as _;

use crate::graph::{write_features, write_triples, FeatureMode, FeatureSource, GraphError, KnowledgeGraph, Triple, Vocab};
use crate::matching::{write_query, MatchError, QueryGraph};
use crate::numeric::Tensor;
use crate::rng::{item_rng, phase_rng, Phase};

/// A graph of `num_triples` distinct triples over entities `e0..` and
/// relations `r0..`, drawn uniformly without self-edges. Every entity and
/// relation is in the vocabulary even if no triple mentions it.
pub fn random_graph(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
) -> Result<KnowledgeGraph, GraphError> {
    draw_graph(num_entities, num_relations, num_triples, seed, false)
}

/// Like [`random_graph`], but entities come in two types (even and odd
/// index) and every relation has a fixed domain and range: even relations
/// point from even to odd entities, odd relations the other way. No
/// relation then holds in both directions between two entities.
pub fn typed_random_graph(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
) -> Result<KnowledgeGraph, GraphError> {
    draw_graph(num_entities, num_relations, num_triples, seed, true)
}

fn draw_graph(
    num_entities: usize,
    num_relations: usize,
    num_triples: usize,
    seed: u64,
    typed: bool,
) -> Result<KnowledgeGraph, GraphError> {
    let capacity = if typed {
        let even = num_entities.div_ceil(2);
        even * (num_entities - even) * num_relations
    } else {
        num_entities * num_entities.saturating_sub(1) * num_relations
    };
    if num_triples == 0 || num_triples > capacity {
        return Err(GraphError::Config(format!(
            "cannot draw {num_triples} distinct triples from {num_entities} entities and {num_relations} relations"
        )));
    }
    let mut rng = phase_rng(seed, Phase::Fixture);
    let mut seen = HashSet::with_capacity(num_triples);
    let mut triples = Vec::with_capacity(num_triples);
    while triples.len() < num_triples {
        let h = rng.gen_range(0..num_entities);
        let t = rng.gen_range(0..num_entities);
        if h == t {
            continue;
        }
        let r = rng.gen_range(0..num_relations);
        if typed && (h % 2 != r % 2 || t % 2 == r % 2) {
            continue;
        }
        let triple = Triple::new(h, r, t);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    Ok(KnowledgeGraph {
        entities: Vocab::from_ids((0..num_entities).map(|i| format!("e{i}")))?,
        relations: Vocab::from_ids((0..num_relations).map(|r| format!("r{r}")))?,
        triples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingFixtureConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub feature_dim: usize,
    pub queries: usize,
    /// Radius of the ego graph cut around each labeled entity.
    pub hops: usize,
    /// Half-width of the uniform noise added to query features.
    pub noise: f64,
    pub seed: u64,
}

impl Default for MatchingFixtureConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            relations: 4,
            triples: 800,
            feature_dim: 16,
            queries: 40,
            hops: 2,
            noise: 0.0,
            seed: 7,
        }
    }
}

/// A reference graph with attribute features plus query graphs cut from
/// it. Query `i` is the subgraph induced by all entities within `hops`
/// of labeled entity `i`, with entities renamed and features perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingFixture {
    pub reference: KnowledgeGraph,
    pub features: FeatureSource,
    pub labeled: Vec<usize>,
    pub hops: usize,
    pub queries: Vec<QueryGraph>,
}

impl MatchingFixture {
    pub fn generate(cfg: &MatchingFixtureConfig) -> Result<Self, MatchError> {
        if cfg.feature_dim == 0 {
            return Err(MatchError::Config("feature dimension must be positive".into()));
        }
        let reference = random_graph(cfg.entities, cfg.relations, cfg.triples, cfg.seed)?;
        let mut rng = item_rng(cfg.seed, Phase::Fixture, 1);
        let values = Tensor::from_fn(cfg.entities, cfg.feature_dim, |_, _| rng.gen_range(-1.0..=1.0));
        let features = FeatureSource::new(FeatureMode::File, values)?;

        let mut degree = vec![0usize; cfg.entities];
        for t in &reference.triples {
            degree[t.head] += 1;
            degree[t.tail] += 1;
        }
        let connected: Vec<usize> = (0..cfg.entities).filter(|&e| degree[e] > 0).collect();
        if cfg.queries > connected.len() {
            return Err(MatchError::Config(format!(
                "{} queries requested but only {} entities have neighbors",
                cfg.queries,
                connected.len()
            )));
        }
        let mut labeled: Vec<usize> = rand::seq::index::sample(&mut rng, connected.len(), cfg.queries)
            .into_iter()
            .map(|i| connected[i])
            .collect();
        labeled.sort_unstable();

        let mut fixture = Self {
            reference,
            features,
            labeled,
            hops: cfg.hops,
            queries: Vec::new(),
        };
        fixture.queries = fixture.make_queries(cfg.noise, cfg.seed)?;
        Ok(fixture)
    }

    /// Rebuilds the query set with a different feature noise.
    pub fn make_queries(&self, noise: f64, seed: u64) -> Result<Vec<QueryGraph>, MatchError> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(MatchError::Config(format!("noise must be a non-negative number, got {noise}")));
        }
        self.labeled
            .iter()
            .enumerate()
            .map(|(i, &center)| self.ego_query(i, center, noise, seed))
            .collect()
    }

    fn ego_query(&self, i: usize, center: usize, noise: f64, seed: u64) -> Result<QueryGraph, MatchError> {
        let n = self.reference.num_entities();
        let mut adjacency = vec![Vec::new(); n];
        for t in &self.reference.triples {
            adjacency[t.head].push(t.tail);
            adjacency[t.tail].push(t.head);
        }
        let mut dist = vec![usize::MAX; n];
        dist[center] = 0;
        let mut order = vec![center];
        let mut queue = VecDeque::from([center]);
        while let Some(v) = queue.pop_front() {
            if dist[v] == self.hops {
                continue;
            }
            for &u in &adjacency[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    order.push(u);
                    queue.push_back(u);
                }
            }
        }
        let mut local = vec![usize::MAX; n];
        for (j, &v) in order.iter().enumerate() {
            local[v] = j;
        }
        let triples = self
            .reference
            .triples
            .iter()
            .filter(|t| local[t.head] != usize::MAX && local[t.tail] != usize::MAX)
            .map(|t| Triple::new(local[t.head], t.relation, local[t.tail]))
            .collect();
        let name = format!("q{i:03}");
        let graph = KnowledgeGraph {
            entities: Vocab::from_ids((0..order.len()).map(|j| format!("{name}_{j}")))?,
            relations: self.reference.relations.clone(),
            triples,
        };
        let mut rng = item_rng(seed, Phase::Fixture, 1000 + i as u64);
        let source = self.features.values();
        let values = Tensor::from_fn(order.len(), source.cols(), |j, c| {
            let v = source.get(order[j], c);
            if noise > 0.0 {
                v + rng.gen_range(-noise..=noise)
            } else {
                v
            }
        });
        QueryGraph::new(
            name,
            graph,
            FeatureSource::new(FeatureMode::File, values)?,
            0,
            self.reference.entities.id(center),
        )
    }

    /// Writes `reference/{triples.tsv,features.txt}` and one directory
    /// per query under `queries/`.
    pub fn write(&self, dir: &Path) -> Result<(), MatchError> {
        let reference = dir.join("reference");
        std::fs::create_dir_all(&reference).map_err(|source| GraphError::Io {
            path: reference.clone(),
            source,
        })?;
        write_triples(&reference.join("triples.tsv"), &self.reference, &self.reference.triples)?;
        write_features(&reference.join("features.txt"), self.reference.entities.ids(), self.features.values())?;
        for q in &self.queries {
            write_query(&dir.join("queries").join(&q.name), q)?;
        }
        Ok(())
    }
}
