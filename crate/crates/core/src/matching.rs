//! Unsupervised entity matching between small query graphs and a
//! reference graph.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    load_features, load_triples_with_relations, write_features, write_triples, FeatureMode, FeatureSource,
    GraphError, KnowledgeGraph, Triple, Vocab,
};
use crate::model::{ModelError, TrainedModel};
use crate::numeric::Tensor;
use crate::rng::{item_rng, Phase};

pub const MATCH_HITS_AT: [usize; 4] = [1, 5, 10, 30];

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("similarity: {0}")]
    Similarity(String),
    #[error("query `{query}`: {message}")]
    Query { query: String, message: String },
}

/// A small graph around one entity to be matched against the reference
/// graph. Features are fixed attribute vectors, one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGraph {
    pub name: String,
    pub graph: KnowledgeGraph,
    pub features: FeatureSource,
    pub matching_entity: usize,
    /// Reference-graph id of the true match.
    pub ground_truth: String,
}

impl QueryGraph {
    pub fn new(
        name: impl Into<String>,
        graph: KnowledgeGraph,
        features: FeatureSource,
        matching_entity: usize,
        ground_truth: impl Into<String>,
    ) -> Result<Self, MatchError> {
        let q = Self {
            name: name.into(),
            graph,
            features,
            matching_entity,
            ground_truth: ground_truth.into(),
        };
        q.validate()?;
        Ok(q)
    }

    fn error(&self, message: impl Into<String>) -> MatchError {
        MatchError::Query {
            query: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        self.graph.validate()?;
        let n = self.graph.num_entities();
        if self.matching_entity >= n {
            return Err(self.error(format!("matching entity {} out of range for {n} entities", self.matching_entity)));
        }
        if self.features.num_entities() != n {
            return Err(self.error(format!("{} feature rows for {n} entities", self.features.num_entities())));
        }
        if self.features.mode() != FeatureMode::File {
            return Err(self.error("query features must be fixed attribute vectors"));
        }
        if self.ground_truth.is_empty() {
            return Err(self.error("missing ground truth"));
        }
        Ok(())
    }

    /// Base triples incident to the matching entity.
    pub fn matching_degree(&self) -> usize {
        let m = self.matching_entity;
        self.graph.triples.iter().filter(|t| t.head == m || t.tail == m).count()
    }
}

fn io_error(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_meta(path: &Path) -> Result<(String, String), MatchError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let origin = path.display().to_string();
    let mut entity = None;
    let mut truth = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| GraphError::Parse {
            origin: origin.clone(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key=value`, got `{line}`")))?;
        let value = value.trim().to_string();
        match key.trim() {
            "matching_entity" => entity = Some(value),
            "ground_truth" => truth = Some(value),
            other => return Err(parse_err(format!("unknown key `{other}`")).into()),
        }
    }
    let missing = |key: &str| GraphError::Parse {
        origin: origin.clone(),
        line: 0,
        message: format!("missing `{key}`"),
    };
    Ok((
        entity.ok_or_else(|| missing("matching_entity"))?,
        truth.ok_or_else(|| missing("ground_truth"))?,
    ))
}

/// Reads one query directory (`triples.tsv`, `features.txt`, `meta.txt`).
/// Relations are resolved against `relations`.
pub fn load_query(dir: &Path, relations: &Vocab) -> Result<QueryGraph, MatchError> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let (entity, truth) = parse_meta(&dir.join("meta.txt"))?;
    let mut graph = load_triples_with_relations(&dir.join("triples.tsv"), relations)?;
    let matching_entity = graph.entities.intern(&entity);
    let features = load_features(&dir.join("features.txt"), &graph.entities)?;
    QueryGraph::new(name, graph, features, matching_entity, truth)
}

/// Reads a reference graph directory (`triples.tsv`, `features.txt`).
pub fn load_reference(dir: &Path, relations: &Vocab) -> Result<(KnowledgeGraph, FeatureSource), MatchError> {
    let path = dir.join("triples.tsv");
    let graph = load_triples_with_relations(&path, relations)?;
    if graph.triples.is_empty() {
        return Err(GraphError::EmptyGraph(path.display().to_string()).into());
    }
    let features = load_features(&dir.join("features.txt"), &graph.entities)?;
    Ok((graph, features))
}

/// Loads every subdirectory of `dir` as a query, in name order.
pub fn load_query_dir(dir: &Path, relations: &Vocab) -> Result<Vec<QueryGraph>, MatchError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    if dirs.is_empty() {
        return Err(MatchError::Config(format!("no query directories under {}", dir.display())));
    }
    dirs.sort();
    dirs.iter().map(|d| load_query(d, relations)).collect()
}

/// Writes `q` in the layout read by [`load_query`].
pub fn write_query(dir: &Path, q: &QueryGraph) -> Result<(), MatchError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    write_triples(&dir.join("triples.tsv"), &q.graph, &q.graph.triples)?;
    write_features(&dir.join("features.txt"), q.graph.entities.ids(), q.features.values())?;
    let meta = format!(
        "matching_entity={}\nground_truth={}\n",
        q.graph.entities.id(q.matching_entity),
        q.ground_truth
    );
    let path = dir.join("meta.txt");
    fs::write(&path, meta).map_err(|e| io_error(&path, e))?;
    Ok(())
}

/// Keeps `⌈th · degree⌉` uniformly chosen edges incident to the matching
/// entity, all other edges, and then only the part of the graph still
/// connected to the matching entity. `th = 1` returns `q` unchanged.
pub fn sample_query_neighbors(q: &QueryGraph, th: f64, rng: &mut impl rand::Rng) -> Result<QueryGraph, MatchError> {
    if !(th > 0.0 && th <= 1.0) {
        return Err(MatchError::Config(format!("threshold must be in (0, 1], got {th}")));
    }
    if th == 1.0 {
        return Ok(q.clone());
    }
    let m = q.matching_entity;
    let incident: Vec<usize> = (0..q.graph.triples.len())
        .filter(|&i| {
            let t = q.graph.triples[i];
            t.head == m || t.tail == m
        })
        .collect();
    let keep = ((th * incident.len() as f64 - 1e-9).ceil().max(0.0) as usize).min(incident.len());
    let mut dropped = vec![false; q.graph.triples.len()];
    for &i in &incident {
        dropped[i] = true;
    }
    for j in rand::seq::index::sample(rng, incident.len(), keep) {
        dropped[incident[j]] = false;
    }
    let kept: Vec<Triple> = q
        .graph
        .triples
        .iter()
        .zip(&dropped)
        .filter(|(_, &d)| !d)
        .map(|(t, _)| *t)
        .collect();

    let n = q.graph.num_entities();
    let mut adjacency = vec![Vec::new(); n];
    for t in &kept {
        adjacency[t.head].push(t.tail);
        adjacency[t.tail].push(t.head);
    }
    let mut reached = vec![false; n];
    reached[m] = true;
    let mut queue = VecDeque::from([m]);
    while let Some(v) = queue.pop_front() {
        for &u in &adjacency[v] {
            if !reached[u] {
                reached[u] = true;
                queue.push_back(u);
            }
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for v in (0..n).filter(|&v| reached[v]) {
        remap[v] = ids.len();
        ids.push(q.graph.entities.id(v).to_string());
        rows.extend_from_slice(q.features.values().row(v));
    }
    let graph = KnowledgeGraph {
        entities: Vocab::from_ids(&ids)?,
        relations: q.graph.relations.clone(),
        triples: kept
            .iter()
            .filter(|t| reached[t.head])
            .map(|t| Triple::new(remap[t.head], t.relation, remap[t.tail]))
            .collect(),
    };
    let values = Tensor::new(ids.len(), q.features.dim(), rows).expect("rows copied whole");
    QueryGraph::new(
        q.name.clone(),
        graph,
        FeatureSource::new(FeatureMode::File, values)?,
        remap[m],
        q.ground_truth.clone(),
    )
}

/// `graph`'s triples with relation indices translated into the model's
/// relation vocabulary.
fn model_triples(model: &TrainedModel, graph: &KnowledgeGraph) -> Result<Vec<Triple>, ModelError> {
    let map = graph
        .relations
        .ids()
        .iter()
        .map(|r| {
            model
                .relations
                .index_of(r)
                .ok_or_else(|| ModelError::Vocab(format!("relation `{r}` is not known to the model")))
        })
        .collect::<Result<Vec<usize>, _>>()?;
    Ok(graph
        .triples
        .iter()
        .map(|t| Triple::new(t.head, map[t.relation], t.tail))
        .collect())
}

/// Embeds every entity of `graph` with trained weights. Only models over
/// fixed attribute features can embed entities they were not trained on.
pub fn infer_graph(model: &TrainedModel, graph: &KnowledgeGraph, features: &FeatureSource) -> Result<Tensor, ModelError> {
    if model.feature_mode != FeatureMode::File {
        return Err(ModelError::Mode(
            "model uses a trainable embedding table and cannot embed unseen entities".into(),
        ));
    }
    let triples = model_triples(model, graph)?;
    let aug = model.augment(graph.num_entities(), &triples);
    model.embed(&aug, features)
}

pub fn infer_embeddings(q: &QueryGraph, model: &TrainedModel) -> Result<Tensor, ModelError> {
    infer_graph(model, &q.graph, &q.features)
}

/// Embeddings of every reference-graph entity, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEmbeddings {
    pub entities: Vocab,
    pub embeddings: Tensor,
}

impl ReferenceEmbeddings {
    pub fn compute(model: &TrainedModel, graph: &KnowledgeGraph, features: &FeatureSource) -> Result<Self, ModelError> {
        Ok(Self {
            entities: graph.entities.clone(),
            embeddings: infer_graph(model, graph, features)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub score: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The `k` reference rows most cosine-similar to `query`, best first;
/// equal scores are ordered by row index. Zero reference rows score 0.
pub fn match_entities(query: &[f64], reference: &Tensor, k: usize) -> Result<Vec<Candidate>, MatchError> {
    if k == 0 {
        return Err(MatchError::Config("K must be at least 1".into()));
    }
    if query.len() != reference.cols() {
        return Err(MatchError::Similarity(format!(
            "query has dimension {}, reference rows have {}",
            query.len(),
            reference.cols()
        )));
    }
    let qn = norm(query);
    if qn == 0.0 || !qn.is_finite() {
        return Err(MatchError::Similarity("query embedding has zero norm".into()));
    }
    let mut scored: Vec<Candidate> = (0..reference.rows())
        .map(|i| {
            let row = reference.row(i);
            let rn = norm(row);
            let dot: f64 = row.iter().zip(query).map(|(a, b)| a * b).sum();
            let score = if rn == 0.0 { 0.0 } else { dot / (qn * rn) };
            Candidate { index: i, score }
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEntity {
    pub entity: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMatch {
    pub query: String,
    pub ground_truth: String,
    /// 1-based position of the ground truth among `candidates`.
    pub rank: Option<usize>,
    /// Degree of the matching entity after sampling.
    pub degree: usize,
    pub candidates: Vec<ScoredEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub th: f64,
    pub count: usize,
    pub hits: BTreeMap<usize, f64>,
    pub queries: Vec<QueryMatch>,
}

impl MatchReport {
    /// Aggregates per-query results; Hits@K is the fraction of queries
    /// whose ground truth is among the first K candidates.
    pub fn from_queries(th: f64, queries: Vec<QueryMatch>) -> Self {
        let count = queries.len();
        let hits = MATCH_HITS_AT
            .iter()
            .map(|&k| {
                let n = queries.iter().filter(|q| q.rank.is_some_and(|r| r <= k)).count();
                (k, if count == 0 { 0.0 } else { n as f64 / count as f64 })
            })
            .collect();
        Self {
            th,
            count,
            hits,
            queries,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn query_match(
    q: &QueryGraph,
    query_vec: &[f64],
    reference: &ReferenceEmbeddings,
    degree: usize,
) -> Result<QueryMatch, MatchError> {
    if reference.entities.index_of(&q.ground_truth).is_none() {
        return Err(q.error(format!("ground truth `{}` is not a reference entity", q.ground_truth)));
    }
    let k = MATCH_HITS_AT[MATCH_HITS_AT.len() - 1].min(reference.embeddings.rows());
    let candidates: Vec<ScoredEntity> = match_entities(query_vec, &reference.embeddings, k)
        .map_err(|e| q.error(e.to_string()))?
        .into_iter()
        .map(|c| ScoredEntity {
            entity: reference.entities.id(c.index).to_string(),
            score: c.score,
        })
        .collect();
    let rank = candidates.iter().position(|c| c.entity == q.ground_truth).map(|p| p + 1);
    Ok(QueryMatch {
        query: q.name.clone(),
        ground_truth: q.ground_truth.clone(),
        rank,
        degree,
        candidates,
    })
}

/// Sample, embed and match every query. Query `i` samples from its own
/// seeded stream, so results do not depend on scheduling.
pub fn evaluate_matching(
    queries: &[QueryGraph],
    model: &TrainedModel,
    reference: &ReferenceEmbeddings,
    th: f64,
    seed: u64,
) -> Result<MatchReport, MatchError> {
    if !(th > 0.0 && th <= 1.0) {
        return Err(MatchError::Config(format!("threshold must be in (0, 1], got {th}")));
    }
    let results = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let sampled = sample_query_neighbors(q, th, &mut item_rng(seed, Phase::Sampling, i as u64))?;
            let emb = infer_embeddings(&sampled, model)?;
            query_match(q, emb.row(sampled.matching_entity), reference, sampled.matching_degree())
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    Ok(MatchReport::from_queries(th, results))
}

/// Matching on raw features only: the matching entity's attribute vector
/// against the reference graph's attribute vectors.
pub fn feature_baseline(
    queries: &[QueryGraph],
    reference_entities: &Vocab,
    reference_features: &FeatureSource,
) -> Result<MatchReport, MatchError> {
    let reference = ReferenceEmbeddings {
        entities: reference_entities.clone(),
        embeddings: reference_features.values().clone(),
    };
    let results = queries
        .par_iter()
        .map(|q| query_match(q, q.features.values().row(q.matching_entity), &reference, q.matching_degree()))
        .collect::<Result<Vec<_>, MatchError>>()?;
    Ok(MatchReport::from_queries(1.0, results))
}
