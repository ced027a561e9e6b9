//! Knowledge-graph data model: vocabularies, triples, dataset splits,
//! graph augmentation, entity features and negative sampling.

mod augment;
mod features;
mod io;
mod negatives;
mod split;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, AugmentOptions, AugmentedGraph};
pub use features::{init_random_features, write_features, FeatureMode, FeatureSource};
pub use io::{load_features, load_triples, load_triples_with_relations, parse_triples, write_triples, LoadStats};
pub use negatives::{sample_negatives, LabeledTripleBatch, NegativeSampling};
pub use split::DatasetSplit;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{0}: no triples")]
    EmptyGraph(String),
    #[error("features missing for {} entities: {}", .missing.len(), .missing.join(", "))]
    Coverage { missing: Vec<String> },
    #[error("{origin}:{line}: expected {expected} feature values, found {found}")]
    Dimension {
        origin: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("triple ({0}) appears in more than one split")]
    SplitOverlap(String),
    #[error("negative sampling: {0}")]
    Sampling(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

/// A fact `(head, relation, tail)` over dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijection between external string ids and dense indices `0..len`,
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for id in ids {
            let id = id.into();
            if v.index.contains_key(&id) {
                return Err(GraphError::Config(format!("duplicate vocabulary id `{id}`")));
            }
            v.intern(&id);
        }
        Ok(v)
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Entity and relation vocabularies plus a duplicate-free triple list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Builds a graph from string triples, dropping exact duplicates.
    /// Returns the graph and the number of duplicates dropped.
    pub fn from_string_triples<'a, I>(triples: I) -> (Self, usize)
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut b = GraphBuilder::new();
        for (h, r, t) in triples {
            b.add(h, r, t).expect("open relation vocabulary");
        }
        let dups = b.duplicates;
        (b.finish(), dups)
    }

    pub fn triple_strings(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entities.id(t.head),
            self.relations.id(t.relation),
            self.entities.id(t.tail),
        )
    }

    /// Checks every structural invariant of the graph.
    pub fn validate(&self) -> Result<(), GraphError> {
        let (n, k) = (self.num_entities(), self.num_relations());
        let mut seen = HashSet::with_capacity(self.triples.len());
        for t in &self.triples {
            if t.head >= n || t.tail >= n || t.relation >= k {
                return Err(GraphError::Config(format!("triple {t:?} out of range")));
            }
            if !seen.insert(*t) {
                return Err(GraphError::Config(format!("duplicate triple {t:?}")));
            }
        }
        Ok(())
    }
}

/// Incremental graph construction shared by file and in-memory loaders.
#[derive(Debug, Default)]
pub(crate) struct GraphBuilder {
    entities: Vocab,
    relations: Vocab,
    fixed_relations: bool,
    seen: HashSet<Triple>,
    triples: Vec<Triple>,
    pub(crate) duplicates: usize,
}

impl GraphBuilder {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// A builder whose relation vocabulary is closed: unknown relation
    /// names are rejected.
    pub(crate) fn with_relations(relations: Vocab) -> Self {
        Self {
            relations,
            fixed_relations: true,
            ..Self::default()
        }
    }

    /// Adds a triple; returns its dense form and whether it was new.
    pub(crate) fn add(&mut self, h: &str, r: &str, t: &str) -> Result<(Triple, bool), GraphError> {
        let relation = if self.fixed_relations {
            self.relations
                .index_of(r)
                .ok_or_else(|| GraphError::UnknownRelation(r.to_string()))?
        } else {
            self.relations.intern(r)
        };
        let head = self.entities.intern(h);
        let tail = self.entities.intern(t);
        let triple = Triple::new(head, relation, tail);
        if self.seen.insert(triple) {
            self.triples.push(triple);
            Ok((triple, true))
        } else {
            self.duplicates += 1;
            Ok((triple, false))
        }
    }

    pub(crate) fn finish(self) -> KnowledgeGraph {
        KnowledgeGraph {
            entities: self.entities,
            relations: self.relations,
            triples: self.triples,
        }
    }
}
