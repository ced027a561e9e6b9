use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;

use super::io::{open, read_records, write_triples};
use super::{GraphBuilder, GraphError, KnowledgeGraph, Triple};
use crate::rng::{phase_rng, Phase};

/// Train/valid/test triple lists over one shared graph.
///
/// `graph.triples` is the concatenation `train ++ valid ++ test`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub graph: KnowledgeGraph,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl DatasetSplit {
    /// Assembles a split, rejecting overlap between parts and any triple
    /// outside `graph`.
    pub fn from_parts(
        mut graph: KnowledgeGraph,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(train.len() + valid.len() + test.len());
        for t in train.iter().chain(&valid).chain(&test) {
            if !seen.insert(*t) {
                let (h, r, tl) = graph.triple_strings(t);
                return Err(GraphError::SplitOverlap(format!("{h}, {r}, {tl}")));
            }
        }
        let covered: HashSet<Triple> = graph.triples.iter().copied().collect();
        if covered != seen {
            return Err(GraphError::Config(
                "split parts do not cover exactly the graph's triples".into(),
            ));
        }
        graph.triples = train.iter().chain(&valid).chain(&test).copied().collect();
        graph.validate()?;
        Ok(Self {
            graph,
            train,
            valid,
            test,
        })
    }

    /// Reads `train.tsv`, `valid.tsv` and `test.tsv` from `dir` into one
    /// vocabulary (train first). Duplicates inside a file are dropped; a
    /// triple appearing in two files is an error.
    pub fn load(dir: &Path) -> Result<Self, GraphError> {
        let mut builder = GraphBuilder::new();
        let mut parts: [Vec<Triple>; 3] = Default::default();
        let mut owner: std::collections::HashMap<Triple, usize> = Default::default();
        for (slot, name) in ["train.tsv", "valid.tsv", "test.tsv"].iter().enumerate() {
            let path = dir.join(name);
            let origin = path.display().to_string();
            for (_, [h, r, t]) in read_records(open(&path)?, &origin)? {
                let (triple, _) = builder.add(&h, &r, &t)?;
                match owner.get(&triple) {
                    None => {
                        owner.insert(triple, slot);
                        parts[slot].push(triple);
                    }
                    Some(&s) if s == slot => {}
                    Some(_) => return Err(GraphError::SplitOverlap(format!("{h}, {r}, {t}"))),
                }
            }
        }
        let [train, valid, test] = parts;
        if train.is_empty() {
            return Err(GraphError::EmptyGraph(dir.join("train.tsv").display().to_string()));
        }
        let graph = builder.finish();
        Self::from_parts(graph, train, valid, test)
    }

    /// Seeded uniform-random split; fractions of train and valid, the
    /// remainder is test.
    pub fn random(graph: KnowledgeGraph, train_frac: f64, valid_frac: f64, seed: u64) -> Result<Self, GraphError> {
        if !(0.0..=1.0).contains(&train_frac)
            || !(0.0..=1.0).contains(&valid_frac)
            || train_frac + valid_frac > 1.0
        {
            return Err(GraphError::Config(format!(
                "invalid split fractions {train_frac}/{valid_frac}"
            )));
        }
        let mut order = graph.triples.clone();
        order.shuffle(&mut phase_rng(seed, Phase::Split));
        let n = order.len();
        let n_train = (train_frac * n as f64).round() as usize;
        let n_valid = ((valid_frac * n as f64).round() as usize).min(n - n_train);
        let test = order.split_off(n_train + n_valid);
        let valid = order.split_off(n_train);
        Self::from_parts(graph, order, valid, test)
    }

    /// Writes the three parts in the layout read by [`DatasetSplit::load`].
    pub fn write(&self, dir: &Path) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir).map_err(|source| GraphError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_triples(&dir.join("train.tsv"), &self.graph, &self.train)?;
        write_triples(&dir.join("valid.tsv"), &self.graph, &self.valid)?;
        write_triples(&dir.join("test.tsv"), &self.graph, &self.test)
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}
