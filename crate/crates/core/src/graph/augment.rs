use super::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOptions {
    pub add_inverse: bool,
    pub add_self_loop: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self {
            add_inverse: true,
            add_self_loop: true,
        }
    }
}

/// Message-passing structure derived from a set of base triples.
///
/// An edge `(h, r, t)` carries a message from `t` to `h`: `t ∈ N_h^r`.
/// With inverse augmentation, relation `r + K` holds the reversed copy
/// of every base edge. Edge order is deterministic: base edges in input
/// order, then inverse edges in the same order.
///
/// The type cannot be augmented again; only a [`KnowledgeGraph`] can:
///
/// ```compile_fail
/// use relatt_core::graph::{augment, KnowledgeGraph};
/// let g = augment(&KnowledgeGraph::default(), true, true);
/// let twice = augment(&g, true, true);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    num_entities: usize,
    num_base_relations: usize,
    num_relations: usize,
    edges: Vec<Triple>,
    options: AugmentOptions,
    heads: Vec<usize>,
    edge_norm: Vec<f64>,
    edges_by_relation: Vec<Vec<usize>>,
    degree: Vec<usize>,
}

pub fn augment(graph: &KnowledgeGraph, add_inverse: bool, add_self_loop: bool) -> AugmentedGraph {
    AugmentedGraph::build(
        graph.num_entities(),
        graph.num_relations(),
        &graph.triples,
        AugmentOptions {
            add_inverse,
            add_self_loop,
        },
    )
}

impl AugmentedGraph {
    /// Builds the structure from `triples` over `num_entities` entities and
    /// `num_base_relations` relation types.
    pub fn build(
        num_entities: usize,
        num_base_relations: usize,
        triples: &[Triple],
        options: AugmentOptions,
    ) -> Self {
        let k = num_base_relations;
        let mut edges: Vec<Triple> = triples.to_vec();
        if options.add_inverse {
            edges.extend(triples.iter().map(|t| Triple::new(t.tail, t.relation + k, t.head)));
        }
        let num_relations = if options.add_inverse { 2 * k } else { k };

        let mut degree = vec![0usize; num_entities];
        let mut per_rel_degree = std::collections::HashMap::<(usize, usize), usize>::new();
        let mut edges_by_relation = vec![Vec::new(); num_relations];
        for (i, e) in edges.iter().enumerate() {
            assert!(e.head < num_entities && e.tail < num_entities && e.relation < num_relations);
            degree[e.head] += 1;
            *per_rel_degree.entry((e.head, e.relation)).or_default() += 1;
            edges_by_relation[e.relation].push(i);
        }
        let edge_norm = edges
            .iter()
            .map(|e| 1.0 / per_rel_degree[&(e.head, e.relation)] as f64)
            .collect();
        let heads = edges.iter().map(|e| e.head).collect();
        Self {
            num_entities,
            num_base_relations: k,
            num_relations,
            edges,
            options,
            heads,
            edge_norm,
            edges_by_relation,
            degree,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn options(&self) -> AugmentOptions {
        self.options
    }

    pub fn self_loop(&self) -> bool {
        self.options.add_self_loop
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Receiving node of every edge, in edge order.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    /// `1 / |N_h^r|` for every edge.
    pub fn edge_norm(&self) -> &[f64] {
        &self.edge_norm
    }

    pub fn edges_of_relation(&self, r: usize) -> &[usize] {
        &self.edges_by_relation[r]
    }

    /// `|N_h|`: number of incident edges over all relations.
    pub fn degree(&self, h: usize) -> usize {
        self.degree[h]
    }

    /// `N_h^r` as tail indices, in edge order.
    pub fn neighbors(&self, h: usize, r: usize) -> Vec<usize> {
        self.edges_by_relation[r]
            .iter()
            .map(|&i| self.edges[i])
            .filter(|e| e.head == h)
            .map(|e| e.tail)
            .collect()
    }
}
