//! Independent reference evaluators used by the integration tests.
//!
//! Everything here is written with explicit loops over edges and matrix
//! entries and shares no code path with the library's tape-based model.

#![allow(dead_code)]

use rand::Rng;
use relatt_core::graph::{AugmentOptions, Triple};
use relatt_core::model::{AttnNonlinearity, AttnSchedule, ModelConfig};
use relatt_core::numeric::{ParamStore, Tensor};

/// Random duplicate-free triples over `n` entities and `k` relations.
pub fn random_triples<R: Rng>(rng: &mut R, n: usize, k: usize, count: usize) -> Vec<Triple> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let max = n * n * k;
    while out.len() < count.min(max) {
        let t = Triple::new(rng.gen_range(0..n), rng.gen_range(0..k), rng.gen_range(0..n));
        if seen.insert(t) {
            out.push(t);
        }
    }
    out
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Replaces every parameter value with uniform noise in [-1, 1].
pub fn randomize<R: Rng>(rng: &mut R, params: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        out.insert(name, random_tensor(rng, t.rows(), t.cols()));
    }
    out
}

/// Edges as the library orders them: base triples, then inverses.
pub fn edge_list(triples: &[Triple], k: usize, opts: AugmentOptions) -> (Vec<Triple>, usize) {
    let mut edges = triples.to_vec();
    if opts.add_inverse {
        for t in triples {
            edges.push(Triple::new(t.tail, t.relation + k, t.head));
        }
        (edges, 2 * k)
    } else {
        (edges, k)
    }
}

pub fn naive_basis(bases: &[Tensor], coeffs: &Tensor) -> Vec<Tensor> {
    let (d_in, d_out) = (bases[0].rows(), bases[0].cols());
    (0..coeffs.rows())
        .map(|r| {
            let mut w = Tensor::zeros(d_in, d_out);
            for i in 0..d_in {
                for j in 0..d_out {
                    let mut s = 0.0;
                    for (b, v) in bases.iter().enumerate() {
                        s += coeffs.get(r, b) * v.get(i, j);
                    }
                    w.set(i, j, s);
                }
            }
            w
        })
        .collect()
}

fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum())
        .collect()
}

/// `aᵀ[W_node h_h ‖ W_rel m_r ‖ W_node h_t]` edge by edge.
pub fn dense_logits(
    h: &Tensor,
    rel_feats: &Tensor,
    edges: &[Triple],
    node_w: &Tensor,
    rel_w: &Tensor,
    a: &Tensor,
) -> Vec<f64> {
    let d = node_w.cols();
    edges
        .iter()
        .map(|e| {
            let wh = vec_mat(h.row(e.head), node_w);
            let wm = vec_mat(rel_feats.row(e.relation), rel_w);
            let wt = vec_mat(h.row(e.tail), node_w);
            let mut s = 0.0;
            for k in 0..d {
                s += a.data()[k] * wh[k] + a.data()[d + k] * wm[k] + a.data()[2 * d + k] * wt[k];
            }
            s
        })
        .collect()
}

/// Plain softmax over each head's incident edges (no max shift).
pub fn dense_softmax(logits: &[f64], edges: &[Triple]) -> Vec<f64> {
    edges
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let denom: f64 = edges
                .iter()
                .zip(logits)
                .filter(|(f, _)| f.head == e.head)
                .map(|(_, l)| l.exp())
                .sum();
            logits[i].exp() / denom
        })
        .collect()
}

/// One layer evaluated node by node, relation by relation, neighbor by
/// neighbor. `alpha = None` means α ≡ 1.
pub fn dense_layer(
    h: &Tensor,
    n: usize,
    edges: &[Triple],
    num_rel: usize,
    alpha: Option<&[f64]>,
    rel_mats: &[Tensor],
    w0: Option<&Tensor>,
    relu: bool,
) -> Tensor {
    let d_out = rel_mats[0].cols();
    let mut out = Tensor::zeros(n, d_out);
    for node in 0..n {
        let mut acc = vec![0.0; d_out];
        for r in 0..num_rel {
            let nbrs: Vec<usize> = (0..edges.len())
                .filter(|&i| edges[i].head == node && edges[i].relation == r)
                .collect();
            for &i in &nbrs {
                let a = alpha.map_or(1.0, |al| al[i]);
                let msg = vec_mat(h.row(edges[i].tail), &rel_mats[r]);
                for j in 0..d_out {
                    acc[j] += a * (1.0 / nbrs.len() as f64) * msg[j];
                }
            }
        }
        if let Some(w0) = w0 {
            let own = vec_mat(h.row(node), w0);
            for j in 0..d_out {
                acc[j] += own[j];
            }
        }
        for j in 0..d_out {
            out.set(node, j, if relu { acc[j].max(0.0) } else { acc[j] });
        }
    }
    out
}

/// Full forward pass without dropout.
pub fn dense_forward(
    triples: &[Triple],
    n: usize,
    k: usize,
    input: &Tensor,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> (Tensor, Vec<Vec<f64>>) {
    let (edges, num_rel) = edge_list(triples, k, cfg.augment);
    let feature_dim = input.cols();
    let p = |name: &str| params.get(name).unwrap_or_else(|| panic!("missing {name}")).clone();
    let mut h = input.clone();
    let mut alphas = Vec::new();
    let mut alpha: Option<Vec<f64>> = None;
    for l in 0..cfg.layers {
        let scores = cfg.attention && (cfg.attn_schedule == AttnSchedule::PerLayer || l == 0);
        if scores && !edges.is_empty() {
            let node_w = p(&format!("layer{l}.attn_W"));
            let rel_w = if h.cols() != feature_dim {
                p(&format!("layer{l}.rel_W"))
            } else {
                node_w.clone()
            };
            let a_name = if cfg.shared_attn_vector { "attn_a".to_string() } else { format!("layer{l}.attn_a") };
            let mut e = dense_logits(&h, &p("rel_feats"), &edges, &node_w, &rel_w, &p(&a_name));
            if cfg.attn_nonlinearity == AttnNonlinearity::LeakyRelu {
                e = e.into_iter().map(|x| if x > 0.0 { x } else { 0.2 * x }).collect();
            }
            let al = dense_softmax(&e, &edges);
            alphas.push(al.clone());
            alpha = Some(al);
        }
        let bases: Vec<Tensor> = (0..cfg.bases).map(|b| p(&format!("layer{l}.basis{b}"))).collect();
        let mats = naive_basis(&bases, &p(&format!("layer{l}.coeffs")));
        let w0 = cfg.augment.add_self_loop.then(|| p(&format!("layer{l}.self_W0")));
        let last = l + 1 == cfg.layers;
        let al = if cfg.attention { alpha.as_deref() } else { None };
        h = dense_layer(&h, n, &edges, num_rel, al, &mats, w0.as_ref(), !last);
    }
    (h, alphas)
}

/// Mean logistic loss via the textbook formula (fine for moderate scores).
pub fn dense_bce(scores: &[f64], labels: &[u8]) -> f64 {
    let s: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&g, &y)| {
            let p = 1.0 / (1.0 + (-g).exp());
            if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
        })
        .sum();
    s / scores.len() as f64
}

/// Rank by sorting: every unfiltered candidate is listed with its score,
/// the list is sorted best first with the test triple placed after all
/// candidates of equal score, and the rank is its 1-based position.
pub fn sorted_rank(
    test: &Triple,
    emb: &Tensor,
    diag: &Tensor,
    known: Option<&std::collections::HashSet<Triple>>,
    corrupt_head: bool,
) -> usize {
    let score = |t: &Triple| -> f64 {
        let mut s = 0.0;
        for i in 0..emb.cols() {
            s += emb.get(t.head, i) * diag.get(t.relation, i) * emb.get(t.tail, i);
        }
        s
    };
    let mut list: Vec<(f64, bool)> = Vec::new();
    for x in 0..emb.rows() {
        let c = if corrupt_head {
            Triple::new(x, test.relation, test.tail)
        } else {
            Triple::new(test.head, test.relation, x)
        };
        let is_test = c == *test;
        if !is_test && known.is_some_and(|k| k.contains(&c)) {
            continue;
        }
        list.push((score(&c), is_test));
    }
    list.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    list.iter().position(|&(_, t)| t).unwrap() + 1
}
