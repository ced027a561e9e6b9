//! Reverse-mode gradient tape.
//!
//! The tape records a forward computation as a flat list of nodes in
//! evaluation order. Each node stores its value and the primitive that
//! produced it; [`Tape::backward`] walks the list in reverse and
//! accumulates adjoints into the parents of every node.
//!
//! Only the primitives the model needs are supported: matrix multiply,
//! elementwise add/multiply, row scaling by a column, concatenation,
//! reshape, row gather/scatter by index, softmax over index groups,
//! sigmoid, (leaky) ReLU, sums, mean and a fused logistic loss.
//!
//! ```
//! use relatt_core::numeric::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", Tensor::column(vec![3.0]));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get("w").unwrap().data(), &[6.0]);
//! ```

use std::collections::BTreeMap;

use super::{NumericError, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulColumn(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    GroupSoftmax(Var, Vec<usize>),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulColumn(..) => "mul_column",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::GroupSoftmax(..) => "group_softmax",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Parameter name → tape variable, produced when a [`ParamStore`] is
/// registered on a tape.
#[derive(Debug, Clone, Default)]
pub struct Bindings(BTreeMap<String, Var>);

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var, NumericError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| NumericError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.0.get(name).copied()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln σ(s) + (1-y) ln(1-σ(s))]`.
pub(crate) fn logistic_loss(score: f64, label: f64) -> f64 {
    score.max(0.0) - score * label + (-score.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a named trainable tensor. Registered parameters always
    /// receive a gradient from [`Tape::backward`], zero when untouched.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.into(), v));
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn register(&mut self, params: &ParamStore) -> Bindings {
        Bindings(
            params
                .iter()
                .map(|(name, t)| (name.to_string(), self.param(name, t.clone())))
                .collect(),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let value = self.value(a).mul(self.value(b))?;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericError> {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Multiplies row `i` of `a` (`n × d`) by `column[i]` (`n × 1`).
    pub fn mul_column(&mut self, a: Var, column: Var) -> Result<Var, NumericError> {
        let (x, c) = (self.value(a), self.value(column));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(NumericError::Contract(format!(
                "mul_column: {:?} by {:?}",
                x.shape(),
                c.shape()
            )));
        }
        let d = x.cols();
        let value = Tensor::from_fn(x.rows(), d, |i, j| x.get(i, j) * c.get(i, 0));
        self.push(value, Op::MulColumn(a, column))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| NumericError::Contract("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NumericError::Contract("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| NumericError::Contract("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(NumericError::Contract("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(data.len() / cols.max(1), cols, data)?;
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumericError> {
        let value = self.value(a).reshape(rows, cols)?;
        self.push(value, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NumericError> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
            return Err(NumericError::Contract(format!(
                "gather_rows: index {bad} out of {} rows",
                x.rows()
            )));
        }
        let d = x.cols();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::new(index.len(), d, data)?;
        self.push(value, Op::GatherRows(a, index.to_vec()))
    }

    /// Sums row `i` of `a` into row `index[i]` of an `out_rows × d` result.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: &[usize],
        out_rows: usize,
    ) -> Result<Var, NumericError> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(NumericError::Contract(format!(
                "scatter_add_rows: {} indices for {} rows",
                index.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(NumericError::Contract(format!(
                "scatter_add_rows: index {bad} out of {out_rows} rows"
            )));
        }
        let mut value = Tensor::zeros(out_rows, x.cols());
        for (r, &dst) in index.iter().enumerate() {
            for (o, v) in value.row_mut(dst).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        self.push(value, Op::ScatterAddRows(a, index.to_vec()))
    }

    /// Softmax of an `n × 1` column within groups: rows sharing a group id
    /// are normalized together. Each group is shifted by its maximum.
    pub fn group_softmax(&mut self, logits: Var, groups: &[usize]) -> Result<Var, NumericError> {
        let x = self.value(logits);
        if x.cols() != 1 || x.rows() != groups.len() {
            return Err(NumericError::Contract(format!(
                "group_softmax: logits {:?} with {} group ids",
                x.shape(),
                groups.len()
            )));
        }
        let value = Tensor::column(group_softmax_values(x.data(), groups));
        self.push(value, Op::GroupSoftmax(logits, groups.to_vec()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NumericError> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Row sums: `n × d` → `n × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let value = Tensor::column((0..x.rows()).map(|r| x.row(r).iter().sum()).collect());
        self.push(value, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(NumericError::Contract("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Mean logistic loss of `n × 1` scores against 0/1 labels.
    pub fn bce_with_logits(&mut self, scores: Var, labels: &[f64]) -> Result<Var, NumericError> {
        let s = self.value(scores);
        if s.cols() != 1 || s.rows() != labels.len() {
            return Err(NumericError::Contract(format!(
                "bce_with_logits: scores {:?} with {} labels",
                s.shape(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(NumericError::Contract("bce_with_logits: empty batch".into()));
        }
        let total: f64 = s
            .data()
            .iter()
            .zip(labels)
            .map(|(&g, &y)| logistic_loss(g, y))
            .sum();
        let value = Tensor::scalar(total / labels.len() as f64);
        self.push(value, Op::BceWithLogits(scores, labels.to_vec()))
    }

    /// Reverse pass from a scalar output. Returns one gradient per
    /// registered parameter, zero-filled when the parameter does not
    /// influence `output`.
    pub fn backward(&self, output: Var) -> Result<ParamStore, NumericError> {
        if self.value(output).shape() != [1, 1] {
            return Err(NumericError::Contract(format!(
                "backward requires a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (parent, contribution) in self.local_grads(node, &g)? {
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            // Leaves keep their adjoint for collection below.
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
            }
        }

        let mut grads = ParamStore::new();
        for (name, v) in &self.params {
            let shape = self.value(*v).shape();
            let g = adj
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]));
            if !g.is_finite() {
                return Err(NumericError::NonFinite { op: "backward" });
            }
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>, NumericError> {
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                vec![
                    (*a, g.matmul(&bv.transpose())?),
                    (*b, av.transpose().matmul(g)?),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![
                (*a, g.mul(self.value(*b))?),
                (*b, g.mul(self.value(*a))?),
            ],
            Op::Scale(a, f) => vec![(*a, g.scale(*f))],
            Op::MulColumn(a, c) => {
                let x = self.value(*a);
                let col = self.value(*c);
                let da = Tensor::from_fn(x.rows(), x.cols(), |i, j| g.get(i, j) * col.get(i, 0));
                let dc = Tensor::column(
                    (0..x.rows())
                        .map(|i| x.row(i).iter().zip(g.row(i)).map(|(p, q)| p * q).sum())
                        .collect(),
                );
                vec![(*a, da), (*c, dc)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = Tensor::from_fn(g.rows(), w, |i, j| g.get(i, offset + j));
                    res.push((p, gp));
                    offset += w;
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let h = self.value(p).rows();
                    let gp = Tensor::from_fn(h, g.cols(), |i, j| g.get(offset + i, j));
                    res.push((p, gp));
                    offset += h;
                }
                res
            }
            Op::Reshape(a) => {
                let [r, c] = self.value(*a).shape();
                vec![(*a, g.reshape(r, c)?)]
            }
            Op::GatherRows(a, index) => {
                let [r, c] = self.value(*a).shape();
                let mut da = Tensor::zeros(r, c);
                for (k, &src) in index.iter().enumerate() {
                    for (o, v) in da.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                vec![(*a, da)]
            }
            Op::ScatterAddRows(a, index) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(index.len() * c);
                for &dst in index {
                    data.extend_from_slice(g.row(dst));
                }
                vec![(*a, Tensor::new(index.len(), c, data)?)]
            }
            Op::GroupSoftmax(a, groups) => {
                let n_groups = groups.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_groups];
                for (i, &grp) in groups.iter().enumerate() {
                    dot[grp] += out.data()[i] * g.data()[i];
                }
                let da = Tensor::column(
                    groups
                        .iter()
                        .enumerate()
                        .map(|(i, &grp)| out.data()[i] * (g.data()[i] - dot[grp]))
                        .collect(),
                );
                vec![(*a, da)]
            }
            Op::Sigmoid(a) => vec![(*a, out.map(|s| s * (1.0 - s)).mul(g)?)],
            Op::Relu(a) => {
                let x = self.value(*a);
                let mask = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![(*a, mask.mul(g)?)]
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let mask = x.map(|v| if v > 0.0 { 1.0 } else { *slope });
                vec![(*a, mask.mul(g)?)]
            }
            Op::SumCols(a) => {
                let [r, c] = self.value(*a).shape();
                vec![(*a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)))]
            }
            Op::Sum(a) => {
                let [r, c] = self.value(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.data()[0]))]
            }
            Op::Mean(a) => {
                let [r, c] = self.value(*a).shape();
                vec![(*a, Tensor::filled(r, c, g.data()[0] / (r * c) as f64))]
            }
            Op::BceWithLogits(a, labels) => {
                let s = self.value(*a);
                let n = labels.len() as f64;
                let scale = g.data()[0] / n;
                let da = Tensor::column(
                    s.data()
                        .iter()
                        .zip(labels)
                        .map(|(&x, &y)| (sigmoid(x) - y) * scale)
                        .collect(),
                );
                vec![(*a, da)]
            }
        })
    }
}

pub(crate) fn group_softmax_values(logits: &[f64], groups: &[usize]) -> Vec<f64> {
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_groups];
    for (&x, &grp) in logits.iter().zip(groups) {
        max[grp] = max[grp].max(x);
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(groups)
        .map(|(&x, &grp)| (x - max[grp]).exp())
        .collect();
    let mut denom = vec![0.0; n_groups];
    for (&e, &grp) in exps.iter().zip(groups) {
        denom[grp] += e;
    }
    exps.iter()
        .zip(groups)
        .map(|(&e, &grp)| e / denom[grp])
        .collect()
}

/// Runs `program` on a fresh tape with every entry of `params` registered,
/// and returns the scalar it produces together with its gradients.
pub fn evaluate_with_gradients<E, F>(params: &ParamStore, program: F) -> Result<(f64, ParamStore), E>
where
    E: From<NumericError>,
    F: FnOnce(&mut Tape, &Bindings) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let bindings = tape.register(params);
    let out = program(&mut tape, &bindings)?;
    let loss = tape.value(out).item().ok_or_else(|| {
        NumericError::Contract(format!(
            "program output must be scalar, got {:?}",
            tape.value(out).shape()
        ))
    })?;
    let grads = tape.backward(out)?;
    Ok((loss, grads))
}
