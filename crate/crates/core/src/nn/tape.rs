//! Define-by-run computation tape with reverse-mode gradient accumulation.
//!
//! Values are computed eagerly as ops are recorded; `backward` walks the
//! recording in reverse and pushes gradients into the [`ParamSet`]. A fresh
//! tape is built per step, so ops only ever reference earlier nodes and
//! reverse order is a valid topological order.

use super::params::{ParamId, ParamSet};
use super::{log_sum_exp, NnError};
use ndarray::{s, Array2, Axis};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    /// a · b
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus a single-row bias broadcast over rows.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    /// Row i of the output is row `idx[i]` of the source; `None` rows are zero.
    GatherRows(NodeId, Vec<Option<usize>>),
    /// Row i of the output is row `picks[i].1` of node `picks[i].0`.
    SelectRows(Vec<(NodeId, usize)>),
    /// Sum over rows with a target of `-log softmax(row)[target]`; yields 1x1.
    CeSum(NodeId, Vec<Option<usize>>),
    Scale(NodeId, f64),
    SumAll(NodeId),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    /// Cached softmax probabilities for `CeSum`.
    aux: Option<Array2<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
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

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        self.push_aux(op, value, None)
    }

    fn push_aux(&mut self, op: Op, value: Array2<f64>, aux: Option<Array2<f64>>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, aux });
        id
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// Inserts a parameter as a leaf, memoized so every use of the parameter
    /// on this tape shares one node (and one gradient accumulator).
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(Op::Param(id), set.value(id).clone());
        self.param_nodes.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul inner dims {ac} vs {br}");
        let v = self.value(a).dot(self.value(b));
        debug_assert_eq!(v.dim(), (ar, bc));
        self.push(Op::MatMul(a, b), v)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (_, ac) = self.value(a).dim();
        let (_, bc) = self.value(b).dim();
        assert_eq!(ac, bc, "matmul_t inner dims {ac} vs {bc}");
        let v = self.value(a).dot(&self.value(b).t());
        self.push(Op::MatMulT(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (_, ac) = self.value(a).dim();
        let (rr, rc) = self.value(row).dim();
        assert_eq!((rr, rc), (1, ac), "bias row shape");
        let v = self.value(a) + self.value(row);
        self.push(Op::AddRow(a, row), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(|t| 1.0 / (1.0 + (-t).exp()));
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let (_, cols) = self.value(x).dim();
        assert!(start < end && end <= cols, "column slice out of range");
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(x, start, end), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, _) = self.value(a).dim();
        let (br, _) = self.value(b).dim();
        assert_eq!(ar, br, "concat row count");
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat");
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn gather_rows(&mut self, src: NodeId, indices: Vec<Option<usize>>) -> NodeId {
        let (rows, cols) = self.value(src).dim();
        let mut v = Array2::zeros((indices.len(), cols));
        for (i, idx) in indices.iter().enumerate() {
            if let Some(r) = idx {
                assert!(*r < rows, "gather row out of range");
                v.row_mut(i).assign(&self.value(src).row(*r));
            }
        }
        self.push(Op::GatherRows(src, indices), v)
    }

    /// Assembles a matrix whose row i is a chosen row of a chosen earlier
    /// node. All sources must share a column count.
    pub fn select_rows(&mut self, picks: Vec<(NodeId, usize)>) -> NodeId {
        assert!(!picks.is_empty(), "select_rows needs at least one pick");
        let cols = self.value(picks[0].0).dim().1;
        let mut v = Array2::zeros((picks.len(), cols));
        for (i, (node, row)) in picks.iter().enumerate() {
            let src = self.value(*node);
            assert_eq!(src.dim().1, cols, "select_rows column mismatch");
            v.row_mut(i).assign(&src.row(*row));
        }
        self.push(Op::SelectRows(picks), v)
    }

    /// Summed cross-entropy over rows with a target class; rows with `None`
    /// contribute nothing (and receive zero gradient). Returns a 1x1 node.
    pub fn ce_sum(&mut self, logits: NodeId, targets: Vec<Option<usize>>) -> NodeId {
        let (rows, classes) = self.value(logits).dim();
        assert_eq!(targets.len(), rows, "one target per row");
        let mut probs = Array2::zeros((rows, classes));
        let mut total = 0.0;
        for (i, target) in targets.iter().enumerate() {
            let Some(t) = target else { continue };
            assert!(*t < classes, "target class out of range");
            let row = self.value(logits).row(i);
            let row_slice = row.as_slice().expect("contiguous row");
            let lse = log_sum_exp(row_slice);
            total += lse - row_slice[*t];
            for (j, &x) in row_slice.iter().enumerate() {
                probs[(i, j)] = (x - lse).exp();
            }
        }
        let value = Array2::from_elem((1, 1), total);
        self.push_aux(Op::CeSum(logits, targets), value, Some(probs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x) * c;
        self.push(Op::Scale(x, c), v)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(Op::SumAll(x), v)
    }

    /// Scalar convenience for tests and small probes.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "not a scalar node");
        v[(0, 0)]
    }

    /// Reverse-mode sweep from `output` (which must be 1x1). Parameter
    /// gradients are accumulated into `params`; existing accumulator contents
    /// are added to, so callers zero them between steps (`sgd_step` does).
    pub fn backward(&self, output: NodeId, params: &mut ParamSet) -> Result<(), NnError> {
        if self.value(output).dim() != (1, 1) {
            return Err(NnError::NotScalar);
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(pid) => params.accumulate_grad(*pid, &g),
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value);
                    let db = g.t().dot(&self.nodes[a.0].value);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, drow);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[i].value;
                    let dx = &g * &(y * &(1.0 - y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    let dx = &g * &(1.0 - y * y);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols(x, start, end) => {
                    let dim = self.nodes[x.0].value.raw_dim();
                    let mut dx = Array2::zeros(dim);
                    dx.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let a_cols = self.nodes[a.0].value.dim().1;
                    let da = g.slice(s![.., ..a_cols]).to_owned();
                    let db = g.slice(s![.., a_cols..]).to_owned();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::GatherRows(src, indices) => {
                    let mut dsrc = Array2::zeros(self.nodes[src.0].value.raw_dim());
                    for (out_row, idx) in indices.iter().enumerate() {
                        if let Some(r) = idx {
                            let mut target = dsrc.row_mut(*r);
                            target += &g.row(out_row);
                        }
                    }
                    accumulate(&mut grads, *src, dsrc);
                }
                Op::SelectRows(picks) => {
                    for (out_row, (node, row)) in picks.iter().enumerate() {
                        let dim = self.nodes[node.0].value.raw_dim();
                        let slot = grads[node.0].get_or_insert_with(|| Array2::zeros(dim));
                        let mut target = slot.row_mut(*row);
                        target += &g.row(out_row);
                    }
                }
                Op::CeSum(logits, targets) => {
                    let scale = g[(0, 0)];
                    let probs = self.nodes[i].aux.as_ref().expect("ce cache");
                    let mut dlogits = Array2::zeros(probs.raw_dim());
                    for (row, target) in targets.iter().enumerate() {
                        let Some(t) = target else { continue };
                        let mut out = dlogits.row_mut(row);
                        out.assign(&probs.row(row));
                        out[*t] -= 1.0;
                        out *= scale;
                    }
                    accumulate(&mut grads, *logits, dlogits);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, &g * *c);
                }
                Op::SumAll(x) => {
                    let dim = self.nodes[x.0].value.raw_dim();
                    accumulate(&mut grads, *x, Array2::from_elem(dim, g[(0, 0)]));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}
