//! Eager tape for reverse-mode differentiation.
//!
//! Ops evaluate as they are pushed; `backward` walks the tape in reverse and
//! accumulates gradients into the parameter slots. The op set is the minimum
//! needed for gated recurrent nets, additive location-aware attention and the
//! transducer joint.

use super::params::{ParamGrads, ParamSet};
use super::tensor::{log_sum_exp, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Node {
    Constant,
    Param(usize),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    /// a: m x n, b: 1 x n broadcast over rows of a.
    AddRow(NodeId, NodeId),
    /// a: m x n, b: 1 x n multiplied into every row of a.
    MulRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Softmax over an m x 1 column.
    SoftmaxCol(NodeId),
    /// Log-softmax applied independently to each row.
    LogSoftmaxRow(NodeId),
    /// signal: m x 1, kernel: k x w; same-length correlation -> m x k.
    Conv1dSame(NodeId, NodeId),
    /// Row `row` of parameter `param` as 1 x n.
    EmbedRow { param: usize, row: usize },
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    RowSlice(NodeId, usize),
    StackRows(Vec<NodeId>),
    /// -x[idx] of a 1 x n row, as 1 x 1.
    NegPick(NodeId, usize),
    SumList(Vec<NodeId>),
    SumAll(NodeId),
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    vals: Vec<Tensor>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
            vals: Vec::with_capacity(1024),
            param_nodes: vec![None; params.len()],
        }
    }

    fn push(&mut self, node: Node, val: Tensor) -> NodeId {
        self.nodes.push(node);
        self.vals.push(val);
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.vals[id.0]
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Node::Constant, t)
    }

    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        let t = self.params.tensor(idx).clone();
        let id = self.push(Node::Param(idx), t);
        self.param_nodes[idx] = Some(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.vals[a.0].matmul(&self.vals[b.0]);
        self.push(Node::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].transpose();
        self.push(Node::Transpose(a), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        debug_assert_eq!((x.rows, x.cols), (y.rows, y.cols));
        let mut v = x.clone();
        v.add_assign(y);
        self.push(Node::Add(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        debug_assert_eq!(y.rows, 1);
        debug_assert_eq!(x.cols, y.cols);
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, &byv) in v.row_mut(r).iter_mut().zip(y.data.iter()) {
                *o += byv;
            }
        }
        self.push(Node::AddRow(a, b), v)
    }

    pub fn mul_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        debug_assert_eq!(y.rows, 1);
        debug_assert_eq!(x.cols, y.cols);
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, &byv) in v.row_mut(r).iter_mut().zip(y.data.iter()) {
                *o *= byv;
            }
        }
        self.push(Node::MulRow(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        debug_assert_eq!(x.len(), y.len());
        let data = x
            .data
            .iter()
            .zip(y.data.iter())
            .map(|(p, q)| p * q)
            .collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(Node::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.vals[a.0].map(|x| x * k);
        self.push(Node::Scale(a, k), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].map(f64::tanh);
        self.push(Node::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Node::Sigmoid(a), v)
    }

    pub fn softmax_col(&mut self, a: NodeId) -> NodeId {
        let x = &self.vals[a.0];
        debug_assert_eq!(x.cols, 1);
        let m = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        let v = Tensor::col_vec(exps.into_iter().map(|e| e / s).collect());
        self.push(Node::SoftmaxCol(a), v)
    }

    pub fn log_softmax_row(&mut self, a: NodeId) -> NodeId {
        let x = &self.vals[a.0];
        let mut v = x.clone();
        for r in 0..v.rows {
            let lse = log_sum_exp(v.row(r));
            for e in v.row_mut(r) {
                *e -= lse;
            }
        }
        self.push(Node::LogSoftmaxRow(a), v)
    }

    pub fn conv1d_same(&mut self, signal: NodeId, kernel: NodeId) -> NodeId {
        let (sig, ker) = (&self.vals[signal.0], &self.vals[kernel.0]);
        debug_assert_eq!(sig.cols, 1);
        let (m, k, w) = (sig.rows, ker.rows, ker.cols);
        let center = w / 2;
        let mut out = Tensor::zeros(m, k);
        for t in 0..m {
            for f in 0..k {
                let krow = ker.row(f);
                let mut acc = 0.0;
                for (j, &kv) in krow.iter().enumerate() {
                    let s = t as isize + j as isize - center as isize;
                    if s >= 0 && (s as usize) < m {
                        acc += kv * sig.data[s as usize];
                    }
                }
                *out.at_mut(t, f) = acc;
            }
        }
        self.push(Node::Conv1dSame(signal, kernel), out)
    }

    pub fn embed_row(&mut self, param: usize, row: usize) -> NodeId {
        let t = self.params.tensor(param);
        let v = Tensor::row_vec(t.row(row).to_vec());
        self.push(Node::EmbedRow { param, row }, v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        debug_assert_eq!(x.rows, y.rows);
        let mut v = Tensor::zeros(x.rows, x.cols + y.cols);
        for r in 0..x.rows {
            let dst = v.row_mut(r);
            dst[..x.cols].copy_from_slice(x.row(r));
            dst[x.cols..].copy_from_slice(y.row(r));
        }
        self.push(Node::ConcatCols(a, b), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = &self.vals[a.0];
        let mut v = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(Node::SliceCols(a, start, len), v)
    }

    pub fn row_slice(&mut self, a: NodeId, row: usize) -> NodeId {
        let v = Tensor::row_vec(self.vals[a.0].row(row).to_vec());
        self.push(Node::RowSlice(a, row), v)
    }

    pub fn stack_rows(&mut self, rows: Vec<NodeId>) -> NodeId {
        debug_assert!(!rows.is_empty());
        let cols = self.vals[rows[0].0].cols;
        let mut v = Tensor::zeros(rows.len(), cols);
        for (r, id) in rows.iter().enumerate() {
            debug_assert_eq!(self.vals[id.0].rows, 1);
            v.row_mut(r).copy_from_slice(self.vals[id.0].row(0));
        }
        self.push(Node::StackRows(rows), v)
    }

    pub fn neg_pick(&mut self, a: NodeId, idx: usize) -> NodeId {
        let v = Tensor::from_vec(1, 1, vec![-self.vals[a.0].data[idx]]);
        self.push(Node::NegPick(a, idx), v)
    }

    pub fn sum_list(&mut self, items: Vec<NodeId>) -> NodeId {
        let s: f64 = items.iter().map(|id| self.vals[id.0].scalar()).sum();
        self.push(Node::SumList(items), Tensor::from_vec(1, 1, vec![s]))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.vals[a.0].data.iter().sum();
        self.push(Node::SumAll(a), Tensor::from_vec(1, 1, vec![s]))
    }

    /// Backward from a scalar loss node with seed gradient 1.
    pub fn backward(&self, loss: NodeId) -> ParamGrads {
        self.backward_seeded(&[(loss, Tensor::from_vec(1, 1, vec![1.0]))])
    }

    /// Backward from several output nodes with caller-supplied upstream gradients.
    pub fn backward_seeded(&self, seeds: &[(NodeId, Tensor)]) -> ParamGrads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            let v = &self.vals[id.0];
            debug_assert_eq!((v.rows, v.cols), (seed.rows, seed.cols));
            match &mut grads[id.0] {
                Some(g) => g.add_assign(seed),
                slot => *slot = Some(seed.clone()),
            }
        }
        let mut pgrads = ParamGrads::zeros(self.params.len());

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i] {
                Node::Constant => {}
                Node::Param(p) => {
                    accum_param(&mut pgrads, *p, self.params, |dst| dst.add_assign(&g));
                }
                Node::MatMul(a, b) => {
                    let da = g.matmul_nt(&self.vals[b.0]);
                    let db = self.vals[a.0].matmul_tn(&g);
                    accum(&mut grads, a.0, da);
                    accum(&mut grads, b.0, db);
                }
                Node::Transpose(a) => {
                    accum(&mut grads, a.0, g.transpose());
                }
                Node::Add(a, b) => {
                    accum(&mut grads, a.0, g.clone());
                    accum(&mut grads, b.0, g);
                }
                Node::AddRow(a, b) => {
                    let mut db = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &x) in db.data.iter_mut().zip(g.row(r).iter()) {
                            *o += x;
                        }
                    }
                    accum(&mut grads, a.0, g);
                    accum(&mut grads, b.0, db);
                }
                Node::Mul(a, b) => {
                    let da = hadamard(&g, &self.vals[b.0]);
                    let db = hadamard(&g, &self.vals[a.0]);
                    accum(&mut grads, a.0, da);
                    accum(&mut grads, b.0, db);
                }
                Node::MulRow(a, b) => {
                    let xb = &self.vals[b.0];
                    let xa = &self.vals[a.0];
                    let mut da = g.clone();
                    for r in 0..da.rows {
                        for (o, &byv) in da.row_mut(r).iter_mut().zip(xb.data.iter()) {
                            *o *= byv;
                        }
                    }
                    let mut db = Tensor::zeros(1, xb.cols);
                    for r in 0..g.rows {
                        let arow = xa.row(r);
                        let grow = g.row(r);
                        for c in 0..xb.cols {
                            db.data[c] += grow[c] * arow[c];
                        }
                    }
                    accum(&mut grads, a.0, da);
                    accum(&mut grads, b.0, db);
                }
                Node::Scale(a, k) => {
                    accum(&mut grads, a.0, g.map(|x| x * k));
                }
                Node::Tanh(a) => {
                    let y = &self.vals[i];
                    let da = zip3(&g, y, |gv, yv| gv * (1.0 - yv * yv));
                    accum(&mut grads, a.0, da);
                }
                Node::Sigmoid(a) => {
                    let y = &self.vals[i];
                    let da = zip3(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    accum(&mut grads, a.0, da);
                }
                Node::SoftmaxCol(a) => {
                    let y = &self.vals[i];
                    let dot: f64 = y.data.iter().zip(g.data.iter()).map(|(p, q)| p * q).sum();
                    let da = zip3(&g, y, |gv, yv| yv * (gv - dot));
                    accum(&mut grads, a.0, da);
                }
                Node::LogSoftmaxRow(a) => {
                    let y = &self.vals[i];
                    let mut da = g.clone();
                    for r in 0..da.rows {
                        let gsum: f64 = g.row(r).iter().sum();
                        let yrow = y.row(r);
                        for (c, e) in da.row_mut(r).iter_mut().enumerate() {
                            *e -= yrow[c].exp() * gsum;
                        }
                    }
                    accum(&mut grads, a.0, da);
                }
                Node::Conv1dSame(signal, kernel) => {
                    let sig = &self.vals[signal.0];
                    let ker = &self.vals[kernel.0];
                    let (m, k, w) = (sig.rows, ker.rows, ker.cols);
                    let center = w / 2;
                    let mut dsig = Tensor::zeros(m, 1);
                    let mut dker = Tensor::zeros(k, w);
                    for t in 0..m {
                        for f in 0..k {
                            let go = g.at(t, f);
                            if go == 0.0 {
                                continue;
                            }
                            for j in 0..w {
                                let s = t as isize + j as isize - center as isize;
                                if s >= 0 && (s as usize) < m {
                                    dsig.data[s as usize] += go * ker.at(f, j);
                                    *dker.at_mut(f, j) += go * sig.data[s as usize];
                                }
                            }
                        }
                    }
                    accum(&mut grads, signal.0, dsig);
                    accum(&mut grads, kernel.0, dker);
                }
                Node::EmbedRow { param, row } => {
                    let row = *row;
                    accum_param(&mut pgrads, *param, self.params, |dst| {
                        for (o, &x) in dst.row_mut(row).iter_mut().zip(g.data.iter()) {
                            *o += x;
                        }
                    });
                }
                Node::ConcatCols(a, b) => {
                    let ac = self.vals[a.0].cols;
                    let mut da = Tensor::zeros(g.rows, ac);
                    let mut db = Tensor::zeros(g.rows, g.cols - ac);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                    }
                    accum(&mut grads, a.0, da);
                    accum(&mut grads, b.0, db);
                }
                Node::SliceCols(a, start, len) => {
                    let x = &self.vals[a.0];
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        da.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, a.0, da);
                }
                Node::RowSlice(a, row) => {
                    let x = &self.vals[a.0];
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    da.row_mut(*row).copy_from_slice(g.row(0));
                    accum(&mut grads, a.0, da);
                }
                Node::StackRows(rows) => {
                    for (r, id) in rows.iter().enumerate() {
                        accum(&mut grads, id.0, Tensor::row_vec(g.row(r).to_vec()));
                    }
                }
                Node::NegPick(a, idx) => {
                    let x = &self.vals[a.0];
                    let mut da = Tensor::zeros(x.rows, x.cols);
                    da.data[*idx] = -g.scalar();
                    accum(&mut grads, a.0, da);
                }
                Node::SumList(items) => {
                    let gs = g.scalar();
                    for id in items {
                        accum(&mut grads, id.0, Tensor::from_vec(1, 1, vec![gs]));
                    }
                }
                Node::SumAll(a) => {
                    let x = &self.vals[a.0];
                    let gs = g.scalar();
                    accum(
                        &mut grads,
                        a.0,
                        Tensor::from_vec(x.rows, x.cols, vec![gs; x.len()]),
                    );
                }
            }
        }
        pgrads
    }
}

fn accum(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn accum_param(
    pgrads: &mut ParamGrads,
    idx: usize,
    params: &ParamSet,
    apply: impl FnOnce(&mut Tensor),
) {
    let slot = &mut pgrads.by_param[idx];
    if slot.is_none() {
        let t = params.tensor(idx);
        *slot = Some(Tensor::zeros(t.rows, t.cols));
    }
    apply(slot.as_mut().unwrap());
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(p, q)| p * q)
        .collect();
    Tensor::from_vec(a.rows, a.cols, data)
}

fn zip3(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&p, &q)| f(p, q))
        .collect();
    Tensor::from_vec(a.rows, a.cols, data)
}
