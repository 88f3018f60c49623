//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape through [`Tape::param`]; calling [`Tape::backward`] on a scalar
//! node returns the gradient of every parameter that took part.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::params::{Grads, ParamId, ParamStore};

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    /// ELU with alpha = 1.
    Elu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    libm::expm1(x)
                }
            }
            Activation::Sigmoid => math::sigmoid(x),
            Activation::Tanh => math::tanh(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    /// Parses the names produced by [`Activation::name`]; leaky ReLU uses slope 0.2.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu(0.2),
            "elu" => Activation::Elu,
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    RowSum(Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Gather(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    EdgeAggregate { weights: Var, messages: Var, src: Rc<[usize]>, dst: Rc<[usize]> },
    Sum(Var),
    Bce { probs: Var, targets: Matrix, eps: f64 },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf(None))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf(Some(id)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows(), x.cols(), data);
        self.push(v, Op::Mul(a, b))
    }

    /// Sums each row into an `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::col_vector((0..x.rows()).map(|r| x.row(r).iter().sum()).collect());
        self.push(v, Op::RowSum(a))
    }

    /// Adds the `1 x cols` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let row = self.value(r);
        assert_eq!(row.rows(), 1, "add_row expects a row vector");
        assert_eq!(row.cols(), self.value(a).cols(), "add_row width mismatch");
        let mut v = self.value(a).clone();
        let row = self.value(r).as_slice().to_vec();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(&row) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, r))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Act(a, act))
    }

    pub fn gather(&mut self, a: Var, rows: Rc<[usize]>) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros(rows.len(), src.cols());
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).copy_from_slice(src.row(r));
        }
        self.push(v, Op::Gather(a, rows))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            crate::linalg::softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::RowSoftmax(a))
    }

    /// Softmax of a column vector within groups: entries sharing `segment[e]`
    /// are normalised together. Used for per-node attention over edge lists.
    pub fn segment_softmax(&mut self, a: Var, segment: Rc<[usize]>) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols(), 1, "segment_softmax expects a column vector");
        assert_eq!(x.rows(), segment.len());
        let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in segment.iter().enumerate() {
            max[s] = max[s].max(x.as_slice()[e]);
        }
        let mut out: Vec<f64> =
            segment.iter().enumerate().map(|(e, &s)| math::exp(x.as_slice()[e] - max[s])).collect();
        let mut total = vec![0.0; n_seg];
        for (e, &s) in segment.iter().enumerate() {
            total[s] += out[e];
        }
        for (e, &s) in segment.iter().enumerate() {
            out[e] /= total[s];
        }
        self.push(Matrix::col_vector(out), Op::SegmentSoftmax(a, segment))
    }

    /// `out[dst[e]] += weights[e] * messages[src[e]]` over all edges `e`.
    pub fn edge_aggregate(
        &mut self,
        weights: Var,
        messages: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
        n_out: usize,
    ) -> Var {
        let w = self.value(weights);
        let m = self.value(messages);
        assert_eq!(w.shape(), (src.len(), 1));
        assert_eq!(src.len(), dst.len());
        let mut v = Matrix::zeros(n_out, m.cols());
        for e in 0..src.len() {
            let we = w.as_slice()[e];
            let msg = m.row(src[e]);
            for (o, x) in v.row_mut(dst[e]).iter_mut().zip(msg) {
                *o += we * x;
            }
        }
        self.push(v, Op::EdgeAggregate { weights, messages, src, dst })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Summed binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, probs: Var, targets: Matrix, eps: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.shape(), targets.shape(), "bce shape mismatch");
        let loss = bce_value(p.as_slice(), targets.as_slice(), eps);
        self.push(Matrix::filled(1, 1, loss), Op::Bce { probs, targets, eps })
    }

    /// Back-propagates from the scalar `root` and collects parameter gradients.
    pub fn backward(&self, root: Var, n_params: usize) -> Grads {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads = Grads::new(n_params);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf(Some(pid)) => grads.accumulate(*pid, &g),
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_at(self.value(*a));
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).collect();
                    let gb: Vec<f64> = g.as_slice().iter().zip(x.as_slice()).map(|(p, q)| p * q).collect();
                    accumulate(&mut adj, *a, Matrix::from_vec(g.rows(), g.cols(), ga));
                    accumulate(&mut adj, *b, Matrix::from_vec(g.rows(), g.cols(), gb));
                }
                Op::RowSum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.as_slice()[r];
                        ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::AddRow(a, r) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, x) in gr.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut adj, *r, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale_assign(*s);
                    accumulate(&mut adj, *a, ga);
                }
                Op::Act(a, act) => {
                    let x = self.value(*a).as_slice();
                    let y = node.value.as_slice();
                    let mut ga = g;
                    for ((gi, &xi), &yi) in ga.as_mut_slice().iter_mut().zip(x).zip(y) {
                        *gi *= act.derivative(xi, yi);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::Gather(a, rows) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (acc, x) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let gp = Matrix::from_vec(
                            rows,
                            cols,
                            g.as_slice()[offset * cols..(offset + rows) * cols].to_vec(),
                        );
                        offset += rows;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yi), &gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - inner);
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SegmentSoftmax(a, segment) => {
                    let y = node.value.as_slice();
                    let gs = g.as_slice();
                    let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = vec![0.0; n_seg];
                    for (e, &s) in segment.iter().enumerate() {
                        inner[s] += y[e] * gs[e];
                    }
                    let ga: Vec<f64> =
                        segment.iter().enumerate().map(|(e, &s)| y[e] * (gs[e] - inner[s])).collect();
                    accumulate(&mut adj, *a, Matrix::col_vector(ga));
                }
                Op::EdgeAggregate { weights, messages, src, dst } => {
                    let w = self.value(*weights);
                    let m = self.value(*messages);
                    let mut gw = Matrix::zeros(src.len(), 1);
                    let mut gm = Matrix::zeros(m.rows(), m.cols());
                    for e in 0..src.len() {
                        let gd = g.row(dst[e]);
                        gw.as_mut_slice()[e] = crate::linalg::dot(gd, m.row(src[e]));
                        let we = w.as_slice()[e];
                        for (acc, x) in gm.row_mut(src[e]).iter_mut().zip(gd) {
                            *acc += we * x;
                        }
                    }
                    accumulate(&mut adj, *weights, gw);
                    accumulate(&mut adj, *messages, gm);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(rows, cols, g[(0, 0)]));
                }
                Op::Bce { probs, targets, eps } => {
                    let p = self.value(*probs);
                    let scale = g[(0, 0)];
                    let data = p
                        .as_slice()
                        .iter()
                        .zip(targets.as_slice())
                        .map(|(&pi, &ti)| {
                            if pi <= *eps || pi >= 1.0 - eps {
                                0.0
                            } else {
                                scale * (pi - ti) / (pi * (1.0 - pi))
                            }
                        })
                        .collect();
                    accumulate(&mut adj, *probs, Matrix::from_vec(p.rows(), p.cols(), data));
                }
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn bce_value(probs: &[f64], targets: &[f64], eps: f64) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * math::ln(p) + (1.0 - t) * math::ln(1.0 - p))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Central-difference check of every parameter in `store` for the scalar built by `f`.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let root = f(&mut tape, store);
        let grads = tape.backward(root, store.len());
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).len();
            for k in 0..n {
                let orig = store.get(id).as_slice()[k];
                store.get_mut(id).as_mut_slice()[k] = orig + h;
                let mut t = Tape::new();
                let r = f(&mut t, store);
                let plus = t.value(r)[(0, 0)];
                store.get_mut(id).as_mut_slice()[k] = orig - h;
                let mut t = Tape::new();
                let r = f(&mut t, store);
                let minus = t.value(r)[(0, 0)];
                store.get_mut(id).as_mut_slice()[k] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g.as_slice()[k]);
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "{}[{k}]: analytic {analytic} numeric {numeric}",
                    store.name(id)
                );
            }
        }
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add_glorot(1, "a", 3, 4);
        s.add_glorot(1, "b", 4, 2);
        s.add_glorot(1, "row", 1, 2);
        s.add_glorot(1, "c", 3, 4);
        s
    }

    #[test]
    fn matmul_activation_chain() {
        let mut s = store();
        check(&mut s, |t, s| {
            let a = t.param(s, s.id("a").unwrap());
            let b = t.param(s, s.id("b").unwrap());
            let r = t.param(s, s.id("row").unwrap());
            let ab = t.matmul(a, b);
            let ab = t.add_row(ab, r);
            let e = t.activation(ab, Activation::Elu);
            let y = t.activation(e, Activation::Tanh);
            t.sum(y)
        });
    }

    #[test]
    fn bt_transpose_and_concat() {
        let mut s = store();
        check(&mut s, |t, s| {
            let a = t.param(s, s.id("a").unwrap());
            let c = t.param(s, s.id("c").unwrap());
            let m = t.matmul_bt(a, c);
            let m = t.transpose(m);
            let sm = t.row_softmax(m);
            let cat = t.concat_cols(&[sm, a]);
            let rows = t.concat_rows(&[cat, cat]);
            let g = t.gather(rows, Rc::from(vec![0usize, 5, 5, 2]));
            let sig = t.activation(g, Activation::Sigmoid);
            let sq = t.mul(sig, g);
            let rs = t.row_sum(sq);
            let sc = t.scale(sig, 1.5);
            let sc = t.sum(sc);
            let rs = t.sum(rs);
            t.add(sc, rs)
        });
    }

    #[test]
    fn segment_softmax_and_edge_aggregation() {
        let mut s = ParamStore::new();
        s.add_glorot(3, "logits", 5, 1);
        s.add_glorot(3, "msg", 3, 2);
        let seg: Rc<[usize]> = Rc::from(vec![0usize, 0, 1, 1, 2]);
        let src: Rc<[usize]> = Rc::from(vec![0usize, 1, 1, 2, 2]);
        check(&mut s, move |t, s| {
            let l = t.param(s, s.id("logits").unwrap());
            let l = t.activation(l, Activation::LeakyRelu(0.2));
            let w = t.segment_softmax(l, seg.clone());
            let m = t.param(s, s.id("msg").unwrap());
            let out = t.edge_aggregate(w, m, src.clone(), seg.clone(), 3);
            let sq = t.matmul_bt(out, out);
            t.sum(sq)
        });
    }

    #[test]
    fn bce_gradient() {
        let mut s = ParamStore::new();
        s.add_glorot(9, "z", 2, 3);
        let targets = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        check(&mut s, move |t, s| {
            let z = t.param(s, s.id("z").unwrap());
            let p = t.activation(z, Activation::Sigmoid);
            t.bce(p, targets.clone(), 1e-7)
        });
    }

    #[test]
    fn segment_softmax_rows_sum_to_one() {
        let mut rng = rng::stream(5, "seg");
        let mut t = Tape::new();
        let x = t.constant(Matrix::uniform(6, 1, 50.0, &mut rng));
        let y = t.segment_softmax(x, Rc::from(vec![1usize, 0, 1, 2, 2, 1]));
        let v = t.value(y).as_slice();
        assert!((v[0] + v[2] + v[5] - 1.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[3] + v[4] - 1.0).abs() < 1e-12);
    }
}
