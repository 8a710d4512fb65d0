//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly and records how to
//! propagate gradients back to its inputs. Parameters are read from a
//! [`ParamStore`] and their gradients come back as [`Gradients`].

use std::rc::Rc;

use crate::error::{OridError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Gelu(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax(Var),
    Normalize { a: Var, inv_std: Vec<f64> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    SumAll(Var),
    Gather { a: Var, index: Rc<Vec<Option<usize>>>, group: usize },
    CrossEntropy { logits: Var, targets: Rc<Vec<Option<usize>>>, probs: Mat, count: usize },
    Cosine { a: Var, b: Var },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter touched by the graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients { grads: vec![None; params.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Entry of the gradient, or zero when the parameter was not reached.
    pub fn value(&self, id: ParamId, idx: usize) -> f64 {
        self.grads[id.0].as_ref().map_or(0.0, |g| g.data()[idx])
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// Evaluation tape bound to a parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.params.value(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Mat::zeros(va.rows(), vb.rows());
        gemm(va, false, vb, true, &mut out, 0.0);
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.shape(), (1, va.cols()), "add_row expects a 1xN row");
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    /// Multiplies every row of `a` elementwise by the `1 x cols` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(vb.shape(), (1, va.cols()), "mul_row expects a 1xN row");
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(vb.data()) {
                *o *= x;
            }
        }
        self.push(out, Op::MulRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies `a` by the `1 x 1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects a 1x1 scale");
        let k = self.scalar(s);
        let out = self.value(a).scale(k);
        self.push(out, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
        self.push(out, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Row-wise softmax. Entries where `mask` is false get exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let out = softmax_rows(self.value(a), mask);
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let va = self.value(a);
        let cols = va.cols() as f64;
        let mut out = va.clone();
        let mut inv_std = Vec::with_capacity(va.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::Normalize { a, inv_std })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Mat::from_vec(rows, cols, data).expect("concat_rows");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.rows(), "slice_rows out of range");
        let cols = va.cols();
        let out = Mat::from_vec(len, cols, va.data()[start * cols..(start + len) * cols].to_vec())
            .expect("slice_rows");
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols(), "slice_cols out of range");
        let out = Mat::from_fn(va.rows(), len, |r, c| va.get(r, start + c));
        self.push(out, Op::SliceCols(a, start))
    }

    /// Mean over rows, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Mat::from_vec(1, va.cols(), va.mean_rows()).expect("mean_rows");
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::filled(1, 1, self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Row gather: output row `r` is the concatenation over `j < group` of
    /// `a[index[r * group + j]]`, with `None` contributing zeros.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<Option<usize>>>, group: usize) -> Var {
        let va = self.value(a);
        assert!(group > 0 && index.len().is_multiple_of(group), "gather index length");
        let c = va.cols();
        let rows = index.len() / group;
        let mut out = Mat::zeros(rows, group * c);
        for r in 0..rows {
            let orow = out.row_mut(r);
            for j in 0..group {
                if let Some(src) = index[r * group + j] {
                    orow[j * c..(j + 1) * c].copy_from_slice(va.row(src));
                }
            }
        }
        self.push(out, Op::Gather { a, index, group })
    }

    /// Mean token cross-entropy over positions whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<Vec<Option<usize>>>) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), targets.len(), "one target per logits row");
        let probs = softmax_rows(vl, None);
        let mut total = 0.0;
        let mut count = 0;
        for (t, tgt) in targets.iter().enumerate() {
            if let Some(k) = *tgt {
                total -= log_softmax_at(vl.row(t), k);
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(Mat::filled(1, 1, loss), Op::CrossEntropy { logits, targets, probs, count })
    }

    /// Cosine similarity of two `1 x n` rows.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(OridError::Shape(format!("cosine of {:?} and {:?}", va.shape(), vb.shape())));
        }
        let (na, nb) = (va.frobenius(), vb.frobenius());
        if na == 0.0 || nb == 0.0 {
            return Err(OridError::DegenerateEmbedding);
        }
        let dot: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Mat::filled(1, 1, dot / (na * nb)), Op::Cosine { a, b }))
    }

    /// Back-propagates from the `1 x 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        let mut out = Gradients { grads: vec![None; self.params.len()] };

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.grads[id.0] = Some(dy),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = Mat::zeros(va.rows(), va.cols());
                    gemm(&dy, false, vb, true, &mut da, 0.0);
                    let mut db = Mat::zeros(vb.rows(), vb.cols());
                    gemm(va, true, &dy, false, &mut db, 0.0);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = Mat::zeros(va.rows(), va.cols());
                    gemm(&dy, false, vb, false, &mut da, 0.0);
                    let mut db = Mat::zeros(vb.rows(), vb.cols());
                    gemm(&dy, true, va, false, &mut db, 0.0);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Transpose(a) => acc(&mut grads, *a, dy.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, dy.clone());
                    acc(&mut grads, *a, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, dy.scale(-1.0));
                    acc(&mut grads, *a, dy);
                }
                Op::AddRow(a, b) => {
                    let db = Mat::from_vec(1, dy.cols(), column_sums(&dy)).expect("row");
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, dy);
                }
                Op::MulRow(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = dy.clone();
                    let mut db = vec![0.0; vb.cols()];
                    for r in 0..da.rows() {
                        let arow = va.row(r);
                        for (c, d) in da.row_mut(r).iter_mut().enumerate() {
                            db[c] += *d * arow[c];
                            *d *= vb.data()[c];
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, Mat::from_vec(1, db.len(), db).expect("row"));
                }
                Op::Mul(a, b) => {
                    let da = dy.zip_map(self.value(*b), |g, y| g * y);
                    let db = dy.zip_map(self.value(*a), |g, x| g * x);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MulScalar(a, s) => {
                    let k = self.scalar(*s);
                    let ds: f64 = dy.data().iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    acc(&mut grads, *s, Mat::filled(1, 1, ds));
                    acc(&mut grads, *a, dy.scale(k));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, dy.scale(*s)),
                Op::AddConst(a) => acc(&mut grads, *a, dy),
                Op::Gelu(a) => {
                    let da = dy.zip_map(self.value(*a), |g, x| {
                        let x2 = x * x;
                        let t = (GELU_C * (x + GELU_K * x2 * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x2);
                        g * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Elu(a) => {
                    let da = dy.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { g * x.exp() });
                    acc(&mut grads, *a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let da = dy.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { g * s });
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = dy.zip_map(&node.value, |g, y| g * y * (1.0 - y));
                    acc(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut da = dy.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dot: f64 = da.row(r).iter().zip(yr).map(|(g, p)| g * p).sum();
                        for (g, p) in da.row_mut(r).iter_mut().zip(yr) {
                            *g = p * (*g - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Normalize { a, inv_std } => {
                    let y = &node.value;
                    let n = y.cols() as f64;
                    let mut da = dy.clone();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let g = da.row_mut(r);
                        let mean_g = g.iter().sum::<f64>() / n;
                        let mean_gy = g.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for (gi, yi) in g.iter_mut().zip(yr) {
                            *gi = inv_std[r] * (*gi - mean_g - yi * mean_gy);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let cols = dy.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let part = Mat::from_vec(rows, cols, dy.data()[start * cols..(start + rows) * cols].to_vec())
                            .expect("concat grad");
                        acc(&mut grads, p, part);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let part = Mat::from_fn(dy.rows(), cols, |r, c| dy.get(r, start + c));
                        acc(&mut grads, p, part);
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let mut da = Mat::zeros(va.rows(), va.cols());
                    let c = va.cols();
                    da.data_mut()[start * c..start * c + dy.len()].copy_from_slice(dy.data());
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut da = Mat::zeros(va.rows(), va.cols());
                    for r in 0..dy.rows() {
                        da.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let inv = 1.0 / rows as f64;
                    let da = Mat::from_fn(rows, cols, |_, c| dy.data()[c] * inv);
                    acc(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let (rows, cols) = self.shape(*a);
                    acc(&mut grads, *a, Mat::filled(rows, cols, dy.data()[0]));
                }
                Op::Gather { a, index, group } => {
                    let (rows, c) = self.shape(*a);
                    let mut da = Mat::zeros(rows, c);
                    for r in 0..dy.rows() {
                        let grow = dy.row(r);
                        for j in 0..*group {
                            if let Some(src) = index[r * group + j] {
                                for (d, g) in da.row_mut(src).iter_mut().zip(&grow[j * c..(j + 1) * c]) {
                                    *d += g;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let mut dl = Mat::zeros(probs.rows(), probs.cols());
                    if *count > 0 {
                        let k = dy.data()[0] / *count as f64;
                        for (t, tgt) in targets.iter().enumerate() {
                            if let Some(j) = *tgt {
                                let row = dl.row_mut(t);
                                for (d, p) in row.iter_mut().zip(probs.row(t)) {
                                    *d = p * k;
                                }
                                row[j] -= k;
                            }
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::Cosine { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (na, nb) = (va.frobenius(), vb.frobenius());
                    let cos = node.value.data()[0];
                    let g = dy.data()[0];
                    let da = Mat::from_fn(1, va.cols(), |_, i| {
                        g * (vb.data()[i] / (na * nb) - cos * va.data()[i] / (na * na))
                    });
                    let db = Mat::from_fn(1, vb.cols(), |_, i| {
                        g * (va.data()[i] / (na * nb) - cos * vb.data()[i] / (nb * nb))
                    });
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log softmax(row)[k]`.
pub fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[k] - lse
}

pub fn softmax_rows(m: &Mat, mask: Option<&[bool]>) -> Mat {
    if let Some(mask) = mask {
        assert_eq!(mask.len(), m.len(), "softmax mask size");
    }
    let mut out = m.clone();
    let cols = m.cols();
    for r in 0..m.rows() {
        let allowed = |c: usize| mask.is_none_or(|mk| mk[r * cols + c]);
        let row = out.row_mut(r);
        let max = (0..cols).filter(|&c| allowed(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        let mut total = 0.0;
        for (c, x) in row.iter_mut().enumerate() {
            if allowed(c) {
                *x = (*x - max).exp();
                total += *x;
            } else {
                *x = 0.0;
            }
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}
