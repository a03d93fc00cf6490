//! Reverse-mode differentiation over matrix operations.
//!
//! A [`Tape`] records the forward computation of one example. Parameters are
//! borrowed from a [`ParamStore`], never copied; `backward` adds the example's
//! gradient into a caller-owned buffer so a mini-batch accumulates without
//! reallocating parameter-sized matrices.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::{matmul_acc, matmul_t_acc, t_matmul_acc, Mat};

const LN_EPS: f64 = 1e-5;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> ParamId {
        self.names.push(name.to_string());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Zeroed gradient buffer with one matrix per parameter.
    pub fn zeros_like(&self) -> Vec<Mat> {
        self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    MeanRows(Var),
    SliceRows(Var, usize),
    CrossEntropy(Var, Vec<usize>, Vec<f64>),
    BceLogits(Var, f64),
}

struct Node {
    value: Option<Mat>,
    /// Softmax output or layer-norm inverse std, kept for backward.
    aux: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Tape<'p> {
        Tape { params, nodes: Vec::with_capacity(64) }
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params.tensors[*i],
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), aux: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_aux(&mut self, value: Mat, aux: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), aux: Some(aux), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, aux: None, op: Op::Param(id.0), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, v.cols), "add_row shape");
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let limit = if causal { (i + 1).min(x.cols) } else { x.cols };
            let row = &x.row(i)[..limit];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = v.row_mut(i);
            let mut s = 0.0;
            for (o, &z) in out[..limit].iter_mut().zip(row) {
                *o = math::exp(z - max);
                s += *o;
            }
            for o in &mut out[..limit] {
                *o /= s;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::Softmax(a), ng)
    }

    /// Per-row standardization without learned gain or bias.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols as f64;
        let mut v = Mat::zeros(x.rows, x.cols);
        let mut inv = Mat::zeros(x.rows, 1);
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / math::sqrt(var + LN_EPS);
            inv.data[i] = inv_std;
            for (o, z) in v.row_mut(i).iter_mut().zip(row) {
                *o = (z - mean) * inv_std;
            }
        }
        let ng = self.ng(a);
        self.push_aux(v, inv, Op::LayerNorm(a), ng)
    }

    /// Rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros(indices.len(), t.cols);
        for (i, &ix) in indices.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(ix));
        }
        let ng = self.ng(table);
        self.push(v, Op::Gather(table, indices.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat_rows width");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.rows, y.rows, "concat_cols height");
        let mut v = Mat::zeros(x.rows, x.cols + y.cols);
        for i in 0..x.rows {
            let out = v.row_mut(i);
            out[..x.cols].copy_from_slice(x.row(i));
            out[x.cols..].copy_from_slice(y.row(i));
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::ConcatCols(a, b), ng)
    }

    /// `1 x n` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(1, x.cols);
        for i in 0..x.rows {
            for (o, z) in v.data.iter_mut().zip(x.row(i)) {
                *o += z;
            }
        }
        v.scale(1.0 / x.rows as f64);
        let ng = self.ng(a);
        self.push(v, Op::MeanRows(a), ng)
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[target_i])` as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows, targets.len(), "one target per row");
        assert_eq!(targets.len(), weights.len());
        let mut probs = Mat::zeros(z.rows, z.cols);
        let mut loss = 0.0;
        for i in 0..z.rows {
            let row = z.row(i);
            let lse = math::logsumexp(row);
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = math::exp(x - lse);
            }
            loss += weights[i] * (lse - row[targets[i]]);
        }
        let ng = self.ng(logits);
        self.push_aux(
            Mat::scalar(loss),
            probs,
            Op::CrossEntropy(logits, targets.to_vec(), weights.to_vec()),
            ng,
        )
    }

    /// Binary cross-entropy of `sigmoid(z)` against `target`, computed from the logit.
    pub fn bce_logits(&mut self, z: Var, target: f64) -> Var {
        let x = self.scalar(z);
        let loss = math::softplus(x) - target * x;
        let ng = self.ng(z);
        self.push(Mat::scalar(loss), Op::BceLogits(z, target), ng)
    }

    /// Sum of 1x1 nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for p in &parts[1..] {
            acc = self.add(acc, *p);
        }
        acc
    }

    /// Accumulates `d loss / d param` into `grads` (one matrix per parameter).
    pub fn backward(&self, loss: Var, grads: &mut [Mat]) {
        assert_eq!(grads.len(), self.params.tensors.len(), "gradient buffer size");
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param(i) => grads[*i].add_assign(&dy),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        self.accumulate(&mut g, grads, *a, |t| matmul_t_acc(&dy, bv, t));
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        self.accumulate(&mut g, grads, *b, |t| t_matmul_acc(av, &dy, t));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        self.accumulate(&mut g, grads, *a, |t| matmul_acc(&dy, bv, t));
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        self.accumulate(&mut g, grads, *b, |t| t_matmul_acc(&dy, av, t));
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut g, grads, *a, |t| t.add_assign(&dy));
                    self.accumulate(&mut g, grads, *b, |t| t.add_assign(&dy));
                }
                Op::AddRow(a, r) => {
                    self.accumulate(&mut g, grads, *a, |t| t.add_assign(&dy));
                    self.accumulate(&mut g, grads, *r, |t| {
                        for i in 0..dy.rows {
                            for (o, d) in t.data.iter_mut().zip(dy.row(i)) {
                                *o += d;
                            }
                        }
                    });
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut g, grads, *a, |t| t.scaled_add_assign(*s, &dy));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    self.accumulate(&mut g, grads, *a, |t| {
                        for ((o, d), z) in t.data.iter_mut().zip(&dy.data).zip(&x.data) {
                            if *z > 0.0 {
                                *o += d;
                            }
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    self.accumulate(&mut g, grads, *a, |t| {
                        for i in 0..y.rows {
                            let yr = y.row(i);
                            let dr = dy.row(i);
                            let inner: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                            for ((o, p), d) in t.row_mut(i).iter_mut().zip(yr).zip(dr) {
                                *o += p * (d - inner);
                            }
                        }
                    });
                }
                Op::LayerNorm(a) => {
                    let y = node.value.as_ref().unwrap();
                    let inv = node.aux.as_ref().unwrap();
                    self.accumulate(&mut g, grads, *a, |t| {
                        let n = y.cols as f64;
                        for i in 0..y.rows {
                            let yr = y.row(i);
                            let dr = dy.row(i);
                            let mean_d = dr.iter().sum::<f64>() / n;
                            let mean_dy = yr.iter().zip(dr).map(|(p, d)| p * d).sum::<f64>() / n;
                            let s = inv.data[i];
                            for ((o, p), d) in t.row_mut(i).iter_mut().zip(yr).zip(dr) {
                                *o += s * (d - mean_d - p * mean_dy);
                            }
                        }
                    });
                }
                Op::Gather(table, indices) => {
                    self.accumulate(&mut g, grads, *table, |t| {
                        for (i, &ix) in indices.iter().enumerate() {
                            for (o, d) in t.row_mut(ix).iter_mut().zip(dy.row(i)) {
                                *o += d;
                            }
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let cols = dy.cols;
                        let slice = &dy.data[offset * cols..(offset + rows) * cols];
                        self.accumulate(&mut g, grads, *p, |t| {
                            for (o, d) in t.data.iter_mut().zip(slice) {
                                *o += d;
                            }
                        });
                        offset += rows;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols;
                    self.accumulate(&mut g, grads, *a, |t| {
                        for i in 0..dy.rows {
                            for (o, d) in t.row_mut(i).iter_mut().zip(&dy.row(i)[..ac]) {
                                *o += d;
                            }
                        }
                    });
                    self.accumulate(&mut g, grads, *b, |t| {
                        for i in 0..dy.rows {
                            for (o, d) in t.row_mut(i).iter_mut().zip(&dy.row(i)[ac..]) {
                                *o += d;
                            }
                        }
                    });
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows;
                    let s = 1.0 / rows as f64;
                    self.accumulate(&mut g, grads, *a, |t| {
                        for i in 0..rows {
                            for (o, d) in t.row_mut(i).iter_mut().zip(&dy.data) {
                                *o += s * d;
                            }
                        }
                    });
                }
                Op::SliceRows(a, start) => {
                    let cols = dy.cols;
                    self.accumulate(&mut g, grads, *a, |t| {
                        for (o, d) in t.data[start * cols..(start + dy.rows) * cols].iter_mut().zip(&dy.data) {
                            *o += d;
                        }
                    });
                }
                Op::CrossEntropy(logits, targets, weights) => {
                    let probs = node.aux.as_ref().unwrap();
                    let up = dy.data[0];
                    self.accumulate(&mut g, grads, *logits, |t| {
                        for i in 0..probs.rows {
                            let w = weights[i] * up;
                            for (o, p) in t.row_mut(i).iter_mut().zip(probs.row(i)) {
                                *o += w * p;
                            }
                            t.data[i * t.cols + targets[i]] -= w;
                        }
                    });
                }
                Op::BceLogits(z, target) => {
                    let x = self.scalar(*z);
                    let d = (math::sigmoid(x) - target) * dy.data[0];
                    self.accumulate(&mut g, grads, *z, |t| t.data[0] += d);
                }
            }
        }
    }

    fn accumulate(
        &self,
        g: &mut [Option<Mat>],
        grads: &mut [Mat],
        target: Var,
        f: impl FnOnce(&mut Mat),
    ) {
        let node = &self.nodes[target.0];
        if !node.needs_grad {
            return;
        }
        if let Op::Param(i) = node.op {
            f(&mut grads[i]);
            return;
        }
        let slot = &mut g[target.0];
        if slot.is_none() {
            let v = self.value(target);
            *slot = Some(Mat::zeros(v.rows, v.cols));
        }
        f(slot.as_mut().unwrap());
    }
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors, 0 when both vanish.
pub fn relative_error(a: &[Mat], b: &[Mat]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data.iter().zip(&y.data) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    let denom = math::sqrt(na).max(math::sqrt(nb));
    if denom == 0.0 {
        0.0
    } else {
        math::sqrt(diff) / denom
    }
}

/// Central finite-difference gradient of `loss` with respect to every
/// parameter in `params`. Meant for gradient checks on small models.
pub fn finite_difference(
    params: &ParamStore,
    eps: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<Mat> {
    let mut work = params.clone();
    let mut out = params.zeros_like();
    for t in 0..work.tensors.len() {
        for i in 0..work.tensors[t].data.len() {
            let orig = work.tensors[t].data[i];
            work.tensors[t].data[i] = orig + eps;
            let plus = loss(&work);
            work.tensors[t].data[i] = orig - eps;
            let minus = loss(&work);
            work.tensors[t].data[i] = orig;
            out[t].data[i] = (plus - minus) / (2.0 * eps);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_from_seed};

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = rng_from_seed(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| normal(&mut rng)).collect())
    }

    /// Exercises every op in one graph and compares against finite differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut ps = ParamStore::new();
        let table = ps.add("table", random(6, 4, 1));
        let w = ps.add("w", random(4, 4, 2));
        let b = ps.add("b", random(1, 4, 3));
        let head = ps.add("head", random(8, 3, 4));
        let x_const = random(2, 4, 5);

        let build = |ps: &ParamStore, grads: Option<&mut Vec<Mat>>| -> f64 {
            let mut t = Tape::new(ps);
            let tab = t.param(table);
            let rows = t.gather(tab, &[0, 3, 3, 5]);
            let c = t.constant(x_const.clone());
            let x = t.concat_rows(&[rows, c]);
            let wv = t.param(w);
            let h = t.matmul(x, wv);
            let bv = t.param(b);
            let h = t.add_row(h, bv);
            let h = t.layer_norm(h);
            let scores = t.matmul_t(h, x);
            let scores = t.scale(scores, 0.5);
            let att = t.softmax_rows(scores, true);
            let mixed = t.matmul(att, x);
            let mixed = t.relu(mixed);
            let mixed = t.add(mixed, h);
            let pooled = t.mean_rows(mixed);
            let last = t.slice_rows(mixed, 5, 1);
            let both = t.concat_cols(pooled, last);
            let hv = t.param(head);
            let logits = t.matmul(both, hv);
            let ce = t.cross_entropy(logits, &[2], &[0.7]);
            let three = t.slice_rows(mixed, 1, 3);
            let z = t.mean_rows(three);
            let z = t.matmul(z, wv);
            let z = t.mean_rows(z);
            let z = t_col0(&mut t, z);
            let bce = t.bce_logits(z, 1.0);
            let loss = t.sum_scalars(&[ce, bce]);
            if let Some(g) = grads {
                t.backward(loss, g);
            }
            t.scalar(loss)
        };

        let mut analytic = ps.zeros_like();
        build(&ps, Some(&mut analytic));
        let numeric = finite_difference(&ps, 1e-6, |p| build(p, None));
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "relative error {err}");
    }

    // Reduces a 1xn row to its first entry through a matmul with a constant selector.
    fn t_col0(t: &mut Tape<'_>, row: Var) -> Var {
        let n = t.value(row).cols;
        let mut sel = Mat::zeros(n, 1);
        sel.data[0] = 1.0;
        let s = t.constant(sel);
        t.matmul(row, s)
    }

    #[test]
    fn causal_softmax_masks_future() {
        let ps = ParamStore::new();
        let mut t = Tape::new(&ps);
        let x = t.constant(Mat::zeros(3, 3));
        let y = t.softmax_rows(x, true);
        let v = t.value(y);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
    }
}
