//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the indices of its inputs. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients. Parameters enter the tape once per graph through
//! [`Graph::param`], so their gradient is the sum over every use.
//!
//! Everything is a 2-D matrix. Row vectors (`1 × n`) stand in for vectors and
//! `1 × 1` matrices for scalars.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SoftmaxXent(Var, Vec<usize>),
    BceLogits(Var, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_row_in_place(mut row: ndarray::ArrayViewMut1<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|v| v / sum);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant input. Gradients reaching it are computed but discarded.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Mat::zeros((rows, cols)))
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        self.constant(Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row"))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a (m × n) + row (1 × n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    /// `a (m × n) * row (1 × n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) * self.value(row);
        self.push(value, Op::MulRow(a, row))
    }

    /// `a * s` where `s` is a `1 × 1` variable.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a) * k;
        self.push(value, Op::MulScalarVar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        self.push(value, Op::AddScalar(a))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).mapv(f);
        self.push(value, op)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, f64::recip, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for row in value.rows_mut() {
            softmax_row_in_place(row);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(value, Op::LayerNormRows(a, eps))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Row gather; indices may repeat (embeddings, length regulation).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let cols = src.ncols();
        let mut value = Mat::zeros((indices.len(), cols));
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Mat::from_elem((1, 1), m.sum() / m.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Mean squared error between two equally shaped matrices.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), labels.len(), "one label per row");
        let mut total = 0.0;
        for (row, &y) in l.rows().into_iter().zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Mat::from_elem((1, 1), total / labels.len() as f64);
        self.push(value, Op::SoftmaxXent(logits, labels.to_vec()))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let l = self.value(logits);
        assert_eq!(l.dim(), targets.dim());
        let total: f64 = l
            .iter()
            .zip(targets.iter())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Mat::from_elem((1, 1), total / l.len() as f64);
        self.push(value, Op::BceLogits(logits, targets))
    }

    /// Back-propagates from the `1 × 1` node `loss` and returns the gradient
    /// of every parameter that took part in the graph.
    pub fn backward(&self, loss: Var) -> HashMap<ParamId, Mat> {
        let grads = self.backward_all(loss);
        self.params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].clone().map(|g| (id, g)))
            .collect()
    }

    /// Gradients of every node; `None` where the loss does not depend on it.
    pub fn backward_all(&self, loss: Var) -> Vec<Option<Mat>> {
        assert_eq!(self.shape(loss), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, r) => {
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, &g * self.value(*r));
                    accumulate(&mut grads, *r, dr);
                }
                Op::MulScalarVar(a, s) => {
                    let k = self.scalar(*s);
                    let ds = (&g * self.value(*a)).sum();
                    accumulate(&mut grads, *a, &g * k);
                    accumulate(&mut grads, *s, Mat::from_elem((1, 1), ds));
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, &g * *k),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Sigmoid(a) => accumulate(&mut grads, *a, &g * &y.mapv(|s| s * (1.0 - s))),
                Op::Tanh(a) => accumulate(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t)),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Softplus(a) => {
                    accumulate(&mut grads, *a, &g * &self.value(*a).mapv(sigmoid));
                }
                Op::Exp(a) => accumulate(&mut grads, *a, &g * y),
                Op::Ln(a) => accumulate(&mut grads, *a, &g / self.value(*a)),
                Op::Recip(a) => accumulate(&mut grads, *a, -(&g * &y.mapv(|r| r * r))),
                Op::Square(a) => accumulate(&mut grads, *a, &g * &(self.value(*a) * 2.0)),
                Op::SoftmaxRows(a) => {
                    let mut dx = g.clone();
                    for ((mut d, gr), yr) in dx.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                        let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                        for ((dv, gv), yv) in d.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::LayerNormRows(a, eps) => {
                    let x = self.value(*a);
                    let mut dx = Mat::zeros(x.dim());
                    for ((mut d, gr), (xr, yr)) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(g.rows())
                        .zip(x.rows().into_iter().zip(y.rows()))
                    {
                        let n = xr.len() as f64;
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gm = gr.sum() / n;
                        let gym = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((dv, gv), yv) in d.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                            *dv = inv * (gv - gm - yv * gym);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, full);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Mat::zeros(self.value(*a).dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, full);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::GatherRows(a, idx) => {
                    let mut full = Mat::zeros(self.value(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = full.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *a, full);
                }
                Op::Sum(a) => {
                    let k = g[[0, 0]];
                    accumulate(&mut grads, *a, Mat::from_elem(self.value(*a).dim(), k));
                }
                Op::Mean(a) => {
                    let m = self.value(*a);
                    let k = g[[0, 0]] / m.len() as f64;
                    accumulate(&mut grads, *a, Mat::from_elem(m.dim(), k));
                }
                Op::SoftmaxXent(a, labels) => {
                    let k = g[[0, 0]] / labels.len() as f64;
                    let mut dx = self.value(*a).clone();
                    for (mut row, &lab) in dx.rows_mut().into_iter().zip(labels) {
                        softmax_row_in_place(row.view_mut());
                        row[lab] -= 1.0;
                        row.mapv_inplace(|v| v * k);
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::BceLogits(a, t) => {
                    let x = self.value(*a);
                    let k = g[[0, 0]] / x.len() as f64;
                    let mut dx = x.mapv(sigmoid);
                    dx -= t;
                    dx *= k;
                    accumulate(&mut grads, *a, dx);
                }
            }
            grads[i] = Some(g);
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_gradient_by_hand() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0, 2.0], [3.0, 4.0]]);
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let b = g.constant(array![[1.0], [-1.0]]);
        let y = g.matmul(av, b);
        let loss = g.sum(y);
        let grads = g.backward(loss);
        assert_eq!(grads[&a], array![[1.0, -1.0], [1.0, -1.0]]);
    }

    #[test]
    fn parameter_used_twice_accumulates() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[2.0]]);
        let mut g = Graph::new();
        let x = g.param(&store, a);
        let x2 = g.param(&store, a);
        assert_eq!(x, x2);
        let y = g.mul(x, x2);
        let grads = g.backward(y);
        assert_eq!(grads[&a], array![[4.0]]);
    }

    #[test]
    fn softmax_cross_entropy_of_uniform_logits_is_ln_classes() {
        let mut g = Graph::new();
        let l = g.zeros(3, 7);
        let loss = g.softmax_cross_entropy(l, &[0, 3, 6]);
        assert!((g.scalar(loss) - 7f64.ln()).abs() < 1e-12);
    }
}
